"""ralkit: robust pool-based active learning with a simple-complex kernel pair.

Subpackages map onto the functional areas: data (datasets/kernels/losses),
scmodel (complexity scoring and the supervised simple-complex classifier),
ral (the robust active-learning saddle program), solver (conic prox machinery
and the two first-order solvers), oracle (brute-force references), harness
(simulation loop), service (HTTP labeling sessions), cli.
"""

__version__ = "0.1.0"
