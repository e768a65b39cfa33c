"""Hot numeric kernels with a compiled core and a NumPy fallback.

The compiled extension (``_core``) is preferred; set ``RALKIT_PURE_PYTHON=1``
to force the fallback.  ``IMPLEMENTATION`` records which path is active.
"""

from __future__ import annotations

import os

from . import _impl as _fallback

if os.environ.get("RALKIT_PURE_PYTHON", "") == "1":
    _active = _fallback
    IMPLEMENTATION = "python"
else:
    try:
        from . import _core as _active  # type: ignore[no-redef]

        IMPLEMENTATION = "compiled"
    except ImportError:
        _active = _fallback
        IMPLEMENTATION = "python"

box_qp_maximize = _active.box_qp_maximize
gaussian_gram = _active.gaussian_gram
gaussian_row = _active.gaussian_row
project_capped_simplex = _active.project_capped_simplex
dykstra_caps = _active.dykstra_caps

__all__ = [
    "IMPLEMENTATION",
    "box_qp_maximize",
    "gaussian_gram",
    "gaussian_row",
    "project_capped_simplex",
    "dykstra_caps",
]
