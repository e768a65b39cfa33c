"""Shared fixtures: synthetic cluster data with planted label noise.

The generators here are deliberately rigid.  Complexity scoring separates a
mislabeled point from its clean neighbours only when the clean points cover
for each other while the flip sits alone inside hostile territory, so the
samplers enforce spacing, attachment, and an exclusion ring around each
planted flip.  The scoring configuration tuned for that geometry is exported
as module constants and reused by the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from ralkit.data import Dataset, GramPair, KernelSpec, build_gram_pair, median_pairwise_distance

# scoring configuration for noise detection on the planted-cluster family:
# a near-interpolating fit with a narrow kernel makes each flip an expensive
# local spike while densely covered clean points stay cheap to move
COMPLEXITY_LAM = 0.01
COMPLEXITY_BW_FRAC = 0.07
COMPLEX_BW_FRAC = 0.25
COMPLEXITY_EPS_FRAC = 0.05
COMPLEXITY_PROBES = 8


def planted_clusters(
    seed: int,
    n: int = 12,
    margin: float = 1.0,
    r_core: float = 0.35,
    r_excl: float = 0.65,
    r_out: float = 1.3,
    spacing: float = 0.25,
    attach: float = 0.5,
) -> tuple[Dataset, frozenset[int]]:
    """Two Gaussian clusters, one mislabeled core point planted in each.

    Clean points are rejection-sampled into an annulus [r_excl, r_out] around
    their center, pairwise at least `spacing` apart, each within `attach` of a
    clustermate.  The flip sits in the core, so no clean point shares the
    strain of its decision spike.  The band |x0| < margin/2 stays empty.
    """
    rng = np.random.default_rng(seed)
    half = n // 2
    gap = margin + 2.0
    centers = np.array([[+gap / 2, 0.0], [-gap / 2, 0.0]])
    pts: list[np.ndarray] = []
    labs: list[int] = []
    flip_rows = []
    for center, lab, count in ((centers[0], 1, half), (centers[1], -1, n - half)):
        while True:
            core = rng.normal(center, 0.15, 2)
            if abs(core[0]) >= margin / 2 and np.linalg.norm(core - center) <= r_core:
                break
        own = [core]
        tries = 0
        while len(own) < count and tries < 40000:
            tries += 1
            cand = rng.normal(center, 0.55, 2)
            if abs(cand[0]) < margin / 2:
                continue
            r = np.linalg.norm(cand - center)
            if r < r_excl or r > r_out:
                continue
            if any(np.linalg.norm(cand - p) < spacing for p in pts + own):
                continue
            if len(own) > 1 and min(np.linalg.norm(cand - p) for p in own[1:]) > attach:
                continue
            own.append(cand)
        if len(own) < count:
            raise RuntimeError(f"cluster sampling starved at seed {seed}")
        flip_rows.append(len(pts))
        pts += own
        labs += [lab] * count
    X = np.array(pts)
    y = np.array(labs, dtype=np.int8)
    for i in flip_rows:
        y[i] = -y[i]
    return Dataset(features=X, labels=y), frozenset(flip_rows)


def single_flip_eight(seed: int) -> tuple[Dataset, int]:
    """Eight points in two clusters; exactly one label flipped, at index 0."""
    rng = np.random.default_rng(seed)
    centers = np.array([[+1.5, 0.0], [-1.5, 0.0]])
    while True:
        core = rng.normal(centers[0], 0.15, 2)
        if abs(core[0]) >= 0.5 and np.linalg.norm(core - centers[0]) <= 0.35:
            break
    own = [core]
    tries = 0
    while len(own) < 4 and tries < 40000:
        tries += 1
        cand = rng.normal(centers[0], 0.55, 2)
        if abs(cand[0]) < 0.5:
            continue
        r = np.linalg.norm(cand - centers[0])
        if r < 0.65 or r > 1.3:
            continue
        if any(np.linalg.norm(cand - p) < 0.25 for p in own):
            continue
        if len(own) > 1 and min(np.linalg.norm(cand - p) for p in own[1:]) > 0.5:
            continue
        own.append(cand)
    pts = list(own)
    clean: list[np.ndarray] = []
    tries = 0
    while len(clean) < 4 and tries < 40000:
        tries += 1
        cand = rng.normal(centers[1], 0.45, 2)
        if abs(cand[0]) < 0.5:
            continue
        if any(np.linalg.norm(cand - p) < 0.25 for p in pts + clean):
            continue
        if clean and min(np.linalg.norm(cand - p) for p in clean) > 0.5:
            continue
        clean.append(cand)
    pts += clean
    X = np.array(pts)
    y = np.array([1] * 4 + [-1] * 4, dtype=np.int8)
    y[0] = -1
    return Dataset(features=X, labels=y), 0


def complexity_gram(data: Dataset) -> GramPair:
    """Gram pair under the tuned noise-detection bandwidths."""
    med = median_pairwise_distance(data.features)
    return build_gram_pair(
        data,
        KernelSpec("gaussian", COMPLEXITY_BW_FRAC * med),
        KernelSpec("gaussian", COMPLEX_BW_FRAC * med),
    )


def base_norm(data: Dataset, gram: GramPair, lam: float) -> float:
    from ralkit.scmodel import _base_svm

    _, coef, _ = _base_svm(data, gram, lam)
    return float(np.sqrt(max(coef @ gram.K @ coef, 0.0)))


# ---------------------------------------------------------------------------
# Independent oracle for one proximal step of the conic solver


def random_sc_subproblem(seed: int, n_lo: int = 4, n_hi: int = 7):
    """Random small simple-complex program plus a random prox center.

    Returns (program, center, c_u); used by the prox duality and oracle
    agreement tests.
    """
    import scipy.sparse  # noqa: F401  (keeps import error local to callers)

    from ralkit.data import default_kernel_pair
    from ralkit.scmodel import _assemble_sc_program
    from ralkit.solver import ConicPoint

    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi))
    X = rng.standard_normal((n, 2))
    y = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)
    data = Dataset(features=X, labels=y)
    gram = build_gram_pair(data, *default_kernel_pair(data))
    lam = float(rng.uniform(0.3, 2.0))
    program = _assemble_sc_program(
        gram.K, gram.K_o, y.astype(float), lam, 0.5, 1 + seed % 2
    )
    center = ConicPoint(
        rng.standard_normal(program.dim) * 0.4,
        rng.standard_normal(program.beta_dim) * 0.4,
        np.abs(rng.standard_normal(program.n_ineq)) * 0.4,
    )
    c_u = rng.standard_normal(program.dim) * 0.6
    return program, center, c_u


def admm_prox_oracle(program, center, c_u, rho, tol=1e-11, max_iter=20000,
                     sigma=2.0, relax=1.6):
    """Solve one prox step by consensus splitting with exact projections only.

    Deliberately shares no machinery with prox_subproblem: the affine rows are
    absorbed into a prefactored normal matrix, and the cone and the polytope
    each get their own consensus copy, so no alternating-projection error can
    leak into the answer.  Over-relaxed multiplier updates; stops when every
    consensus and affine residual is below tol.
    """
    import scipy.sparse as sp
    from scipy.linalg import cho_factor, cho_solve

    from ralkit.solver import ConicPoint, project_cone, project_polytope

    nE, nI, bd = program.n_eq, program.n_ineq, program.beta_dim
    dim = program.dim
    nw = dim + bd + nI
    rows = []
    if nE:
        rows.append([program.A_E,
                     sp.csr_matrix(-program.B_E) if bd else None,
                     sp.csr_matrix((nE, nI)) if nI else None])
    if nI:
        rows.append([program.A_I,
                     sp.csr_matrix(-program.B_I) if bd else None,
                     sp.eye(nI, format="csr")])
    Mm = sp.bmat(rows).toarray() if rows else np.zeros((0, nw))
    mv = np.concatenate([program.b_E, program.b_I])
    H = np.zeros((nw, nw))
    H[:dim, :dim] = rho * np.eye(dim)
    if bd:
        H[dim:dim + bd, dim:dim + bd] = program.P_quad + rho * program.Q_metric
    if nI:
        H[dim + bd:, dim + bd:] = rho * np.eye(nI)
    c0 = np.concatenate([
        -c_u - rho * center.u,
        (-rho * (program.Q_metric @ center.beta)) if bd else np.zeros(0),
        -rho * center.s,
    ])
    D = np.zeros(nw)
    D[:dim] = 2.0          # u carries a cone copy and a polytope copy
    if nI:
        D[dim + bd:] = 1.0
    fac = cho_factor(H + sigma * (Mm.T @ Mm) + sigma * np.diag(D), lower=True)
    w = np.concatenate([center.u, center.beta, center.s])
    z1 = center.u.copy()
    z2 = center.u.copy()
    z3 = center.s.copy()
    l_aff = np.zeros(mv.size)
    l1 = np.zeros(dim)
    l2 = np.zeros(dim)
    l3 = np.zeros(nI)
    for it in range(1, max_iter + 1):
        rhs = -c0 - Mm.T @ (l_aff - sigma * mv)
        rhs[:dim] += -l1 + sigma * z1 - l2 + sigma * z2
        if nI:
            rhs[dim + bd:] += -l3 + sigma * z3
        w = cho_solve(fac, rhs)
        wu = w[:dim]
        ws = w[dim + bd:]
        wr1 = relax * wu + (1 - relax) * z1
        z1 = project_cone(program, wr1 + l1 / sigma)
        l1 += sigma * (wr1 - z1)
        wr2 = relax * wu + (1 - relax) * z2
        z2 = project_polytope(wr2 + l2 / sigma, program.polytope)
        l2 += sigma * (wr2 - z2)
        if nI:
            wr3 = relax * ws + (1 - relax) * z3
            z3 = np.maximum(wr3 + l3 / sigma, 0.0)
            l3 += sigma * (wr3 - z3)
        res = max(
            float(np.abs(Mm @ w - mv).max()) if mv.size else 0.0,
            float(np.abs(wu - z1).max()),
            float(np.abs(wu - z2).max()),
            float(np.abs(ws - z3).max()) if nI else 0.0,
        )
        l_aff += sigma * (Mm @ w - mv)
        if it % 10 == 0 and res <= tol * (1.0 + float(np.abs(w).max())):
            break
    return ConicPoint(0.5 * (z1 + z2), w[dim:dim + bd].copy(),
                      z3 if nI else np.zeros(0))
