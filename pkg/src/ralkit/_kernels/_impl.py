"""Pure NumPy implementations of the hot numeric kernels.

These mirror the compiled routines in ``_core.pyx`` one for one and are used
whenever the extension is unavailable (or ``RALKIT_PURE_PYTHON=1``).  Every
function is deterministic; none of them allocates RNG state.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "box_qp_maximize",
    "gaussian_gram",
    "gaussian_row",
    "project_capped_simplex",
    "dykstra_caps",
]


def _objective(Q: np.ndarray, w: np.ndarray, a: np.ndarray) -> float:
    return float(w @ a - 0.5 * (a @ Q @ a))


def _free_direction(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    # zero out components pushing through an active bound
    d = g.copy()
    d[(a <= 0.0) & (g < 0.0)] = 0.0
    d[(a >= 1.0) & (g > 0.0)] = 0.0
    return d


def _newton_candidate(Q: np.ndarray, w: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray | None:
    """Exact solve of the free block with pinned coordinates fixed, box-clipped."""
    lower = a <= 1e-14
    upper = a >= 1.0 - 1e-14
    free = ~((lower & (g < 0.0)) | (upper & (g > 0.0)))
    if not np.any(free):
        return None
    Qff = Q[np.ix_(free, free)]
    rhs = w[free] - Q[np.ix_(free, ~free)] @ a[~free]
    try:
        x = np.linalg.solve(Qff + 1e-12 * np.eye(int(free.sum())), rhs)
    except np.linalg.LinAlgError:
        return None
    cand = a.copy()
    cand[free] = np.clip(x, 0.0, 1.0)
    return cand


def box_qp_maximize(
    Q: np.ndarray,
    w: np.ndarray,
    alpha0: np.ndarray,
    max_iter: int = 2000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Maximize  w'a - 0.5 a'Qa  over the box [0,1]^n.

    Projected Newton: each iteration solves the free-coordinate subsystem
    exactly and clips, falling back to a projected-gradient line search when
    the Newton trial fails to improve.  Q must be symmetric PSD.

    Parameters
    ----------
    Q : (n, n) ndarray
        Symmetric positive semidefinite quadratic term.
    w : (n,) ndarray
        Linear term.
    alpha0 : (n,) ndarray
        Starting point; clipped into the box.
    max_iter : int
        Cap on projected-gradient iterations.
    tol : float
        Convergence threshold on the free-direction infinity norm.

    Returns
    -------
    (n,) ndarray
        The maximizer (unique up to directions in the null space of Q that do
        not affect the objective).
    """
    Q = np.asarray(Q, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    a = np.clip(np.asarray(alpha0, dtype=np.float64), 0.0, 1.0).copy()
    f = _objective(Q, w, a)
    for _ in range(max_iter):
        g = w - Q @ a
        d = _free_direction(a, g)
        dmax = np.max(np.abs(d), initial=0.0)
        if dmax <= tol:
            break
        cand = _newton_candidate(Q, w, a, g)
        if cand is not None:
            f_cand = _objective(Q, w, cand)
            if f_cand > f + 1e-15:
                a, f = cand, f_cand
                continue
        qd = float(d @ Q @ d)
        t = 1.0 if qd <= 1e-300 else float(g @ d) / qd
        if t <= 0.0:
            t = 1.0
        a_new = np.clip(a + t * d, 0.0, 1.0)
        f_new = _objective(Q, w, a_new)
        halvings = 0
        while f_new < f and halvings < 40:
            t *= 0.5
            a_new = np.clip(a + t * d, 0.0, 1.0)
            f_new = _objective(Q, w, a_new)
            halvings += 1
        if f_new <= f + 1e-18 and halvings >= 40:
            break
        a, f = a_new, f_new
    return a


def gaussian_gram(X: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian gram matrix with entries exp(-||xi - xj||^2 / (2 bandwidth^2))."""
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def gaussian_row(X: np.ndarray, z: np.ndarray, bandwidth: float) -> np.ndarray:
    """Row of Gaussian kernel values k(z, x_i) against every row of X."""
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    diff = X - z[None, :]
    d2 = np.sum(diff * diff, axis=1)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def project_capped_simplex(
    v: np.ndarray, total: float, lo: float = 0.0, hi: float = 1.0
) -> np.ndarray:
    """Euclidean projection onto {x : lo <= x_i <= hi, sum(x) = total}.

    Bisection on the shift mu of x(mu) = clip(v - mu, lo, hi); the coordinate
    sum is monotone in mu.  Requires n*lo <= total <= n*hi.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    if not (n * lo - 1e-9 <= total <= n * hi + 1e-9):
        raise ValueError(f"infeasible capped simplex: n={n} lo={lo} hi={hi} total={total}")
    mu_lo = float(np.min(v)) - hi - 1.0
    mu_hi = float(np.max(v)) - lo + 1.0
    for _ in range(100):
        mu = 0.5 * (mu_lo + mu_hi)
        s = float(np.sum(np.clip(v - mu, lo, hi)))
        if s > total:
            mu_lo = mu
        else:
            mu_hi = mu
    mu = 0.5 * (mu_lo + mu_hi)
    return np.clip(v - mu, lo, hi)


def dykstra_caps(
    v: np.ndarray,
    lo: float,
    hi: float,
    masks: np.ndarray,
    rhs: np.ndarray,
    tol: float = 1e-9,
    max_sweeps: int = 500,
) -> np.ndarray:
    """Project v onto {x : lo <= x <= hi, masks[j] @ x <= rhs[j] for all j}.

    Dykstra's alternating projections over the box and each 0/1-masked
    halfspace; converges to the exact Euclidean projection of the
    intersection.
    """
    v = np.asarray(v, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    k = masks.shape[0]
    x = v.copy()
    incs = np.zeros((k + 1, v.size))
    for _ in range(max_sweeps):
        x_start = x.copy()
        incs_start = incs.copy()
        # box
        y = x + incs[0]
        xp = np.clip(y, lo, hi)
        incs[0] = y - xp
        x = xp
        # halfspaces
        for j in range(k):
            y = x + incs[j + 1]
            m = masks[j]
            viol = float(m @ y) - float(rhs[j])
            nrm = float(m @ m)
            if viol > 0.0 and nrm > 0.0:
                xp = y - (viol / nrm) * m
            else:
                xp = y
            incs[j + 1] = y - xp
            x = xp
        # x can stall for a cycle while corrections still move; watch both
        delta = max(
            float(np.max(np.abs(x - x_start), initial=0.0)),
            float(np.max(np.abs(incs - incs_start), initial=0.0)),
        )
        if delta <= tol:
            break
    return x
