"""Simple-complex classifier.

Two functions are learned together: a smooth decision function f (kernel K)
that should explain ordinary instances, and a narrow complex function f_o
(kernel K_o) that absorbs the few noisy ones.  The per-instance weight on the
hinge loss of f is gated by how strongly f_o claims the instance, and f_o is
budgeted: sum |f_o(x_i)| <= n_o with |f_o(x_i)| <= 1.

This module provides
  * instance-complexity scores: how far an instance can move before the
    retrained base classifier drifts by more than epsilon in RKHS norm;
  * an exact enumeration oracle over crisp noisy subsets;
  * the semidefinite relaxation of the joint problem, assembled as a conic
    program and minimized by the proximal machinery in solver.py;
  * prediction and a restarted alternating-minimization cross-check.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist

from ._kernels import box_qp_maximize, gaussian_row, project_capped_simplex
from .data import Dataset, GramPair, KernelSpec, l01
from .oracle import svm_dual_exact
from .solver import (
    ConeBlock,
    ConicPoint,
    ConicProgram,
    PolytopePiece,
    PolytopeSpec,
    SolverConfig,
    ppa_minimize,
    smat,
    svec,
    svec_index,
    svec_length,
)

__all__ = [
    "SCModel",
    "SCExactResult",
    "SCRelaxSolution",
    "ComplexityReport",
    "instance_complexity",
    "score_complexity",
    "rank_noisy",
    "solve_sc_exact",
    "solve_sc_relaxation",
    "sc_predict",
    "alternating_fit",
    "alternating_model",
]


@dataclass
class SCModel:
    """Solved simple-complex pair.

    alpha is the box dual of the simple classifier, beta the expansion of the
    complex function on K_o rows, p the (possibly rounded) noisiness
    indicator.  h carries the per-instance gate 1 - y_i f_o(x_i) so decision
    values need nothing beyond Gram rows.
    """

    alpha: np.ndarray
    beta: np.ndarray
    p: np.ndarray
    labels: np.ndarray
    h: np.ndarray
    lam: float
    lam_o: float
    n_o: int

    @property
    def simple_coef(self) -> np.ndarray:
        # f(x) = sum_i coef_i k(x_i, x)
        return self.labels * self.h * self.alpha / self.lam


@dataclass
class SCExactResult:
    model: SCModel
    objective: float
    subset: tuple
    per_subset: dict


@dataclass
class SCRelaxSolution:
    """Relaxation output: lifted matrix H, gate vector h, epigraph value t,
    multiplier-like margins beta_prime / eta_prime, continuous p, and the
    complex expansion beta."""

    H: np.ndarray
    h: np.ndarray
    t: float
    beta_prime: np.ndarray
    eta_prime: np.ndarray
    p: np.ndarray
    beta: np.ndarray
    objective: float
    kkt_max: float
    iterations: int


@dataclass
class ComplexityReport:
    scores: np.ndarray
    epsilon: float
    probe_count: int
    ranking: np.ndarray
    capped: np.ndarray

    def to_dict(self) -> dict:
        return {
            "scores": self.scores.tolist(),
            "ranking": self.ranking.tolist(),
            "epsilon": self.epsilon,
            "probes": self.probe_count,
        }


# ---------------------------------------------------------------------------
# Instance complexity


def _require_fully_labeled(data: Dataset) -> np.ndarray:
    if data.unlabeled_idx.size:
        raise ValueError("complexity scoring needs every instance labeled")
    return data.labels.astype(np.float64)


def _box_svm(
    K_eff: np.ndarray,
    weights: np.ndarray,
    lam: float,
    alpha0: np.ndarray | None = None,
    tol: float = 1e-12,
) -> tuple[np.ndarray, float]:
    """Weighted box-QP SVM dual without the exact-oracle size guard.

    Internal fitting workhorse; same composition as the enumeration oracle
    but usable at any pool size.
    """
    sym = 0.5 * (K_eff + K_eff.T)
    Q = sym / lam
    start = np.zeros(weights.size) if alpha0 is None else np.asarray(alpha0, dtype=np.float64)
    alpha = np.asarray(box_qp_maximize(Q, weights, start, 4000, tol))
    return alpha, float(weights @ alpha - 0.5 * alpha @ Q @ alpha)


def _base_svm(data: Dataset, gram: GramPair, lam: float):
    y = _require_fully_labeled(data)
    K_eff = gram.K * np.outer(y, y)
    alpha, value = _box_svm(K_eff, np.ones(data.n), lam)
    coef = y * alpha / lam
    return alpha, coef, value


def _kernel_row_at(features: np.ndarray, spec: KernelSpec, x_new: np.ndarray):
    """Kernel values k(x_j, x_new) for all training x_j, plus k(x_new, x_new)."""
    if spec.kind == "gaussian":
        return gaussian_row(features, x_new, spec.bandwidth), 1.0
    return features @ x_new, float(x_new @ x_new)


def _probe_directions(x_i: np.ndarray, grad: np.ndarray | None, probes: int) -> np.ndarray:
    d = x_i.size
    if d == 1:
        return np.array([[1.0], [-1.0]])
    # seed from the point's coordinates so scores do not depend on row order
    seed = zlib.crc32(np.ascontiguousarray(x_i).tobytes())
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((probes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if grad is not None:
        gn = np.linalg.norm(grad)
        if gn > 1e-12:
            dirs = np.vstack([dirs, grad / gn])
    return dirs


def _base_gradient(data: Dataset, gram: GramPair, coef: np.ndarray, i: int) -> np.ndarray | None:
    spec = gram.spec_simple
    X = data.features
    if spec.kind == "gaussian":
        diff = X - X[i]
        return (coef * gram.K[i]) @ diff / spec.bandwidth**2
    return coef @ X


def _complexity_core(
    data: Dataset,
    gram: GramPair,
    i: int,
    epsilon: float,
    probes: int,
    base,
    cap: float,
) -> tuple[float, bool]:
    alpha0, coef, _, lam = base
    spec = gram.spec_simple
    K = gram.K
    y = data.labels.astype(np.float64)
    X = data.features
    eps2 = epsilon * epsilon
    base_energy = float(coef @ K @ coef)
    jitter = spec.jitter

    def drift_ok(x_new: np.ndarray, warm: np.ndarray):
        row, self_k = _kernel_row_at(X, spec, x_new)
        K2 = K.copy()
        K2[i, :] = row
        K2[:, i] = row
        K2[i, i] = self_k + jitter
        K_eff2 = K2 * np.outer(y, y)
        alpha2, _ = _box_svm(K_eff2, np.ones(data.n), lam, alpha0=warm)
        coef2 = y * alpha2 / lam
        # cross Gram differs from K only in column i
        Kc2 = K @ coef2 + (row - K[:, i]) * coef2[i]
        dist2 = base_energy + float(coef2 @ K2 @ coef2) - 2.0 * float(coef @ Kc2)
        return dist2 <= eps2, alpha2

    grad = _base_gradient(data, gram, coef, i)
    dirs = _probe_directions(X[i], grad, probes)
    d_star = cap
    all_capped = True
    for direction in dirs:
        warm = alpha0
        ok_cap, warm = drift_ok(X[i] + cap * direction, warm)
        if ok_cap:
            d_dir = cap
        else:
            all_capped = False
            lo, hi = 0.0, cap
            while hi - lo > 1e-3 * hi:
                mid = 0.5 * (lo + hi)
                ok, warm = drift_ok(X[i] + mid * direction, warm)
                if ok:
                    lo = mid
                else:
                    hi = mid
            d_dir = lo
        if d_dir < d_star:
            d_star = d_dir
            if d_star <= cap * 1e-12:
                break
    d_star = max(d_star, cap * 1e-12)
    return 1.0 / d_star, all_capped


def _dataset_cap(data: Dataset) -> float:
    if data.n < 2:
        return 10.0
    diam = float(pdist(data.features).max())
    return 10.0 * max(diam, 1e-12)


def _default_epsilon(gram: GramPair, coef: np.ndarray) -> float:
    return 0.1 * float(np.sqrt(max(coef @ gram.K @ coef, 0.0)))


def instance_complexity(
    data: Dataset,
    gram: GramPair,
    i: int,
    epsilon: float | None = None,
    probes: int = 16,
    lam: float = 1.0,
) -> float:
    """Inverse of the largest perturbation radius instance i tolerates.

    A radius d is tolerated when retraining with x_i moved by d along every
    probed unit direction keeps the classifier within epsilon of the base one
    in RKHS norm.  The largest tolerated radius is found by bisection per
    direction (relative tolerance 1e-3, radius capped at 10x the dataset
    diameter); the score is 1/d over the worst direction.
    """
    if gram.spec_simple is None:
        raise ValueError("gram pair carries no simple-kernel spec; build it with build_gram_pair")
    if data.labels[i] == 0:
        raise ValueError(f"instance {i} is unlabeled")
    if probes < 1:
        raise ValueError("probes must be positive")
    alpha0, coef, value = _base_svm(data, gram, lam)
    if epsilon is None:
        epsilon = _default_epsilon(gram, coef)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    score, _ = _complexity_core(data, gram, i, epsilon, probes, (alpha0, coef, value, lam), _dataset_cap(data))
    return score


def score_complexity(
    data: Dataset,
    gram: GramPair,
    epsilon: float | None = None,
    probes: int = 16,
    lam: float = 1.0,
) -> ComplexityReport:
    """Complexity scores for every instance, sharing one base model."""
    if gram.spec_simple is None:
        raise ValueError("gram pair carries no simple-kernel spec; build it with build_gram_pair")
    alpha0, coef, value = _base_svm(data, gram, lam)
    if epsilon is None:
        epsilon = _default_epsilon(gram, coef)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    cap = _dataset_cap(data)
    scores = np.empty(data.n)
    capped = np.empty(data.n, dtype=bool)
    for i in range(data.n):
        scores[i], capped[i] = _complexity_core(
            data, gram, i, epsilon, probes, (alpha0, coef, value, lam), cap
        )
    ranking = np.lexsort((np.arange(data.n), -scores)).astype(np.intp)
    return ComplexityReport(scores=scores, epsilon=float(epsilon), probe_count=probes, ranking=ranking, capped=capped)


def rank_noisy(report: ComplexityReport, n_o: int) -> np.ndarray:
    """Indices of the n_o highest-complexity instances, ties to the lower index."""
    if n_o < 0 or n_o > report.scores.size:
        raise ValueError("n_o must lie in [0, n]")
    return report.ranking[:n_o].copy()


# ---------------------------------------------------------------------------
# Exact subset oracle


def solve_sc_exact(data: Dataset, gram: GramPair, lam: float, lam_o: float, n_o: int) -> SCExactResult:
    """Ground truth by enumeration over crisp noisy subsets.

    Every subset O with |O| <= n_o is scored as: the weighted kernel-SVM
    optimum with instances in O given weight zero, plus the minimum-norm
    energy of a complex function pinning f_o(x_i) = y_i on O.  Ties keep the
    first (smallest, earliest) subset.
    """
    n = data.n
    if n > 12:
        raise ValueError(f"exact enumeration guard: n={n} > 12")
    y = _require_fully_labeled(data)
    if lam <= 0 or lam_o <= 0:
        raise ValueError("lam and lam_o must be positive")
    if n_o < 0:
        raise ValueError("n_o must be nonnegative")
    K_eff = gram.K * np.outer(y, y)
    Ko_fac = cho_factor(gram.K_o, lower=True)
    best = None
    per_subset: dict[tuple, float] = {}
    for size in range(min(n_o, n) + 1):
        for subset in itertools.combinations(range(n), size):
            keep = np.setdiff1d(np.arange(n), subset)
            if keep.size:
                sub = K_eff[np.ix_(keep, keep)]
                alpha_sub, val_svm = svm_dual_exact(sub, np.ones(keep.size), lam)
            else:
                alpha_sub, val_svm = np.zeros(0), 0.0
            v = np.zeros(n)
            v[list(subset)] = y[list(subset)]
            energy = 0.5 * lam_o * float(v @ cho_solve(Ko_fac, v))
            total = val_svm + energy
            per_subset[subset] = total
            if best is None or total < best[0] - 1e-15:
                alpha = np.zeros(n)
                alpha[keep] = alpha_sub
                best = (total, subset, alpha, v)
    total, subset, alpha, v = best
    beta = cho_solve(Ko_fac, v)
    p = np.zeros(n)
    p[list(subset)] = 1.0
    h = 1.0 - y * (gram.K_o @ beta)
    model = SCModel(alpha=alpha, beta=beta, p=p, labels=data.labels.copy(), h=h, lam=lam, lam_o=lam_o, n_o=n_o)
    return SCExactResult(model=model, objective=total, subset=subset, per_subset=per_subset)


# ---------------------------------------------------------------------------
# Convex relaxation


def _assemble_sc_program(K: np.ndarray, K_o: np.ndarray, y: np.ndarray, lam: float, lam_o: float, n_o: int) -> ConicProgram:
    n = K.shape[0]
    m1 = n + 1
    sl = svec_length(m1)
    off_m1, off_m2 = 0, sl
    off_p, off_bp, off_ep = 2 * sl, 2 * sl + n, 2 * sl + 2 * n
    dim = 2 * sl + 3 * n
    blocks = [
        ConeBlock("psd", m1),
        ConeBlock("psd", m1),
        ConeBlock("nonneg", n),
        ConeBlock("nonneg", n),
        ConeBlock("nonneg", n),
    ]

    rows_E, cols_E, vals_E, b_E, B_E_rows = [], [], [], [], []

    def add_E(entries, b, B_row=None):
        r = len(b_E)
        for c, vv in entries:
            rows_E.append(r)
            cols_E.append(c)
            vals_E.append(vv)
        b_E.append(b)
        B_E_rows.append(np.zeros(n) if B_row is None else B_row)

    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    # entrywise tie between the two lifted blocks: M1_ij = K_ij * M2_ij on the data block
    for i in range(n):
        for j in range(i, n):
            c = svec_index(m1, i, j)
            add_E([(off_m1 + c, 1.0), (off_m2 + c, -K[i, j])], 0.0)
    add_E([(off_m2 + svec_index(m1, n, n), 1.0)], 1.0)
    for i in range(n):
        # corner of M1 carries the gated margin plus the two slack margins
        add_E(
            [(off_m1 + svec_index(m1, i, n), inv_sqrt2), (off_ep + i, -1.0), (off_bp + i, 1.0)],
            1.0,
            -y[i] * K_o[i],
        )
        # corner of M2 carries the label gated by the complex function
        add_E([(off_m2 + svec_index(m1, i, n), inv_sqrt2)], y[i], -K_o[i])
        # diagonal of the lifted data block
        add_E([(off_m2 + svec_index(m1, i, i), 1.0)], 1.0, -K_o[i])

    rows_I, cols_I, vals_I, b_I, B_I_rows = [], [], [], [], []
    for i in range(n):
        for sign in (1.0, -1.0):
            rows_I.append(len(b_I))
            cols_I.append(off_p + i)
            vals_I.append(-1.0)
            b_I.append(0.0)
            B_I_rows.append(-sign * K_o[i])

    c_lin = np.zeros(dim)
    c_lin[off_m1 + svec_index(m1, n, n)] = lam / 2.0
    c_lin[off_bp : off_bp + n] = 1.0

    p_idx = np.arange(off_p, off_p + n)
    polytope = PolytopeSpec(
        [
            PolytopePiece("box", p_idx, lo=0.0, hi=1.0),
            PolytopePiece("cap", p_idx, rhs=float(n_o)),
        ]
    )
    A_E = sp.coo_matrix((vals_E, (rows_E, cols_E)), shape=(len(b_E), dim)).tocsr()
    A_I = sp.coo_matrix((vals_I, (rows_I, cols_I)), shape=(len(b_I), dim)).tocsr()
    return ConicProgram(
        blocks=blocks,
        A_E=A_E,
        b_E=np.array(b_E),
        A_I=A_I,
        b_I=np.array(b_I),
        polytope=polytope,
        beta_dim=n,
        B_E=np.vstack(B_E_rows),
        B_I=np.vstack(B_I_rows),
        P_quad=lam_o * K_o,
        Q_metric=K_o + 1e-6 * np.eye(n),
        c_lin=c_lin,
    )


def _sc_initial_point(program: ConicProgram, K: np.ndarray, y: np.ndarray, lam: float) -> ConicPoint:
    # feasible start: beta = 0, slack margins beta' = 1 zero out the M1 corner,
    # so block-diagonal M1 is PSD with a tiny epigraph entry
    n = K.shape[0]
    m1 = n + 1
    M1 = np.zeros((m1, m1))
    M1[:n, :n] = K * np.outer(y, y)
    M1[n, n] = 0.1
    M2 = np.ones((m1, m1))
    M2[:n, :n] = np.outer(y, y)
    M2[:n, n] = y
    M2[n, :n] = y
    u = np.zeros(program.dim)
    sl = svec_length(m1)
    u[:sl] = svec(M1)
    u[sl : 2 * sl] = svec(M2)
    u[2 * sl + n : 2 * sl + 2 * n] = 1.0
    return ConicPoint(u, np.zeros(n), np.zeros(program.n_ineq))


def solve_sc_relaxation(
    data: Dataset,
    gram: GramPair,
    lam: float,
    lam_o: float,
    n_o: int,
    cfg: SolverConfig | None = None,
) -> tuple[SCRelaxSolution, SCModel]:
    """Convex relaxation of the joint problem, solved by proximal steps.

    The lifted program couples two PSD blocks: one ties the Gram-weighted
    label matrix to the epigraph of the inner box maximum, the other keeps the
    label matrix consistent with the complex function through its diagonal and
    corner.  p is budgeted on a box-plus-cap polytope.  The returned model
    rounds p to the top-n_o support of |f_o| and recovers alpha by one exact
    box-QP solve against the relaxed Gram.
    """
    y = _require_fully_labeled(data)
    if lam <= 0 or lam_o <= 0:
        raise ValueError("lam and lam_o must be positive")
    n = data.n
    program = _assemble_sc_program(gram.K, gram.K_o, y, lam, lam_o, n_o)
    if cfg is None:
        # cheap inexact prox steps with the dual carried across outers beat a
        # few tightly solved subproblems on this program class
        cfg = SolverConfig(rho=1.0, tol_fixed_point=1e-9, tol_inner=1e-9, max_outer=8000, max_inner=2)
    x0 = _sc_initial_point(program, gram.K, y, lam)
    result = ppa_minimize(program, cfg, x0=x0)
    u = result.point.u
    beta = result.point.beta
    m1 = n + 1
    sl = svec_length(m1)
    M1 = smat(u[:sl], m1)
    M2 = smat(u[sl : 2 * sl], m1)
    H = M2[:n, :n]
    fo = gram.K_o @ beta
    h = 1.0 - y * fo
    t = lam / 2.0 * M1[n, n]
    beta_prime = u[2 * sl + n : 2 * sl + 2 * n].copy()
    eta_prime = u[2 * sl + 2 * n : 2 * sl + 3 * n].copy()
    p_relaxed = u[2 * sl : 2 * sl + n].copy()
    objective = t + 0.5 * lam_o * float(beta @ gram.K_o @ beta) + float(beta_prime.sum())
    solution = SCRelaxSolution(
        H=H,
        h=h,
        t=t,
        beta_prime=beta_prime,
        eta_prime=eta_prime,
        p=p_relaxed,
        beta=beta,
        objective=objective,
        kkt_max=result.trace[-1]["kkt_max"],
        iterations=result.iterations,
    )
    # rounded model: flag the strongest |f_o| responses, up to the budget
    order = np.lexsort((np.arange(n), -np.abs(fo)))
    p_round = np.zeros(n)
    for idx in order[:n_o]:
        if abs(fo[idx]) > 1e-9:
            p_round[idx] = 1.0
    alpha, _ = _box_svm(gram.K * H, h, lam)
    model = SCModel(
        alpha=alpha, beta=beta.copy(), p=p_round, labels=data.labels.copy(), h=h,
        lam=lam, lam_o=lam_o, n_o=n_o,
    )
    return solution, model


def sc_predict(model: SCModel, gram_row_simple: np.ndarray, gram_row_complex: np.ndarray):
    """Decision values at one query point.

    Returns (f, f_o, label, noisy_flag): f from the gated alpha expansion,
    f_o from the beta expansion, hard label sign(f), noisy when |f_o| >= 0.5.
    """
    f = float(np.asarray(gram_row_simple) @ model.simple_coef)
    fo = float(np.asarray(gram_row_complex) @ model.beta)
    label = 1 if f >= 0.0 else -1
    return f, fo, label, abs(fo) >= 0.5


# ---------------------------------------------------------------------------
# Alternating-minimization cross-check


def alternating_fit(
    data: Dataset,
    gram: GramPair,
    lam: float,
    lam_o: float,
    n_o: int,
    restarts: int = 10,
    rounds: int = 8,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Restarted alternating descent on the joint nonconvex objective.

    Complex values are parametrized along the labels, f_o(x_i) = y_i m_i with
    magnitudes m in [0,1], sum m <= n_o.  Given m the simple classifier is a
    weighted kernel SVM solved exactly; given the classifier, m takes
    projected subgradient steps on the gated loss plus the minimum-norm
    energy.  Returns the best objective value found and its magnitudes; an
    upper bound on the true optimum, used to cross-check the relaxation.
    """
    y = _require_fully_labeled(data)
    n = data.n
    K_eff = gram.K * np.outer(y, y)
    Ko_fac = cho_factor(gram.K_o, lower=True)
    Ko_inv = cho_solve(Ko_fac, np.eye(n))
    L_g = lam_o * float(np.linalg.eigvalsh(Ko_inv)[-1]) + 1e-9
    rng = np.random.default_rng(seed)

    def project_m(m):
        m = np.clip(m, 0.0, 1.0)
        if m.sum() > n_o:
            m = project_capped_simplex(m, float(n_o), 0.0, 1.0)
        return m

    def total_value(m):
        c = 1.0 - m
        sub = K_eff * np.outer(c, c)
        _, val = _box_svm(sub, c, lam)
        energy = 0.5 * lam_o * float((y * m) @ Ko_inv @ (y * m))
        return val, energy

    best_val, best_m = np.inf, np.zeros(n)
    for r in range(restarts):
        m = project_m(rng.uniform(0.0, 1.0, n)) if r else np.zeros(n)
        for _ in range(rounds):
            c = 1.0 - m
            sub = K_eff * np.outer(c, c)
            a_scaled, _ = _box_svm(sub, c, lam)
            alpha = c * a_scaled
            f_vals = (gram.K @ (y * alpha)) / lam
            hng = np.maximum(0.0, 1.0 - y * f_vals)
            # m-step: minimize sum (1-m_i) hng_i + (lam_o/2)(ym)' Ko^{-1} (ym)
            for _ in range(50):
                v = y * m
                grad = -hng + lam_o * (y * (Ko_inv @ v))
                m = project_m(m - grad / L_g)
        val, energy = total_value(m)
        if val + energy < best_val:
            best_val, best_m = val + energy, m.copy()
    return float(best_val), best_m


def alternating_model(
    data: Dataset,
    gram: GramPair,
    lam: float,
    lam_o: float,
    n_o: int,
    restarts: int = 10,
    rounds: int = 8,
    seed: int = 0,
) -> tuple[SCModel, float]:
    """Alternating fit packaged as a model.

    Runs alternating_fit, rebuilds the gated classifier at the winning
    magnitudes, and solves for the complex expansion that reproduces
    f_o(x_i) = y_i m_i on the pool, so the stored gate is exactly 1 - m.
    Scales to pools the semidefinite path cannot touch.  Returns the model
    and the joint objective value.
    """
    value, m = alternating_fit(data, gram, lam, lam_o, n_o, restarts, rounds, seed)
    y = data.labels.astype(np.float64)
    beta = cho_solve(cho_factor(gram.K_o, lower=True), y * m)
    c = 1.0 - m
    K_eff = gram.K * np.outer(y, y)
    a_scaled, _ = _box_svm(K_eff * np.outer(c, c), c, lam)
    model = SCModel(
        alpha=a_scaled, beta=beta, p=m.copy(), labels=data.labels.copy(), h=c,
        lam=lam, lam_o=lam_o, n_o=n_o,
    )
    return model, float(value)
