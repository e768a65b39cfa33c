"""Brute-force reference solvers for tiny instances.

Everything here trades scale for trustworthiness: exact box-QP duals, full
enumeration of crisp query/label/noise assignments, and grid verification of
the rank-one parameterization.  These are the ground truth that every
relaxation result is measured against in the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._kernels import box_qp_maximize
from .data import Dataset, GramPair

__all__ = [
    "EnumerationBudget",
    "EnumerationError",
    "svm_dual_exact",
    "kkt_box_qp",
    "RalExactResult",
    "ral_exact",
    "Rank1Report",
    "rank1_verify",
]


class EnumerationError(RuntimeError):
    """Instance too large for the enumeration budget."""


@dataclass
class EnumerationBudget:
    max_n: int = 8
    max_states: int = 2_000_000


def svm_dual_exact(
    K_eff: np.ndarray,
    weights: np.ndarray,
    lam: float,
    alpha0: np.ndarray | None = None,
    tol: float = 1e-12,
) -> tuple[np.ndarray, float]:
    """Maximize  weights'a - (1/2 lam) a' K_eff a  over the box [0,1]^n.

    K_eff is the fully conjugated effective kernel (labels and instance
    weights already folded in).  Returns the maximizer and its objective.
    """
    K_eff = np.asarray(K_eff, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.size
    if n > 30:
        raise ValueError(f"svm_dual_exact is an exact oracle; n={n} exceeds the n<=30 guard")
    if lam <= 0:
        raise ValueError("lam must be positive")
    Q = K_eff / lam
    start = np.zeros(n) if alpha0 is None else np.asarray(alpha0, dtype=np.float64)
    alpha = np.asarray(box_qp_maximize(Q, weights, start, 4000, tol))
    obj = float(weights @ alpha - 0.5 * alpha @ Q @ alpha)
    return alpha, obj


def kkt_box_qp(K_eff: np.ndarray, weights: np.ndarray, lam: float, alpha: np.ndarray) -> float:
    """Max KKT violation of the box-QP dual at alpha (0 at an exact optimum)."""
    g = np.asarray(weights, dtype=np.float64) - np.asarray(K_eff) @ np.asarray(alpha) / lam
    viol = np.abs(g).copy()
    viol[(alpha <= 1e-12) & (g <= 0)] = 0.0
    viol[(alpha >= 1 - 1e-12) & (g >= 0)] = 0.0
    lo = np.minimum(alpha, 0.0)
    hi = np.maximum(alpha - 1.0, 0.0)
    return float(max(np.max(viol, initial=0.0), np.max(-lo, initial=0.0), np.max(hi, initial=0.0)))


@dataclass
class RalExactResult:
    query: tuple[int, ...]
    y_full: np.ndarray          # adversarial/minimizing label assignment, full length n
    p: np.ndarray               # 0/1 noisiness pattern of the attaining branch
    value: float
    states: int = 0
    per_query_value: dict[tuple[int, ...], float] = field(default_factory=dict)


def _crisp_value(
    K: np.ndarray,
    K_o_chol,
    y: np.ndarray,
    a: np.ndarray,
    p: np.ndarray,
    lam: float,
    lam_o: float,
    c_a: float,
    n_q: int,
) -> float:
    """Objective of the saddle program at a crisp assignment.

    Weighted SVM dual value with survivor weights a, plus the cheapest complex
    function realizing the p pattern, minus the c_a reward for covered mass
    (constant c_a*n dropped, matching the model objective convention).
    """
    v = y * a
    K_eff = K * np.outer(v, v)
    _, svm_val = svm_dual_exact(K_eff, a.astype(np.float64), lam)
    energy = 0.0
    if np.any(p > 0):
        target = y * p
        z = scipy.linalg.cho_solve(K_o_chol, target)
        energy = 0.5 * lam_o * float(target @ z)
    return svm_val + energy - c_a * (float(np.sum(p)) + n_q)


def ral_exact(data: Dataset, gram: GramPair, cfg, budget: EnumerationBudget | None = None) -> RalExactResult:
    """Exact minimax query selection by full enumeration.

    Enumerates b-subsets q of the candidates, hypothesized labels y_s of the
    queried instances, labels y_u of the remaining unlabeled instances, and
    0/1 noisiness patterns p with sum(p) <= n_o, p_i + q_i <= 1 and at most
    n_lbn labeled instances covered.  Composes min over q of max over y_s of
    min over (y_u, p).  First attaining assignment in lexicographic
    enumeration order wins ties.
    """
    budget = budget or EnumerationBudget()
    n = data.n
    if n > budget.max_n:
        raise EnumerationError(f"n={n} exceeds enumeration cap {budget.max_n}")
    labeled = data.labeled_idx
    unlabeled = data.unlabeled_idx
    cands = data.candidate_idx
    b = min(cfg.b, len(cands))
    if b == 0:
        raise ValueError("no candidates to query")
    n_o = cfg.n_o
    n_lbn = cfg.n_lbn if cfg.n_lbn is not None else n_o
    K_o_chol = scipy.linalg.cho_factor(gram.K_o)
    labeled_mask = np.zeros(n, dtype=bool)
    labeled_mask[labeled] = True

    # pre-enumerate p patterns once (independent of labels)
    p_patterns = [np.zeros(n, dtype=np.float64)]
    for k in range(1, n_o + 1):
        for combo in itertools.combinations(range(n), k):
            pat = np.zeros(n, dtype=np.float64)
            pat[list(combo)] = 1.0
            if np.sum(pat[labeled_mask]) > n_lbn:
                continue
            p_patterns.append(pat)

    states = 0
    best_value = np.inf
    best: RalExactResult | None = None
    per_query: dict[tuple[int, ...], float] = {}
    base_y = data.labels.astype(np.float64)

    for q_combo in itertools.combinations(sorted(cands.tolist()), b):
        q_vec = np.zeros(n, dtype=np.float64)
        q_vec[list(q_combo)] = 1.0
        rest = [i for i in unlabeled.tolist() if i not in q_combo]
        worst = -np.inf
        worst_inner: tuple[np.ndarray, np.ndarray] | None = None
        for ys in itertools.product((-1.0, 1.0), repeat=b):
            inner_best = np.inf
            inner_arg: tuple[np.ndarray, np.ndarray] | None = None
            for yu in itertools.product((-1.0, 1.0), repeat=len(rest)):
                y = base_y.copy()
                for i, lab in zip(q_combo, ys):
                    y[i] = lab
                for i, lab in zip(rest, yu):
                    y[i] = lab
                for p in p_patterns:
                    if np.any(p + q_vec > 1.0):
                        continue
                    states += 1
                    if states > budget.max_states:
                        raise EnumerationError(f"state budget {budget.max_states} exceeded")
                    a = 1.0 - p - q_vec
                    val = _crisp_value(gram.K, K_o_chol, y, a, p, cfg.lam, cfg.lam_o, cfg.c_a, b)
                    if val < inner_best - 1e-15:
                        inner_best = val
                        inner_arg = (y.copy(), p.copy())
            if inner_best > worst + 1e-15:
                worst = inner_best
                worst_inner = inner_arg
        per_query[q_combo] = worst
        if worst < best_value - 1e-15:
            best_value = worst
            assert worst_inner is not None
            best = RalExactResult(
                query=q_combo,
                y_full=worst_inner[0].astype(np.int64),
                p=worst_inner[1],
                value=worst,
            )
    assert best is not None
    best.states = states
    best.per_query_value = per_query
    return best


@dataclass
class Rank1Report:
    grid_min: float
    beta_star: np.ndarray
    relaxation_objective: float
    gap: float
    evaluated: int
    skipped: int


def rank1_verify(
    data: Dataset,
    gram: GramPair,
    lam: float,
    lam_o: float,
    n_o: int,
    grid: int = 11,
) -> Rank1Report:
    """Grid search over the rank-one complex-function parameterization.

    For each beta on a [-1,1]^n grid, forms the rank-one weight vector
    h = 1 - Y K_o beta, charges the complex energy, evaluates the weighted
    dual exactly, and compares the grid minimum against the convex
    relaxation value (grid minimum is an upper bound on the nonconvex
    optimum, so gap >= -tolerance certifies the relaxation).
    """
    n = data.n
    if n > 4:
        raise ValueError("rank1_verify guard: n <= 4")
    y = data.labels.astype(np.float64)
    if np.any(y == 0):
        raise ValueError("rank1_verify needs a fully labeled dataset")
    axis = np.linspace(-1.0, 1.0, grid)
    best = np.inf
    best_beta = np.zeros(n)
    evaluated = 0
    skipped = 0
    for beta_tuple in itertools.product(axis, repeat=n):
        beta = np.array(beta_tuple)
        z = gram.K_o @ beta
        pvec = np.abs(z)
        if np.max(pvec, initial=0.0) > 1.0 + 1e-9 or float(np.sum(pvec)) > n_o + 1e-9:
            skipped += 1
            continue
        evaluated += 1
        h = 1.0 - y * z
        vh = y * h
        K_eff = gram.K * np.outer(vh, vh)
        _, svm_val = svm_dual_exact(K_eff, np.maximum(h, 0.0), lam)
        val = svm_val + 0.5 * lam_o * float(beta @ gram.K_o @ beta)
        if val < best:
            best = val
            best_beta = beta
    from .scmodel import solve_sc_relaxation  # local import; scmodel depends on this module

    relax, _ = solve_sc_relaxation(data, gram, lam, lam_o, n_o)
    return Rank1Report(
        grid_min=float(best),
        beta_star=best_beta,
        relaxation_objective=float(relax.objective),
        gap=float(best - relax.objective),
        evaluated=evaluated,
        skipped=skipped,
    )
