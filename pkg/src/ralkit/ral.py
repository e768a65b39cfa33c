"""Saddle-point assembly for robust batch-mode query selection.

The decision variable is one lifted symmetric matrix holding, in a single
PSD block, the pairwise label products of every data point, a column of
relaxed labels, and a query-relaxation column for the candidate pool,
together with a per-point noise budget vector p.  A dual vector alpha in
the unit box plays the regularized classifier against that block: alpha
descends the bilinear objective while the lifted block ascends it.  The
module builds the affine operators tying the blocks together, exposes the
objective / gradient / linear-coefficient callbacks the conic drivers
expect, and turns a solved point back into ranked query indices.

Block order inside the lifted matrix is [data rows; candidate rows; corner].
The diagonal of the data block stores 1 - p - q, candidate diagonals repeat
their query weights, and the corner column carries known labels, relaxed
labels for unlabeled rows, and the query weights themselves.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import Dataset, GramPair
from .solver import (
    ConeBlock,
    ConicPoint,
    ConicProgram,
    DualIterate,
    PolytopePiece,
    PolytopeSpec,
    SolveResult,
    SolverConfig,
    WarmStartState,
    nesterov_solve,
    project_cone,
    project_polytope,
    smat,
    svec,
    svec_index,
    svec_length,
    tseng_solve,
)

__all__ = [
    "ConfigError",
    "RalConfig",
    "SaddlePoint",
    "ConstraintOperators",
    "assemble",
    "ral_lite",
    "objective",
    "grad_alpha",
    "build_ck",
    "CoefficientBundle",
    "select_queries",
    "RalProblem",
    "solve_ral",
    "carry_warm_start",
    "dropped_coupling_magnitude",
    "saddle_to_dict",
    "saddle_from_dict",
    "saddle_to_json",
    "saddle_from_json",
]

_SQRT2 = math.sqrt(2.0)


class ConfigError(ValueError):
    """Inconsistent querying configuration for the given dataset."""


@dataclass
class RalConfig:
    """Weights and budgets for one querying round.

    n_lbn caps how much of the noise budget may sit on already-labeled
    points; None means no separate cap beyond n_o.  retain_query_coupling
    switches the candidate-diagonal rows to a linearization around
    coupling_ref (per-candidate reference values of the complex-score /
    label product); the default drops that product term entirely.
    """

    lam: float = 1.0
    lam_o: float = 1.0
    c_a: float = 1.0
    b: int = 1
    n_o: int = 0
    n_lbn: int | None = None
    mode: str = "full"
    retain_query_coupling: bool = False
    coupling_ref: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.lam_o <= 0:
            raise ConfigError("lam and lam_o must be positive")
        if self.c_a < 0:
            raise ConfigError("c_a must be nonnegative")
        if self.b < 1:
            raise ConfigError("batch size b must be at least 1")
        if self.n_o < 0:
            raise ConfigError("n_o must be nonnegative")
        if self.mode not in ("full", "lite"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class SaddlePoint:
    """Solved (or candidate) primal iterate in reporting form.

    q is expressed at the data level: zero on labeled rows, the query weight
    of the matching candidate elsewhere.  tau holds the relaxed labels of
    every unlabeled row.  candidates maps query-block positions back to
    dataset indices.  a + p + q = 1 holds exactly by construction.
    """

    G_hat: np.ndarray
    g: np.ndarray
    a: np.ndarray
    p: np.ndarray
    q: np.ndarray
    beta: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    tau: np.ndarray
    candidates: np.ndarray


@dataclass
class _Layout:
    """Index bookkeeping for the flat conic vector."""

    n: int
    m: int
    labeled: np.ndarray
    unlabeled: np.ndarray
    candidates: np.ndarray

    def __post_init__(self) -> None:
        self.N = self.n + self.m
        self.side = self.N + 1
        self.svec_len = svec_length(self.side)
        self.dim = self.svec_len + self.n
        self.cand_pos = {int(i): j for j, i in enumerate(self.candidates)}
        # svec coordinate of every data-block entry, row-major upper triangle
        take = []
        for i in range(self.n):
            for j in range(i, self.n):
                take.append(svec_index(self.side, i, j))
        self.data_block = np.asarray(take, dtype=np.intp)
        self.col_coord = np.asarray(
            [svec_index(self.side, i, self.N) for i in range(self.N)], dtype=np.intp
        )
        self.corner = svec_index(self.side, self.N, self.N)

    def p_coord(self, i: int) -> int:
        return self.svec_len + i

    def data_svec(self, u: np.ndarray) -> np.ndarray:
        """Data block of the lifted matrix, as a dense symmetric matrix."""
        return smat(u[self.data_block], self.n)

    def qtilde(self, u: np.ndarray) -> np.ndarray:
        q = np.zeros(self.n)
        if self.m:
            q[self.candidates] = u[self.col_coord[self.n :]] / _SQRT2
        return q


@dataclass
class ConstraintOperators:
    """Affine row families of the lifted program, kept separate for probing.

    EC: corner and diagonal ties.  EV: labeled-row column entries coupled to
    the complex expansion.  IC: relaxed-label bounds on unlabeled rows.
    IV: complex-score bounds against p and against the query relaxation.
    The fused ConicProgram stacks them in that order.
    """

    A_EC: sp.csr_matrix
    b_EC: np.ndarray
    A_EV: sp.csr_matrix
    b_EV: np.ndarray
    B_EV: np.ndarray
    A_IC: sp.csr_matrix
    b_IC: np.ndarray
    A_IV: sp.csr_matrix
    b_IV: np.ndarray
    B_IV: np.ndarray
    program: ConicProgram
    layout: _Layout = field(repr=False)


def _resolve_budgets(data: Dataset, cfg: RalConfig) -> tuple[_Layout, int]:
    labeled = data.labeled_idx
    unlabeled = data.unlabeled_idx
    cands = data.candidate_idx
    y = data.labels
    if labeled.size == 0 or len({int(y[i]) for i in labeled}) < 2:
        raise ConfigError("need at least one labeled instance per class")
    if cands.size == 0:
        raise ConfigError("candidate pool is empty")
    if cfg.b > cands.size:
        raise ConfigError(f"batch size {cfg.b} exceeds {cands.size} candidates")
    if cfg.n_o + cfg.b > data.n:
        raise ConfigError("n_o + b must not exceed the dataset size")
    n_lbn = cfg.n_o if cfg.n_lbn is None else cfg.n_lbn
    if n_lbn < 0:
        raise ConfigError("n_lbn must be nonnegative")
    return _Layout(data.n, cands.size, labeled, unlabeled, cands), n_lbn


class _RowStack:
    def __init__(self, dim: int):
        self.dim = dim
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []

    def add(self, entries: list[tuple[int, float]], b: float) -> int:
        r = len(self.rhs)
        for c, v in entries:
            self.rows.append(r)
            self.cols.append(c)
            self.vals.append(v)
        self.rhs.append(b)
        return r

    def build(self) -> tuple[sp.csr_matrix, np.ndarray]:
        A = sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(len(self.rhs), self.dim)
        )
        return A, np.asarray(self.rhs, dtype=np.float64)


def assemble(
    data: Dataset, gram: GramPair, cfg: RalConfig
) -> tuple[ConstraintOperators, SaddlePoint]:
    """Build the operators and a feasible starting point for one round."""
    lay, n_lbn = _resolve_budgets(data, cfg)
    lite = cfg.mode == "lite"
    n, m, N = lay.n, lay.m, lay.N
    y = data.labels.astype(np.float64)
    K_o = gram.K_o

    coupling = np.ones(m)
    if cfg.retain_query_coupling and cfg.coupling_ref is not None:
        ref = np.asarray(cfg.coupling_ref, dtype=np.float64)
        if ref.shape != (m,):
            raise ConfigError("coupling_ref must have one entry per candidate")
        coupling = 1.0 - ref

    ec = _RowStack(lay.dim)
    ec.add([(lay.corner, 1.0)], 1.0)
    for i in range(n):
        entries = [(svec_index(lay.side, i, i), 1.0)]
        if not lite:
            entries.append((lay.p_coord(i), 1.0))
        j = lay.cand_pos.get(i)
        if j is not None:
            entries.append((int(lay.col_coord[n + j]), 1.0 / _SQRT2))
        ec.add(entries, 1.0)
    for j in range(m):
        ec.add(
            [
                (svec_index(lay.side, n + j, n + j), 1.0),
                (int(lay.col_coord[n + j]), -coupling[j] / _SQRT2),
            ],
            0.0,
        )
    A_EC, b_EC = ec.build()

    ev = _RowStack(lay.dim)
    B_EV_rows: list[np.ndarray] = []
    if not lite:
        for i in lay.labeled:
            ev.add([(int(lay.col_coord[i]), 1.0 / _SQRT2)], float(y[i]))
            B_EV_rows.append(-K_o[i, :])
    A_EV, b_EV = ev.build()
    B_EV = np.asarray(B_EV_rows) if B_EV_rows else np.zeros((0, n))

    ic = _RowStack(lay.dim)
    for i in lay.unlabeled:
        j = lay.cand_pos.get(int(i))
        extra = [(int(lay.col_coord[n + j]), 1.0 / _SQRT2)] if j is not None else []
        for sg in (1.0, -1.0):
            entries = [(int(lay.col_coord[i]), sg / _SQRT2)]
            if not lite:
                entries.append((lay.p_coord(int(i)), 1.0))
            ic.add(entries + extra, 1.0)
    A_IC, b_IC = ic.build()

    iv = _RowStack(lay.dim)
    B_IV_rows = []
    if not lite:
        for i in range(n):
            for sg in (1.0, -1.0):
                iv.add([(lay.p_coord(i), -1.0)], 0.0)
                B_IV_rows.append(-sg * K_o[i, :])
        for i in lay.unlabeled:
            j = lay.cand_pos.get(int(i))
            extra = [(int(lay.col_coord[n + j]), 1.0 / _SQRT2)] if j is not None else []
            for sg in (1.0, -1.0):
                iv.add(extra, 1.0)
                B_IV_rows.append(-sg * K_o[i, :])
    A_IV, b_IV = iv.build()
    B_IV = np.asarray(B_IV_rows) if B_IV_rows else np.zeros((0, n))

    pieces = [
        PolytopePiece(
            "simplex",
            lay.col_coord[n:],
            scale=_SQRT2,
            lo=0.0,
            hi=1.0,
            total=float(cfg.b),
        )
    ]
    if lay.unlabeled.size:
        pieces.append(
            PolytopePiece(
                "box", lay.col_coord[lay.unlabeled], scale=_SQRT2, lo=-1.0, hi=1.0
            )
        )
    p_coords = np.arange(lay.svec_len, lay.svec_len + n, dtype=np.intp)
    if lite:
        pieces.append(PolytopePiece("box", p_coords, lo=0.0, hi=0.0))
        for i in lay.labeled:
            pieces.append(
                PolytopePiece(
                    "box",
                    np.asarray([lay.col_coord[i]]),
                    scale=_SQRT2,
                    lo=float(y[i]),
                    hi=float(y[i]),
                )
            )
    else:
        pieces.append(PolytopePiece("box", p_coords, lo=0.0, hi=1.0))
        pieces.append(PolytopePiece("cap", p_coords, rhs=float(cfg.n_o)))
        if lay.labeled.size:
            pieces.append(
                PolytopePiece(
                    "cap", p_coords[lay.labeled], rhs=float(min(n_lbn, cfg.n_o))
                )
            )

    bd = 0 if lite else n
    program = ConicProgram(
        blocks=[ConeBlock("psd", lay.side), ConeBlock("nonneg", n)],
        A_E=sp.vstack([A_EC, A_EV], format="csr"),
        b_E=np.concatenate([b_EC, b_EV]),
        A_I=sp.vstack([A_IC, A_IV], format="csr"),
        b_I=np.concatenate([b_IC, b_IV]),
        polytope=PolytopeSpec(pieces=pieces),
        beta_dim=bd,
        B_E=np.vstack([np.zeros((b_EC.size, bd)), B_EV]) if bd else None,
        B_I=np.vstack([np.zeros((b_IC.size, bd)), B_IV]) if bd else None,
        P_quad=cfg.lam_o * K_o if bd else None,
        Q_metric=K_o + 1e-6 * np.eye(n) if bd else None,
    )
    ops = ConstraintOperators(
        A_EC, b_EC, A_EV, b_EV, B_EV, A_IC, b_IC, A_IV, b_IV, B_IV, program, lay
    )
    start = _initial_conic_point(ops, data, cfg)
    return ops, _extract(ops, start, np.full(n, 0.5), cfg)


def ral_lite(
    data: Dataset, gram: GramPair, cfg: RalConfig
) -> tuple[ConstraintOperators, SaddlePoint]:
    """Baseline variant: complex scores pinned to zero, no noise budget."""
    lite_cfg = RalConfig(
        lam=cfg.lam,
        lam_o=cfg.lam_o,
        c_a=cfg.c_a,
        b=cfg.b,
        n_o=0,
        n_lbn=0,
        mode="lite",
    )
    return assemble(data, gram, lite_cfg)


def _initial_conic_point(
    ops: ConstraintOperators, data: Dataset, cfg: RalConfig
) -> ConicPoint:
    lay = ops.layout
    n, m, N = lay.n, lay.m, lay.N
    gamma = np.zeros(N)
    gamma[lay.labeled] = data.labels[lay.labeled]
    q0 = float(cfg.b) / m
    gamma[n:] = q0
    lifted = np.concatenate([gamma, [1.0]])
    G = np.outer(lifted, lifted)
    qtil = np.zeros(n)
    qtil[lay.candidates] = q0
    for i in range(n):
        G[i, i] = 1.0 - qtil[i]
    for j in range(m):
        G[n + j, n + j] = q0
    u = np.zeros(lay.dim)
    u[: lay.svec_len] = svec(G)
    prog = ops.program
    beta = np.zeros(prog.beta_dim)
    s = np.maximum(-prog.ineq_residual(u, beta), 0.0)
    return ConicPoint(u, beta, s)


def _extract(
    ops: ConstraintOperators, point: ConicPoint, alpha: np.ndarray, cfg: RalConfig
) -> SaddlePoint:
    lay = ops.layout
    n, N = lay.n, lay.N
    G_full = smat(point.u[: lay.svec_len], lay.side)
    qtil = lay.qtilde(point.u)
    p = point.u[lay.svec_len :].copy() if cfg.mode == "full" else np.zeros(n)
    g = p + qtil
    tau = G_full[lay.unlabeled, N]
    beta = point.beta.copy() if point.beta.size else np.zeros(n)
    return SaddlePoint(
        G_hat=G_full[:N, :N].copy(),
        g=g,
        a=1.0 - g,
        p=p,
        q=qtil,
        beta=beta,
        s=point.s.copy(),
        alpha=np.asarray(alpha, dtype=np.float64).copy(),
        tau=tau.copy(),
        candidates=lay.candidates.copy(),
    )


# ---------------------------------------------------------------------------
# objective pieces


@dataclass
class CoefficientBundle:
    """Linear coefficients of the lifted blocks at a fixed alpha."""

    G_coeff: np.ndarray
    q_coeff: np.ndarray
    p_coeff: np.ndarray


def build_ck(alpha: np.ndarray, gram: GramPair, cfg: RalConfig) -> CoefficientBundle:
    alpha = np.asarray(alpha, dtype=np.float64)
    G_coeff = (0.5 / cfg.lam) * gram.K * np.outer(alpha, alpha)
    lin = alpha + cfg.c_a
    return CoefficientBundle(G_coeff=G_coeff, q_coeff=lin, p_coeff=lin)


def objective(
    x: SaddlePoint, alpha: np.ndarray, gram: GramPair, cfg: RalConfig
) -> float:
    """Negated game value: the dual ascent target at the given point.

    The additive constant c_a * n coming from the a-penalty is dropped.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    n = alpha.size
    G_D = x.G_hat[:n, :n]
    val = float(alpha.sum())
    val -= float((alpha + cfg.c_a) @ (x.p + x.q))
    if x.beta.size:
        val += 0.5 * cfg.lam_o * float(x.beta @ gram.K_o @ x.beta)
    val -= (0.5 / cfg.lam) * float(alpha @ (gram.K * G_D) @ alpha)
    return val


def grad_alpha(
    x: SaddlePoint, alpha: np.ndarray, gram: GramPair, cfg: RalConfig
) -> np.ndarray:
    """Gradient of the game value in the dual block (the descent direction)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n = alpha.size
    return -x.a + (1.0 / cfg.lam) * ((gram.K * x.G_hat[:n, :n]) @ alpha)


def select_queries(x_solved: SaddlePoint, cfg: RalConfig) -> list[int]:
    """Top-b candidates by query weight, never through a suspected-noisy point.

    Candidates whose noise budget reached 0.5 are excluded.  Ties break
    toward the smaller dataset index.  If fewer than b candidates remain a
    warning is issued and every eligible index is returned.
    """
    cands = x_solved.candidates
    qvals = x_solved.q[cands]
    pvals = x_solved.p[cands]
    eligible = [
        (float(-qvals[j]), int(cands[j])) for j in range(cands.size) if pvals[j] < 0.5
    ]
    eligible.sort()
    picked = [idx for _, idx in eligible[: cfg.b]]
    if len(picked) < cfg.b:
        warnings.warn(
            f"only {len(picked)} eligible candidates for batch size {cfg.b}",
            stacklevel=2,
        )
    return picked


def dropped_coupling_magnitude(x: SaddlePoint, gram: GramPair) -> float:
    """Largest query-weighted complex score over candidates.

    Measures the term the candidate-diagonal rows drop (the product of the
    query relaxation with the complex expansion); small values justify the
    default assembly.
    """
    if not x.beta.size:
        return 0.0
    fo = gram.K_o @ x.beta
    return float(np.max(np.abs(x.q * fo))) if x.q.size else 0.0


# ---------------------------------------------------------------------------
# driver adapter


class RalProblem:
    """Callback bundle the saddle drivers consume."""

    def __init__(self, data: Dataset, gram: GramPair, cfg: RalConfig):
        self.data = data
        self.gram = gram
        self.cfg = cfg
        self.ops, _ = assemble(data, gram, cfg)
        self.layout = self.ops.layout
        self.program = self.ops.program
        self._x0 = _initial_conic_point(self.ops, data, cfg)

    def alpha_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.layout.n
        return np.zeros(n), np.ones(n)

    def initial_point(self) -> tuple[ConicPoint, np.ndarray]:
        return self._x0.copy(), np.full(self.layout.n, 0.5)

    def build_cu(self, alpha: np.ndarray) -> np.ndarray:
        lay = self.layout
        bundle = build_ck(alpha, self.gram, self.cfg)
        c = np.zeros(lay.dim)
        c[lay.data_block] = svec(bundle.G_coeff)
        c[lay.col_coord[lay.n :]] = bundle.q_coeff[lay.candidates] / _SQRT2
        if self.cfg.mode == "full":
            c[lay.svec_len :] = bundle.p_coeff
        return c

    def grad_alpha(self, x: ConicPoint, alpha: np.ndarray) -> np.ndarray:
        lay = self.layout
        G_D = lay.data_svec(x.u)
        a = 1.0 - lay.qtilde(x.u)
        if self.cfg.mode == "full":
            a = a - x.u[lay.svec_len :]
        return -a + (1.0 / self.cfg.lam) * ((self.gram.K * G_D) @ alpha)

    def objective(self, x: ConicPoint, alpha: np.ndarray) -> float:
        return -objective(self.extract(x, alpha), alpha, self.gram, self.cfg)

    def alpha_hessian(self, x: ConicPoint) -> np.ndarray:
        return (1.0 / self.cfg.lam) * (self.gram.K * self.layout.data_svec(x.u))

    def sample_feasible(self, rng: np.random.Generator) -> ConicPoint:
        lay = self.layout
        n, m, N = lay.n, lay.m, lay.N
        y = self.data.labels.astype(np.float64)
        q = rng.dirichlet(np.ones(m)) * float(self.cfg.b)
        q = np.minimum(q, 1.0)
        p = np.zeros(n)
        if self.cfg.mode == "full" and self.cfg.n_o > 0 and lay.unlabeled.size:
            raw = rng.uniform(0.0, 1.0, lay.unlabeled.size)
            scale = min(1.0, self.cfg.n_o / max(raw.sum(), 1e-12))
            p[lay.unlabeled] = raw * scale * rng.uniform(0.2, 0.9)
        qtil = np.zeros(n)
        qtil[lay.candidates] = q
        gamma = np.zeros(N)
        gamma[lay.labeled] = y[lay.labeled]
        for i in lay.unlabeled:
            room = max(1.0 - p[i] - qtil[i], 0.0)
            gamma[i] = rng.uniform(-room, room)
        gamma[n:] = q
        lifted = np.concatenate([gamma, [1.0]])
        G = np.outer(lifted, lifted)
        for i in range(n):
            G[i, i] = 1.0 - p[i] - qtil[i]
        for j in range(m):
            G[n + j, n + j] = q[j]
        u = np.zeros(lay.dim)
        u[: lay.svec_len] = svec(G)
        if self.cfg.mode == "full":
            u[lay.svec_len :] = p
        beta = np.zeros(self.program.beta_dim)
        s = np.maximum(-self.program.ineq_residual(u, beta), 0.0)
        return ConicPoint(u, beta, s)

    def extract(self, point: ConicPoint, alpha: np.ndarray) -> SaddlePoint:
        return _extract(self.ops, point, alpha, self.cfg)


def solve_ral(
    data: Dataset,
    gram: GramPair,
    cfg: RalConfig,
    solver_cfg: SolverConfig | None = None,
    method: str = "tseng",
    warm: WarmStartState | None = None,
    trace_path=None,
) -> tuple[SaddlePoint, SolveResult]:
    """Assemble and run one querying round end to end."""
    problem = RalProblem(data, gram, cfg)
    if solver_cfg is None:
        # single-loop regime for the splitting driver: a rough prox step per
        # outer iteration converges faster in wall time than exact steps
        solver_cfg = (
            SolverConfig(
                rho=1.0, tol_fixed_point=5e-6, tol_inner=1e-8, max_outer=20000, max_inner=3
            )
            if method == "tseng"
            else SolverConfig(
                rho=0.5, tol_fixed_point=1e-3, tol_inner=1e-6, max_outer=500, max_inner=15
            )
        )
    driver = {"tseng": tseng_solve, "nesterov": nesterov_solve}.get(method)
    if driver is None:
        raise ConfigError(f"unknown method {method!r}")
    res = driver(problem, solver_cfg, warm=warm, trace_path=trace_path)
    return problem.extract(res.point, res.alpha), res


def _carry_dual(
    dual: DualIterate, prev_problem: RalProblem, problem: RalProblem
) -> DualIterate:
    """Transfer prox multipliers onto the next round's layout.

    Coordinates and constraint rows that survive keep their multiplier;
    anything new (the equality row pinning a freshly revealed label) starts
    at zero.  Both rounds must use the same mode.
    """
    old, new = prev_problem.layout, problem.layout
    n = old.n
    full = problem.cfg.mode == "full"

    def old_row(i: int) -> int:
        if i < n:
            return i
        if i == new.N:
            return old.N
        return n + old.cand_pos[int(new.candidates[i - n])]

    umap = np.empty(new.dim, dtype=np.intp)
    for i in range(new.side):
        oi = old_row(i)
        for j in range(i, new.side):
            oj = old_row(j)
            umap[svec_index(new.side, i, j)] = svec_index(
                old.side, min(oi, oj), max(oi, oj)
            )
    umap[new.svec_len :] = old.svec_len + np.arange(n)

    eq = np.full(problem.program.n_eq, -1, dtype=np.intp)
    eq[0] = 0
    eq[1 : 1 + n] = 1 + np.arange(n)
    for j2, c in enumerate(new.candidates):
        eq[1 + n + j2] = 1 + n + old.cand_pos[int(c)]
    if full:
        old_ev = {int(i): 1 + n + old.m + k for k, i in enumerate(old.labeled)}
        for k2, i in enumerate(new.labeled):
            eq[1 + n + new.m + k2] = old_ev.get(int(i), -1)

    iq = np.full(problem.program.n_ineq, -1, dtype=np.intp)
    old_ic = {int(i): 2 * k for k, i in enumerate(old.unlabeled)}
    r = 0
    for i in new.unlabeled:
        base = old_ic[int(i)]
        iq[r] = base
        iq[r + 1] = base + 1
        r += 2
    if full:
        old_a = 2 * old.unlabeled.size
        iq[r : r + 2 * n] = old_a + np.arange(2 * n)
        r += 2 * n
        old_ivb = {int(i): old_a + 2 * n + 2 * k for k, i in enumerate(old.unlabeled)}
        for i in new.unlabeled:
            base = old_ivb[int(i)]
            iq[r] = base
            iq[r + 1] = base + 1
            r += 2

    def gather(src: np.ndarray, idx: np.ndarray) -> np.ndarray:
        out = np.zeros(idx.size)
        ok = idx >= 0
        out[ok] = src[idx[ok]]
        return out

    return DualIterate(
        S=gather(dual.S, umap),
        Z=gather(dual.Z, umap),
        v=gather(dual.v, iq),
        y_E=gather(dual.y_E, eq),
        y_I=gather(dual.y_I, iq),
    )


def carry_warm_start(
    prev: WarmStartState, prev_problem: RalProblem, problem: RalProblem
) -> WarmStartState:
    """Map a solved round onto the next round's layout.

    Dataset rows are stable across rounds; only the candidate block shrinks
    as queries get answered.  Surviving entries of the lifted matrix are
    copied over (a principal submatrix of a PSD matrix stays PSD), newly
    labeled rows get their revealed label in the column and their diagonal
    lifted back to 1 - p, and the query weights are rescaled to the new
    batch budget.  Prox multipliers transfer row-for-row where the rows
    survive.
    """
    old, new = prev_problem.layout, problem.layout
    G_old = smat(prev.point.u[: old.svec_len], old.side)
    keep = np.concatenate(
        [
            np.arange(old.n),
            [old.n + old.cand_pos[int(i)] for i in new.candidates],
            [old.N],
        ]
    ).astype(np.intp)
    G = G_old[np.ix_(keep, keep)].copy()
    y = problem.data.labels.astype(np.float64)
    still_unlabeled = set(map(int, problem.data.unlabeled_idx))
    newly_labeled = [
        int(i) for i in prev_problem.data.unlabeled_idx if int(i) not in still_unlabeled
    ]
    p_old = (
        prev.point.u[old.svec_len :]
        if prev_problem.cfg.mode == "full"
        else np.zeros(old.n)
    )
    for i in newly_labeled:
        G[i, new.N] = y[i]
        G[new.N, i] = y[i]
        G[i, i] = 1.0 - p_old[i]
    col = G[new.n + np.arange(new.m), new.N]
    total = float(col.sum())
    if total > 1e-9:
        scale = float(problem.cfg.b) / total
        G[new.n + np.arange(new.m), new.N] = col * scale
        G[new.N, new.n + np.arange(new.m)] = col * scale
        G[new.n + np.arange(new.m), new.n + np.arange(new.m)] = np.clip(
            col * scale, 0.0, 1.0
        )
    u = np.zeros(new.dim)
    u[: new.svec_len] = svec(G)
    if problem.cfg.mode == "full":
        u[new.svec_len :] = p_old
    u = project_polytope(project_cone(problem.program, u), problem.program.polytope)
    beta = prev.point.beta.copy() if problem.program.beta_dim else np.zeros(0)
    s = np.maximum(-problem.program.ineq_residual(u, beta), 0.0)
    dual = (
        _carry_dual(prev.dual, prev_problem, problem) if prev.dual is not None else None
    )
    return WarmStartState(point=ConicPoint(u, beta, s), alpha=prev.alpha.copy(), dual=dual)


# ---------------------------------------------------------------------------
# serialization


def saddle_to_dict(x: SaddlePoint) -> dict:
    return {
        "G_hat": x.G_hat.tolist(),
        "g": x.g.tolist(),
        "a": x.a.tolist(),
        "p": x.p.tolist(),
        "q": x.q.tolist(),
        "beta": x.beta.tolist(),
        "s": x.s.tolist(),
        "alpha": x.alpha.tolist(),
        "tau": x.tau.tolist(),
        "candidates": x.candidates.tolist(),
    }


def saddle_from_dict(payload: dict) -> SaddlePoint:
    return SaddlePoint(
        G_hat=np.asarray(payload["G_hat"], dtype=np.float64),
        g=np.asarray(payload["g"], dtype=np.float64),
        a=np.asarray(payload["a"], dtype=np.float64),
        p=np.asarray(payload["p"], dtype=np.float64),
        q=np.asarray(payload["q"], dtype=np.float64),
        beta=np.asarray(payload["beta"], dtype=np.float64),
        s=np.asarray(payload["s"], dtype=np.float64),
        alpha=np.asarray(payload["alpha"], dtype=np.float64),
        tau=np.asarray(payload["tau"], dtype=np.float64),
        candidates=np.asarray(payload["candidates"], dtype=np.intp),
    )


def saddle_to_json(x: SaddlePoint) -> str:
    return json.dumps(saddle_to_dict(x))


def saddle_from_json(text: str) -> SaddlePoint:
    return saddle_from_dict(json.loads(text))
