"""Generic conic solving machinery.

Problems here take the form

    minimize    <c_lin, u> + (1/2) beta' P_quad beta
    subject to  A_E u = b_E + B_E beta
                A_I u + s = b_I + B_I beta,   s >= 0
                u in C (product of PSD / nonnegative / free blocks)
                u in P (polytope handled by alternating projections)

plus a saddle variant where the linear coefficient on u depends on a dual
vector alpha living in a box.  Symmetric matrix blocks are stored in scaled
vector form (off-diagonal entries times sqrt(2)) so that Frobenius inner
products become plain dot products.

The heavy lifting happens in prox_subproblem, which solves one proximal step
through its dual by block-coordinate passes: two normal systems solved with
conjugate gradients, then closed-form cone / polytope projection updates.
tseng_solve (forward-backward-forward) and nesterov_solve (accelerated
composite inner loop with outer recentering) are built on top of it.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from ._kernels import project_capped_simplex

__all__ = [
    "svec_length",
    "svec",
    "smat",
    "svec_index",
    "ConeBlock",
    "PolytopePiece",
    "PolytopeSpec",
    "ConicProgram",
    "ConicPoint",
    "DualIterate",
    "SolverConfig",
    "WarmStartState",
    "SolveResult",
    "KKTRecord",
    "SolverError",
    "NumericError",
    "BudgetError",
    "StepSizeError",
    "ToleranceError",
    "project_psd",
    "project_box",
    "project_polytope",
    "project_cone",
    "prox_subproblem",
    "prox_primal_value",
    "prox_dual_value",
    "polytope_support",
    "kkt_residual",
    "power_lambda_max",
    "estimate_lipschitz",
    "ppa_minimize",
    "tseng_solve",
    "accelerated_composite",
    "nesterov_solve",
    "dump_trace",
]

_SQRT2 = math.sqrt(2.0)


class SolverError(RuntimeError):
    """Base class for solver failures."""


class NumericError(SolverError):
    """Linear-algebra breakdown (eigensolver or CG failure)."""


class BudgetError(SolverError):
    """Iteration budget exhausted before reaching tolerance."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class StepSizeError(SolverError):
    """Persistent divergence; the step size is too large for this operator."""


class ToleranceError(SolverError):
    """Alternating projections failed to reach tolerance within the sweep cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------------------
# Scaled symmetric vectorization


def svec_length(m: int) -> int:
    return m * (m + 1) // 2


def _triu_cache(m: int):
    rows, cols = np.triu_indices(m)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return rows, cols, scale


def svec(M: np.ndarray) -> np.ndarray:
    """Stack the upper triangle with off-diagonals scaled by sqrt(2)."""
    m = M.shape[0]
    rows, cols, scale = _triu_cache(m)
    return M[rows, cols] * scale


def smat(v: np.ndarray, m: int) -> np.ndarray:
    """Inverse of svec."""
    rows, cols, scale = _triu_cache(m)
    M = np.zeros((m, m))
    vals = np.asarray(v) / scale
    M[rows, cols] = vals
    M[cols, rows] = vals
    return M


def svec_index(m: int, i: int, j: int) -> int:
    """Flat position of entry (i, j), i <= j, in the svec ordering."""
    if i > j:
        i, j = j, i
    # ordering follows np.triu_indices: row-major over the upper triangle
    return i * m - i * (i - 1) // 2 + (j - i)


# ---------------------------------------------------------------------------
# Program containers


@dataclass
class ConeBlock:
    """One factor of the product cone C.

    kind "psd" stores a size x size symmetric matrix in svec form; "nonneg"
    and "free" are plain vectors.
    """

    kind: str
    size: int
    offset: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("psd", "nonneg", "free"):
            raise ValueError(f"unknown cone block kind {self.kind!r}")

    @property
    def length(self) -> int:
        return svec_length(self.size) if self.kind == "psd" else self.size


@dataclass
class PolytopePiece:
    """One convex set in the alternating-projection decomposition of P.

    All bounds are expressed in matrix-entry units; `scale` converts between
    those and the flat coordinates (sqrt(2) for off-diagonal svec coords).
      box:     lo <= u[idx]/scale <= hi
      cap:     sum(u[idx]/scale) <= rhs
      simplex: u[idx]/scale in {lo <= w <= hi, sum w = total}
    """

    kind: str
    idx: np.ndarray
    scale: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    rhs: float = 0.0
    total: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("box", "cap", "simplex"):
            raise ValueError(f"unknown polytope piece {self.kind!r}")
        self.idx = np.asarray(self.idx, dtype=np.intp)

    def project(self, w: np.ndarray) -> np.ndarray:
        # w is already in matrix-entry units
        if self.kind == "box":
            return np.clip(w, self.lo, self.hi)
        if self.kind == "cap":
            excess = w.sum() - self.rhs
            if excess <= 0.0:
                return w.copy()
            return w - excess / w.size
        return project_capped_simplex(w, self.total, self.lo, self.hi)


@dataclass
class PolytopeSpec:
    """Intersection of pieces; coordinates not covered by any piece are free."""

    pieces: list = field(default_factory=list)
    tol: float = 1e-9
    max_sweeps: int = 500

    def __post_init__(self) -> None:
        # group pieces whose index sets overlap; disjoint groups project independently
        groups: list[list[int]] = []
        supports: list[set] = []
        for k, piece in enumerate(self.pieces):
            s = set(piece.idx.tolist())
            hit = [gi for gi, sup in enumerate(supports) if sup & s]
            if not hit:
                groups.append([k])
                supports.append(s)
            else:
                keep = hit[0]
                for gi in reversed(hit[1:]):
                    groups[keep].extend(groups.pop(gi))
                    supports[keep] |= supports.pop(gi)
                groups[keep].append(k)
                supports[keep] |= s
        self._groups = groups


def project_psd(M: np.ndarray) -> np.ndarray:
    """Nearest positive-semidefinite matrix in Frobenius norm."""
    A = 0.5 * (M + M.T)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise NumericError(
            f"eigensolver failure on {A.shape[0]}x{A.shape[0]} block, "
            f"norm {np.linalg.norm(A):.3e}"
        ) from exc
    if w[0] >= 0.0:
        return A
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


def project_box(v: np.ndarray, lo, hi) -> np.ndarray:
    """Componentwise clamp."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(lo > hi):
        raise ValueError("box has lo > hi")
    return np.clip(np.asarray(v, dtype=np.float64), lo, hi)


def project_polytope(v: np.ndarray, spec: PolytopeSpec) -> np.ndarray:
    """Euclidean projection onto the intersection of the spec's pieces.

    Dykstra's alternating projections with correction increments, run
    separately on each group of overlapping pieces.  Groups with a single
    piece reduce to one exact projection.
    """
    out = np.array(v, dtype=np.float64, copy=True)
    for group in spec._groups:
        pieces = [spec.pieces[k] for k in group]
        if len(pieces) == 1:
            piece = pieces[0]
            out[piece.idx] = piece.project(out[piece.idx] / piece.scale) * piece.scale
            continue
        _dykstra_group(out, pieces, spec.tol, spec.max_sweeps)
    return out


def _dykstra_group(out: np.ndarray, pieces: list, tol: float, max_sweeps: int) -> None:
    union = np.unique(np.concatenate([p.idx for p in pieces]))
    pos = {int(c): k for k, c in enumerate(union)}
    x = out[union].copy()
    incs = [np.zeros(p.idx.size) for p in pieces]
    sub_idx = [np.array([pos[int(c)] for c in p.idx], dtype=np.intp) for p in pieces]
    for _ in range(max_sweeps):
        x_prev = x.copy()
        max_inc_move = 0.0
        for piece, inc, si in zip(pieces, incs, sub_idx):
            w = (x[si] + inc) / piece.scale
            proj = piece.project(w) * piece.scale
            new_inc = x[si] + inc - proj
            max_inc_move = max(max_inc_move, float(np.max(np.abs(new_inc - inc))) if inc.size else 0.0)
            inc[:] = new_inc
            x[si] = proj
        move = float(np.max(np.abs(x - x_prev))) if x.size else 0.0
        if max(move, max_inc_move) <= tol:
            out[union] = x
            return
    raise ToleranceError(
        f"polytope projection did not converge in {max_sweeps} sweeps",
        residual=max(move, max_inc_move),
    )


@dataclass
class ConicProgram:
    """Static description of one conic problem instance."""

    blocks: list
    A_E: sp.csr_matrix
    b_E: np.ndarray
    A_I: sp.csr_matrix
    b_I: np.ndarray
    polytope: PolytopeSpec
    beta_dim: int = 0
    B_E: np.ndarray | None = None
    B_I: np.ndarray | None = None
    P_quad: np.ndarray | None = None
    Q_metric: np.ndarray | None = None
    c_lin: np.ndarray | None = None

    def __post_init__(self) -> None:
        offset = 0
        for blk in self.blocks:
            blk.offset = offset
            offset += blk.length
        self.dim = offset
        self.b_E = np.asarray(self.b_E, dtype=np.float64)
        self.b_I = np.asarray(self.b_I, dtype=np.float64)
        self.A_E = sp.csr_matrix(self.A_E, shape=(self.b_E.size, self.dim))
        self.A_I = sp.csr_matrix(self.A_I, shape=(self.b_I.size, self.dim))
        if self.beta_dim:
            if self.B_E is None:
                self.B_E = np.zeros((self.b_E.size, self.beta_dim))
            if self.B_I is None:
                self.B_I = np.zeros((self.b_I.size, self.beta_dim))
            if self.P_quad is None:
                self.P_quad = np.zeros((self.beta_dim, self.beta_dim))
            if self.Q_metric is None:
                self.Q_metric = np.eye(self.beta_dim)
        if self.c_lin is None:
            self.c_lin = np.zeros(self.dim)

    @property
    def n_eq(self) -> int:
        return self.b_E.size

    @property
    def n_ineq(self) -> int:
        return self.b_I.size

    def block(self, k: int, u: np.ndarray) -> np.ndarray:
        blk = self.blocks[k]
        seg = u[blk.offset : blk.offset + blk.length]
        return smat(seg, blk.size) if blk.kind == "psd" else seg

    def eq_residual(self, u: np.ndarray, beta: np.ndarray | None) -> np.ndarray:
        r = self.A_E @ u - self.b_E
        if self.beta_dim and beta is not None:
            r -= self.B_E @ beta
        return r

    def ineq_residual(self, u: np.ndarray, beta: np.ndarray | None) -> np.ndarray:
        r = self.A_I @ u - self.b_I
        if self.beta_dim and beta is not None:
            r -= self.B_I @ beta
        return r


def project_cone(program: ConicProgram, u: np.ndarray) -> np.ndarray:
    """Project onto the product cone C block by block."""
    out = np.array(u, dtype=np.float64, copy=True)
    for blk in program.blocks:
        seg = out[blk.offset : blk.offset + blk.length]
        if blk.kind == "psd":
            out[blk.offset : blk.offset + blk.length] = svec(project_psd(smat(seg, blk.size)))
        elif blk.kind == "nonneg":
            np.maximum(seg, 0.0, out=seg)
    return out


def _cone_dual_project(program: ConicProgram, w: np.ndarray) -> np.ndarray:
    # dual multiplier S = Pi_C(w); free blocks have trivial dual {0}
    out = np.array(w, dtype=np.float64, copy=True)
    for blk in program.blocks:
        seg = out[blk.offset : blk.offset + blk.length]
        if blk.kind == "psd":
            out[blk.offset : blk.offset + blk.length] = svec(project_psd(smat(seg, blk.size)))
        elif blk.kind == "nonneg":
            np.maximum(seg, 0.0, out=seg)
        else:
            seg[:] = 0.0
    return out


def cone_distance(program: ConicProgram, u: np.ndarray) -> float:
    """Max violation of cone membership over blocks (0 when u in C)."""
    worst = 0.0
    for blk in program.blocks:
        seg = u[blk.offset : blk.offset + blk.length]
        if blk.kind == "psd":
            w = np.linalg.eigvalsh(smat(seg, blk.size))
            worst = max(worst, float(max(0.0, -w[0])))
        elif blk.kind == "nonneg":
            if seg.size:
                worst = max(worst, float(max(0.0, -seg.min())))
    return worst


# ---------------------------------------------------------------------------
# Iterate containers


@dataclass
class ConicPoint:
    """Primal iterate: flat cone vector u, coupling beta, inequality slack s."""

    u: np.ndarray
    beta: np.ndarray
    s: np.ndarray

    def copy(self) -> "ConicPoint":
        return ConicPoint(self.u.copy(), self.beta.copy(), self.s.copy())

    @staticmethod
    def zeros(program: ConicProgram) -> "ConicPoint":
        return ConicPoint(
            np.zeros(program.dim), np.zeros(program.beta_dim), np.zeros(program.n_ineq)
        )

    def metric_dist(self, other: "ConicPoint", Q: np.ndarray | None = None) -> float:
        du = self.u - other.u
        ds = self.s - other.s
        db = self.beta - other.beta
        quad = float(db @ Q @ db) if (Q is not None and db.size) else float(db @ db)
        return math.sqrt(float(du @ du) + float(ds @ ds) + quad)


@dataclass
class DualIterate:
    """Multipliers for one conic program.

    S: cone dual (flat, same layout as u); Z: polytope dual; v: slack-cone
    dual; y_E, y_I: equality / inequality row multipliers.
    """

    S: np.ndarray
    Z: np.ndarray
    v: np.ndarray
    y_E: np.ndarray
    y_I: np.ndarray

    @staticmethod
    def zeros(program: ConicProgram) -> "DualIterate":
        return DualIterate(
            S=np.zeros(program.dim),
            Z=np.zeros(program.dim),
            v=np.zeros(program.n_ineq),
            y_E=np.zeros(program.n_eq),
            y_I=np.zeros(program.n_ineq),
        )

    def copy(self) -> "DualIterate":
        return DualIterate(self.S.copy(), self.Z.copy(), self.v.copy(), self.y_E.copy(), self.y_I.copy())


@dataclass
class SolverConfig:
    """Knobs shared by the splitting and accelerated drivers.

    rho is the prox strength (1/gamma when gamma is given); Q_metric overrides
    the program's beta-block metric; lipschitz optionally carries a
    pre-estimated (L_alpha_alpha, L_alpha_x) pair.
    """

    rho: float = 1.0
    gamma: float | None = None
    tol_fixed_point: float = 1e-7
    tol_inner: float = 1e-6
    max_outer: int = 2000
    max_inner: int = 200
    Q_metric: np.ndarray | None = None
    lipschitz: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class WarmStartState:
    """Everything needed to resume after a problem update."""

    point: ConicPoint
    alpha: np.ndarray
    dual: DualIterate | None = None
    accumulator: dict | None = None


@dataclass
class SolveResult:
    point: ConicPoint
    alpha: np.ndarray
    objective: float
    iterations: int
    converged: bool
    trace: list
    dual: DualIterate | None
    warm: WarmStartState


@dataclass
class KKTRecord:
    eq: float
    ineq: float
    cone_gap: float
    polytope_gap: float
    slack_neg: float
    dual_feas: float
    complementarity: float
    stationarity: float

    @property
    def max(self) -> float:
        vals = [self.eq, self.ineq, self.cone_gap, self.polytope_gap, self.slack_neg,
                self.dual_feas, self.complementarity]
        if not math.isnan(self.stationarity):
            vals.append(self.stationarity)
        return max(vals)


# ---------------------------------------------------------------------------
# Proximal subproblem through its dual


@dataclass
class ProxInfo:
    sweeps: int
    kkt: float
    consensus: float


def _cg_solve(matvec, size: int, rhs: np.ndarray, x0: np.ndarray, tol: float):
    if size == 0:
        return x0
    op = LinearOperator((size, size), matvec=matvec)
    sol, info = cg(op, rhs, x0=x0, rtol=tol, atol=tol * 1e-2, maxiter=10 * size + 50)
    if info < 0:  # pragma: no cover - scipy internal breakdown
        raise NumericError(f"conjugate-gradient breakdown (info={info})")
    return sol


def prox_subproblem(
    program: ConicProgram,
    center: ConicPoint,
    c_u: np.ndarray,
    rho: float,
    tol: float = 1e-8,
    dual: DualIterate | None = None,
    min_sweeps: int = 3,
    max_sweeps: int = 200,
) -> tuple[ConicPoint, DualIterate, ProxInfo]:
    """One proximal step, solved via its dual.

    Minimizes  -<c_u, u> + (1/2) beta' P_quad beta
               + (rho/2) (|u - u_k|^2 + |s - s_k|^2 + |beta - beta_k|_Q^2)
    over the program's constraints.  Block passes: conjugate-gradient solves
    of the two normal systems in (y_E, y_I), then closed-form updates of the
    cone dual S, polytope dual Z, slack dual v, and beta.  The returned point
    is the polytope-side primal recovery (so polytope equalities hold tightly).
    """
    u_k, s_k, beta_k = center.u, center.s, center.beta
    nE, nI, bd = program.n_eq, program.n_ineq, program.beta_dim
    d = dual.copy() if dual is not None else DualIterate.zeros(program)
    A_E, A_I = program.A_E, program.A_I
    A_E_T, A_I_T = A_E.T.tocsr(), A_I.T.tocsr()

    if bd:
        Q = program.Q_metric
        R_fac = cho_factor(program.P_quad + rho * Q, lower=True)
        R_BEt = cho_solve(R_fac, program.B_E.T) if nE else np.zeros((bd, 0))
        R_BIt = cho_solve(R_fac, program.B_I.T) if nI else np.zeros((bd, 0))
        BE_R_BEt = program.B_E @ R_BEt if nE else np.zeros((0, 0))
        BI_R_BIt = program.B_I @ R_BIt if nI else np.zeros((0, 0))
        rhoQbk = rho * (Q @ beta_k)
    else:
        R_fac = None
        rhoQbk = np.zeros(0)

    AE_AEt = (A_E @ A_E_T).tocsr() if nE else None
    AI_AIt = (A_I @ A_I_T).tocsr() if nI else None

    def mv_E(y):
        out = AE_AEt @ y
        if bd:
            out = out + rho * (BE_R_BEt @ y)
        return out

    def mv_I(y):
        out = AI_AIt @ y + y
        if bd:
            out = out + rho * (BI_R_BIt @ y)
        return out

    u_cone = u_k.copy()
    u_poly = u_k.copy()
    s = s_k.copy()
    beta = beta_k.copy()
    kkt = math.inf
    consensus = math.inf
    cg_tol = max(tol * 1e-2, 1e-13)

    for sweep in range(1, max_sweeps + 1):
        cSZu = c_u + d.S + d.Z + rho * u_k
        AIt_yI = A_I_T @ d.y_I if nI else np.zeros(program.dim)
        if nE:
            rhs_E = rho * program.b_E - A_E @ (AIt_yI + cSZu)
            if bd:
                t = program.B_I.T @ d.y_I - rhoQbk if nI else -rhoQbk
                rhs_E -= rho * (program.B_E @ cho_solve(R_fac, t))
            d.y_E = _cg_solve(mv_E, nE, rhs_E, d.y_E, cg_tol)
        AEt_yE = A_E_T @ d.y_E if nE else np.zeros(program.dim)
        if nI:
            rhs_I = rho * program.b_I - A_I @ (AEt_yE + cSZu) - d.v - rho * s_k
            if bd:
                ress = program.B_E.T @ d.y_E - rhoQbk if nE else -rhoQbk
                rhs_I -= rho * (program.B_I @ cho_solve(R_fac, ress))
            d.y_I = _cg_solve(mv_I, nI, rhs_I, d.y_I, cg_tol)
            AIt_yI = A_I_T @ d.y_I

        Ay = AEt_yE + AIt_yI
        W = Ay + c_u + d.Z + rho * u_k
        d.S = _cone_dual_project(program, -W)
        u_cone = (W + d.S) / rho

        M = Ay + c_u + d.S + rho * u_k
        u_poly = project_polytope(M / rho, program.polytope)
        d.Z = rho * u_poly - M

        if nI:
            d.v = np.maximum(-(d.y_I + rho * s_k), 0.0)
            s = np.maximum(s_k + d.y_I / rho, 0.0)

        if bd:
            By = np.zeros(bd)
            if nE:
                By += program.B_E.T @ d.y_E
            if nI:
                By += program.B_I.T @ d.y_I
            beta = cho_solve(R_fac, rhoQbk - By)

        consensus = float(np.max(np.abs(u_cone - u_poly))) if program.dim else 0.0
        r_eq = program.eq_residual(u_poly, beta)
        r_in = program.ineq_residual(u_poly, beta) + s if nI else np.zeros(0)
        compl = 0.0
        if program.dim:
            compl = abs(float(d.S @ u_poly)) / (1.0 + program.dim)
        if nI:
            compl = max(compl, abs(float(d.v @ s)) / (1.0 + nI))
        kkt = max(
            consensus,
            float(np.max(np.abs(r_eq))) if nE else 0.0,
            float(np.max(np.abs(r_in))) if nI else 0.0,
            compl,
        )
        if sweep >= min_sweeps and kkt <= tol:
            break
    point = ConicPoint(u_poly, beta, s)
    return point, d, ProxInfo(sweeps=sweep, kkt=kkt, consensus=consensus)


def prox_primal_value(
    program: ConicProgram, center: ConicPoint, c_u: np.ndarray, rho: float, point: ConicPoint
) -> float:
    """Objective of the proximal subproblem at a feasible point."""
    du = point.u - center.u
    val = -float(c_u @ point.u) + 0.5 * rho * float(du @ du)
    if program.n_ineq:
        ds = point.s - center.s
        val += 0.5 * rho * float(ds @ ds)
    if program.beta_dim:
        db = point.beta - center.beta
        val += 0.5 * float(point.beta @ program.P_quad @ point.beta)
        val += 0.5 * rho * float(db @ program.Q_metric @ db)
    return val


def polytope_support(spec: PolytopeSpec, z: np.ndarray) -> float:
    """Support function sup{<z, u> : u in the polytope}.

    Coordinates not covered by any piece are unconstrained in the polytope, so
    a valid multiplier is zero there and their contribution is omitted.  Each
    overlapping group becomes one small linear program; box and simplex pieces
    supply variable bounds, cap and simplex pieces supply rows.
    """
    from scipy.optimize import linprog

    total = 0.0
    for group in spec._groups:
        pieces = [spec.pieces[k] for k in group]
        union = np.unique(np.concatenate([p.idx for p in pieces]))
        pos = {int(c): j for j, c in enumerate(union)}
        m = union.size
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        A_ub, b_ub, A_eq, b_eq = [], [], [], []
        for piece in pieces:
            sub = np.array([pos[int(c)] for c in piece.idx], dtype=np.intp)
            if piece.kind in ("box", "simplex"):
                lo[sub] = np.maximum(lo[sub], piece.scale * piece.lo)
                hi[sub] = np.minimum(hi[sub], piece.scale * piece.hi)
            if piece.kind == "cap":
                row = np.zeros(m)
                row[sub] = 1.0 / piece.scale
                A_ub.append(row)
                b_ub.append(piece.rhs)
            if piece.kind == "simplex":
                row = np.zeros(m)
                row[sub] = 1.0 / piece.scale
                A_eq.append(row)
                b_eq.append(piece.total)
        res = linprog(
            -z[union],
            A_ub=np.array(A_ub) if A_ub else None,
            b_ub=np.array(b_ub) if b_ub else None,
            A_eq=np.array(A_eq) if A_eq else None,
            b_eq=np.array(b_eq) if b_eq else None,
            bounds=list(zip(lo, hi)),
            method="highs",
        )
        if res.status == 3:
            return math.inf
        if not res.success:  # pragma: no cover - degenerate spec
            raise NumericError(f"support-function LP failed: {res.message}")
        total += -float(res.fun)
    return total


def prox_dual_value(
    program: ConicProgram, center: ConicPoint, c_u: np.ndarray, rho: float, dual: DualIterate
) -> float:
    """Lagrangian dual value of the proximal subproblem at a dual iterate.

    Every inner minimization is available in closed form (the subproblem is a
    strongly convex quadratic), so the value is exact up to the support-
    function linear programs.  Any feasible dual iterate yields a lower bound
    on prox_primal_value over the feasible set.
    """
    nE, nI, bd = program.n_eq, program.n_ineq, program.beta_dim
    val = 0.0
    w = c_u.copy()
    if nE:
        val += float(program.b_E @ dual.y_E)
        w += program.A_E.T @ dual.y_E
    if nI:
        val += float(program.b_I @ dual.y_I)
        w += program.A_I.T @ dual.y_I
    w += dual.S + dual.Z
    # the stored Z enters the stationarity residual with a minus sign, so the
    # Fenchel multiplier whose support function closes the bound is -Z
    val -= polytope_support(program.polytope, -dual.Z)
    val -= float(w @ center.u) + float(w @ w) / (2.0 * rho)
    if nI:
        r = dual.y_I + dual.v
        val -= float(r @ center.s) + float(r @ r) / (2.0 * rho)
    if bd:
        By = np.zeros(bd)
        if nE:
            By += program.B_E.T @ dual.y_E
        if nI:
            By += program.B_I.T @ dual.y_I
        t = rho * (program.Q_metric @ center.beta) - By
        beta_star = np.linalg.solve(program.P_quad + rho * program.Q_metric, t)
        val += -0.5 * float(t @ beta_star) + 0.5 * rho * float(
            center.beta @ program.Q_metric @ center.beta
        )
    return val


def kkt_residual(
    program: ConicProgram,
    point: ConicPoint,
    dual: DualIterate,
    center: ConicPoint | None = None,
    c_u: np.ndarray | None = None,
    rho: float | None = None,
) -> KKTRecord:
    """Residual record for a primal-dual pair.

    With (center, c_u, rho) given, also measures stationarity of the proximal
    objective; otherwise that field is NaN.  All norms are infinity norms.
    """
    u, beta, s = point.u, point.beta, point.s
    nE, nI = program.n_eq, program.n_ineq
    eq = float(np.max(np.abs(program.eq_residual(u, beta)))) if nE else 0.0
    ineq = float(np.max(np.abs(program.ineq_residual(u, beta) + s))) if nI else 0.0
    cone_gap = cone_distance(program, u)
    poly_gap = float(np.max(np.abs(u - project_polytope(u, program.polytope)))) if program.dim else 0.0
    slack_neg = float(max(0.0, -s.min())) if nI else 0.0
    dual_feas = cone_distance(program, dual.S)
    if nI and dual.v.size:
        dual_feas = max(dual_feas, float(max(0.0, -dual.v.min())))
    compl = abs(float(dual.S @ u)) / (1.0 + program.dim)
    if nI:
        compl = max(compl, abs(float(dual.v @ s)) / (1.0 + nI))
    stat = math.nan
    if center is not None and c_u is not None and rho is not None:
        Ay = np.zeros(program.dim)
        if nE:
            Ay += program.A_E.T @ dual.y_E
        if nI:
            Ay += program.A_I.T @ dual.y_I
        r_u = rho * (u - center.u) - c_u - Ay - dual.S - dual.Z
        stat = float(np.max(np.abs(r_u))) if r_u.size else 0.0
        if program.beta_dim:
            By = np.zeros(program.beta_dim)
            if nE:
                By += program.B_E.T @ dual.y_E
            if nI:
                By += program.B_I.T @ dual.y_I
            r_b = program.P_quad @ beta + rho * (program.Q_metric @ (beta - center.beta)) + By
            stat = max(stat, float(np.max(np.abs(r_b))))
        if nI:
            r_s = rho * (s - center.s) - dual.y_I - dual.v
            stat = max(stat, float(np.max(np.abs(r_s))) if r_s.size else 0.0)
    return KKTRecord(eq, ineq, cone_gap, poly_gap, slack_neg, dual_feas, compl, stat)


# ---------------------------------------------------------------------------
# Lipschitz estimation


def power_lambda_max(M: np.ndarray, iters: int = 20, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = M.shape[0]
    if n == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    for _ in range(iters):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            return 0.0
        v = w / nw
    return float(v @ (M @ v))


def estimate_lipschitz(problem, rng=None, samples: int = 8, iters: int = 20) -> tuple[float, float]:
    """Empirical (L_alpha_alpha, L_alpha_x) pair, inflated by a 1.2 safety factor.

    L_alpha_alpha bounds the curvature of the alpha block (largest eigenvalue
    of the alpha Hessian over sampled feasible points); L_alpha_x bounds how
    fast the alpha gradient moves when the conic point moves, probed by finite
    differences across sampled feasible pairs.
    """
    rng = np.random.default_rng(rng if rng is not None else 0)
    pts = [problem.sample_feasible(rng) for _ in range(samples)]
    L_aa = 0.0
    for k, pt in enumerate(pts):
        H = problem.alpha_hessian(pt)
        L_aa = max(L_aa, power_lambda_max(H, iters=iters, seed=k))
    lo, hi = problem.alpha_bounds()
    alpha0 = 0.5 * (lo + hi)
    Q = problem.program.Q_metric
    L_ax = 0.0
    grads = [problem.grad_alpha(pt, alpha0) for pt in pts]
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            dist = pts[a].metric_dist(pts[b], Q)
            if dist <= 1e-12:
                continue
            L_ax = max(L_ax, float(np.linalg.norm(grads[a] - grads[b])) / dist)
    return 1.2 * L_aa, 1.2 * L_ax


# ---------------------------------------------------------------------------
# Pure minimization driver (outer proximal-point loop)


def ppa_minimize(
    program: ConicProgram,
    cfg: SolverConfig,
    x0: ConicPoint | None = None,
    dual: DualIterate | None = None,
    trace_path=None,
) -> SolveResult:
    """Minimize the program's own objective by repeated proximal steps."""
    x = x0.copy() if x0 is not None else ConicPoint.zeros(program)
    c_u = -program.c_lin
    tol_inner = cfg.tol_inner
    trace: list[dict] = []
    converged = False
    for it in range(1, cfg.max_outer + 1):
        t0 = time.perf_counter()
        x_new, dual, info = prox_subproblem(
            program, x, c_u, cfg.rho, tol=tol_inner, dual=dual, max_sweeps=cfg.max_inner
        )
        move = x_new.metric_dist(x, program.Q_metric) / max(1.0, x.metric_dist(ConicPoint.zeros(program), program.Q_metric))
        obj = float(program.c_lin @ x_new.u)
        if program.beta_dim:
            obj += 0.5 * float(x_new.beta @ program.P_quad @ x_new.beta)
        trace.append(
            {
                "iter": it,
                "objective": obj,
                "fixed_point_residual": move,
                "kkt_max": info.kkt,
                "inner_iters": info.sweeps,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
        )
        x = x_new
        tol_inner = max(0.5 * tol_inner, 1e-12)
        if move <= cfg.tol_fixed_point:
            converged = True
            break
    if trace_path is not None:
        dump_trace(trace, trace_path)
    if not converged:
        raise BudgetError(f"proximal loop hit max_outer={cfg.max_outer}", trace)
    warm = WarmStartState(point=x, alpha=np.zeros(0), dual=dual)
    return SolveResult(x, np.zeros(0), trace[-1]["objective"], len(trace), converged, trace, dual, warm)


# ---------------------------------------------------------------------------
# Saddle drivers


def _default_gamma(problem, cfg: SolverConfig) -> tuple[float, tuple[float, float]]:
    lip = cfg.lipschitz
    if lip is None:
        lip = estimate_lipschitz(problem)
    L = 1.05 * (lip[0] + lip[1])
    gamma = cfg.gamma if cfg.gamma is not None else 0.9 / max(L, 1e-9)
    return gamma, lip


def _feasible(problem, point: ConicPoint) -> ConicPoint:
    u = project_cone(problem.program, point.u)
    u = project_polytope(u, problem.program.polytope)
    return ConicPoint(u, point.beta.copy(), point.s.copy())


def tseng_solve(problem, cfg: SolverConfig, warm: WarmStartState | None = None, trace_path=None) -> SolveResult:
    """Forward-backward-forward splitting on the saddle problem.

    Each iteration takes an alpha half-step, solves the proximal conic
    subproblem at the shifted linear term, re-evaluates the alpha gradient at
    the prox output, and projects.  The step gamma is backtracked (halved)
    when the fixed-point residual grows for 10 consecutive iterations.
    """
    program = problem.program
    gamma, lip = _default_gamma(problem, cfg)
    lo, hi = problem.alpha_bounds()
    if warm is not None:
        x = warm.point.copy()
        alpha = warm.alpha.copy()
        dual = warm.dual.copy() if warm.dual is not None else None
    else:
        x, alpha = problem.initial_point()
        dual = None
    tol_inner = cfg.tol_inner
    trace: list[dict] = []
    converged = False
    prev_res = math.inf
    best_res = math.inf
    grow_streak = 0
    halvings = 0
    it = 0
    while it < cfg.max_outer:
        it += 1
        t0 = time.perf_counter()
        g1 = problem.grad_alpha(x, alpha)
        alpha_y = np.clip(alpha - gamma * g1, lo, hi)
        c_u = problem.build_cu(alpha_y)
        x_z, dual, info = prox_subproblem(
            program, x, c_u, 1.0 / gamma, tol=tol_inner, dual=dual, max_sweeps=cfg.max_inner
        )
        g2 = problem.grad_alpha(x_z, alpha_y)
        alpha_new = np.clip(alpha - gamma * g2, lo, hi)
        x_new = _feasible(problem, x_z)
        num = math.sqrt(
            x_new.metric_dist(x, program.Q_metric) ** 2 + float((alpha_new - alpha) @ (alpha_new - alpha))
        )
        den = max(1.0, math.sqrt(x.metric_dist(ConicPoint.zeros(program), program.Q_metric) ** 2 + float(alpha @ alpha)))
        res = num / den
        obj = problem.objective(x_new, alpha_new)
        trace.append(
            {
                "iter": it,
                "objective": obj,
                "fixed_point_residual": res,
                "kkt_max": info.kkt,
                "inner_iters": info.sweeps,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
        )
        if res > prev_res:
            grow_streak += 1
            if grow_streak >= 10:
                halvings += 1
                if halvings > 6:
                    raise StepSizeError(
                        f"residual kept growing after {halvings - 1} step halvings; "
                        f"gamma={gamma:.3e} is too large for this operator"
                    )
                gamma *= 0.5
                grow_streak = 0
        else:
            grow_streak = 0
        if res < best_res:
            # a new global low means the growth phases were transient, not a
            # divergent step size; restore the halving budget
            best_res = res
            halvings = 0
        prev_res = res
        x, alpha = x_new, alpha_new
        tol_inner = max(0.5 * tol_inner, 1e-12)
        if res <= cfg.tol_fixed_point:
            converged = True
            break
    if trace_path is not None:
        dump_trace(trace, trace_path)
    if not converged:
        raise BudgetError(f"tseng_solve hit max_outer={cfg.max_outer}", trace)
    warm_out = WarmStartState(point=x, alpha=alpha, dual=dual)
    return SolveResult(x, alpha, trace[-1]["objective"], it, converged, trace, dual, warm_out)


def accelerated_composite(
    grad: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    center: np.ndarray,
    L: float,
    mu: float = 0.0,
    max_iter: int = 200,
    tol: float = 1e-9,
    on_point: Callable[[float, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, int, list[np.ndarray]]:
    """Accelerated composite minimization by estimate sequences.

    Minimizes a smooth convex f (queried through grad) plus
    (mu/2)|a - center|^2 plus the indicator realized by `project`.  The
    estimate function stays quadratic around `center`; its minimizer feeds the
    similar-triangles mixing.  Returns the guaranteed averaged point, the
    iteration count, and the iterate history.  on_point(weight, query_point)
    fires at every gradient query so callers can average auxiliary state.
    """
    A = 0.0
    v = center.copy()
    xbar = center.copy()
    sum_ag = np.zeros_like(center)
    history: list[np.ndarray] = []
    k = 0
    for k in range(1, max_iter + 1):
        oneA = 1.0 + mu * A
        a = (oneA + math.sqrt(oneA * oneA + 2.0 * L * oneA * A)) / L
        A_new = A + a
        y = (A * xbar + a * v) / A_new
        g = grad(y)
        if on_point is not None:
            on_point(a / A_new, y)
        sum_ag += a * g
        v = project(center - sum_ag / (1.0 + mu * A_new))
        xbar_prev = xbar
        xbar = (A * xbar + a * v) / A_new
        A = A_new
        history.append(xbar.copy())
        moved = float(np.linalg.norm(xbar - xbar_prev)) / max(1.0, float(np.linalg.norm(xbar)))
        if k >= 2 and moved <= tol:
            break
    return xbar, k, history


def nesterov_solve(problem, cfg: SolverConfig, warm: WarmStartState | None = None, trace_path=None) -> SolveResult:
    """Accelerated composite inner loop with outer recentering.

    Inner: minimize over alpha the prox-regularized worst case
    f_reg(alpha) = max_x {f(x, alpha) - (rho/2)|x - x_center|^2} plus
    (rho/2)|alpha - alpha_center|^2 on the box, with gradients supplied by the
    inner argmax (one proximal conic solve per query).  Outer: recenter at the
    averaged output and repeat; the recentering fixed point is a saddle point
    of the unregularized problem.
    """
    program = problem.program
    lip = cfg.lipschitz if cfg.lipschitz is not None else estimate_lipschitz(problem)
    rho = cfg.rho
    L_inner = 2.0 * (lip[0] + lip[1] ** 2 / rho)
    lo, hi = problem.alpha_bounds()
    if warm is not None:
        x_st = warm.point.copy()
        alpha_st = warm.alpha.copy()
        dual = warm.dual.copy() if warm.dual is not None else None
    else:
        x_st, alpha_st = problem.initial_point()
        dual = None
    tol_inner = cfg.tol_inner
    trace: list[dict] = []
    converged = False
    it = 0
    while it < cfg.max_outer:
        it += 1
        t0 = time.perf_counter()
        state = {"dual": dual, "kkt": 0.0, "sweeps": 0, "x_avg": None}

        def grad(alpha_q):
            c_u = problem.build_cu(alpha_q)
            x_q, d_q, info = prox_subproblem(
                program, x_st, c_u, rho, tol=tol_inner, dual=state["dual"], max_sweeps=cfg.max_inner
            )
            state["dual"] = d_q
            state["kkt"] = max(state["kkt"], info.kkt)
            state["sweeps"] += info.sweeps
            state["last_x"] = x_q
            return problem.grad_alpha(x_q, alpha_q)

        def project(vv):
            return np.clip(vv, lo, hi)

        def on_point(weight, _alpha_q):
            x_q = state["last_x"]
            if state["x_avg"] is None:
                state["x_avg"] = x_q.copy()
            else:
                avg = state["x_avg"]
                avg.u += weight * (x_q.u - avg.u)
                avg.beta += weight * (x_q.beta - avg.beta)
                avg.s += weight * (x_q.s - avg.s)

        alpha_bar, inner_iters, _ = accelerated_composite(
            grad, project, alpha_st, L_inner, mu=rho,
            max_iter=cfg.max_inner, tol=max(tol_inner * 1e-1, 1e-12), on_point=on_point,
        )
        # exact inner argmax at the averaged alpha gives a consistent prox pair
        c_u = problem.build_cu(alpha_bar)
        x_hat, dual, info = prox_subproblem(
            program, x_st, c_u, rho, tol=tol_inner, dual=state["dual"], max_sweeps=cfg.max_inner
        )
        num = math.sqrt(
            x_hat.metric_dist(x_st, program.Q_metric) ** 2
            + float((alpha_bar - alpha_st) @ (alpha_bar - alpha_st))
        )
        den = max(
            1.0,
            math.sqrt(
                x_st.metric_dist(ConicPoint.zeros(program), program.Q_metric) ** 2 + float(alpha_st @ alpha_st)
            ),
        )
        res = num / den
        obj = problem.objective(x_hat, alpha_bar)
        trace.append(
            {
                "iter": it,
                "objective": obj,
                "fixed_point_residual": res,
                "kkt_max": max(state["kkt"], info.kkt),
                "inner_iters": inner_iters,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
        )
        x_st, alpha_st = x_hat, alpha_bar
        tol_inner = max(0.5 * tol_inner, 1e-12)
        if res <= cfg.tol_fixed_point:
            converged = True
            break
    if trace_path is not None:
        dump_trace(trace, trace_path)
    if not converged:
        raise BudgetError(f"nesterov_solve hit max_outer={cfg.max_outer}", trace)
    warm_out = WarmStartState(point=x_st, alpha=alpha_st, dual=dual, accumulator={"A": 0.0})
    return SolveResult(x_st, alpha_st, trace[-1]["objective"], it, converged, trace, dual, warm_out)


def dump_trace(records: Sequence[dict], path) -> None:
    """Write one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
