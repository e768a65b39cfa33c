"""Conic machinery: projections, one prox step, and the two saddle drivers.

Projection oracles are re-derived here from scratch (bisection water-filling,
eigendecomposition certificates) so the implementation under test never
checks itself.  The saddle drivers run against a tiny bilinear game whose
value was frozen from a multi-start quasi-Newton solve of the reduced
max-coordinate objective.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import admm_prox_oracle, random_sc_subproblem
from ralkit._kernels import project_capped_simplex
from ralkit.solver import (
    BudgetError,
    ConeBlock,
    ConicPoint,
    ConicProgram,
    DualIterate,
    PolytopePiece,
    PolytopeSpec,
    SolverConfig,
    StepSizeError,
    ToleranceError,
    WarmStartState,
    accelerated_composite,
    cone_distance,
    dump_trace,
    estimate_lipschitz,
    kkt_residual,
    nesterov_solve,
    polytope_support,
    power_lambda_max,
    ppa_minimize,
    project_box,
    project_cone,
    project_polytope,
    project_psd,
    prox_dual_value,
    prox_primal_value,
    prox_subproblem,
    smat,
    svec,
    svec_index,
    svec_length,
    tseng_solve,
)

# game value for the 3x3 bilinear toy, multi-start L-BFGS-B on the reduced
# objective max_j (M' a)_j - a0' a + (d0/2)|a|^2 over the alpha box
SADDLE_VALUE = -0.02503316029171511


# ---------------------------------------------------------------------------
# symmetric vectorization


def test_svec_roundtrip_and_inner_product():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    A = 0.5 * (A + A.T)
    B = rng.standard_normal((5, 5))
    B = 0.5 * (B + B.T)
    assert svec(A).shape == (svec_length(5),) == (15,)
    np.testing.assert_allclose(smat(svec(A), 5), A, atol=1e-13)
    # Frobenius inner products become plain dots
    assert np.trace(A @ B) == pytest.approx(float(svec(A) @ svec(B)), rel=1e-12)


def test_svec_index_matches_layout():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((4, 4))
    M = 0.5 * (M + M.T)
    v = svec(M)
    for i in range(4):
        for j in range(i, 4):
            scale = 1.0 if i == j else math.sqrt(2.0)
            assert v[svec_index(4, i, j)] == pytest.approx(scale * M[i, j], rel=1e-12)


# ---------------------------------------------------------------------------
# projections


def test_project_psd_known_answer():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    # eigenvalues +-1; keeping the positive part leaves 0.5 * ones
    np.testing.assert_allclose(project_psd(A), 0.5 * np.ones((2, 2)), atol=1e-12)


def test_project_psd_certificate():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = int(rng.integers(2, 6))
        A = rng.standard_normal((m, m))
        A = 0.5 * (A + A.T)
        X = project_psd(A)
        resid = X - A
        scale = 1.0 + float(np.abs(A).max())
        # optimality of the Frobenius projection: X and X - A both sit in the
        # cone and are complementary
        assert np.linalg.eigvalsh(X)[0] >= -1e-10 * scale
        assert np.linalg.eigvalsh(resid)[0] >= -1e-10 * scale
        assert abs(np.trace(X @ resid)) <= 1e-9 * scale * scale
        np.testing.assert_allclose(project_psd(X), X, atol=1e-10 * scale)


def test_project_psd_nonexpansive():
    rng = np.random.default_rng(3)
    for _ in range(10):
        A = rng.standard_normal((4, 4))
        A = 0.5 * (A + A.T)
        B = rng.standard_normal((4, 4))
        B = 0.5 * (B + B.T)
        dproj = np.linalg.norm(project_psd(A) - project_psd(B))
        assert dproj <= np.linalg.norm(A - B) + 1e-12


def test_project_box_basics():
    v = np.array([-2.0, 0.5, 7.0])
    np.testing.assert_allclose(project_box(v, 0.0, 1.0), [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        project_box(v, 2.0, 1.0)


def _capped_simplex_oracle(v, total, lo, hi):
    # bisection on the shift in w = clip(v - t, lo, hi)
    t_lo = float(v.min()) - hi - 1.0
    t_hi = float(v.max()) - lo + 1.0
    for _ in range(200):
        t = 0.5 * (t_lo + t_hi)
        if np.clip(v - t, lo, hi).sum() > total:
            t_lo = t
        else:
            t_hi = t
    return np.clip(v - 0.5 * (t_lo + t_hi), lo, hi)


def test_capped_simplex_against_bisection():
    rng = np.random.default_rng(4)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        v = rng.standard_normal(n) * 2.0
        total = float(rng.uniform(0.2, n - 0.2))
        got = project_capped_simplex(v, total, 0.0, 1.0)
        want = _capped_simplex_oracle(v, total, 0.0, 1.0)
        np.testing.assert_allclose(got, want, atol=1e-8)
        assert got.sum() == pytest.approx(total, abs=1e-9)
    # degenerate budgets pin every coordinate
    np.testing.assert_allclose(project_capped_simplex(rng.standard_normal(4), 4.0, 0.0, 1.0), np.ones(4), atol=1e-12)
    np.testing.assert_allclose(project_capped_simplex(rng.standard_normal(4), 0.0, 0.0, 1.0), np.zeros(4), atol=1e-12)


def test_invalid_kinds_raise():
    with pytest.raises(ValueError):
        ConeBlock("weird", 3)
    with pytest.raises(ValueError):
        PolytopePiece("weird", np.arange(2))


def test_polytope_box_respects_scale():
    # bounds are written in matrix-entry units; the sqrt(2) svec scale must
    # be divided out before clipping and restored after
    spec = PolytopeSpec(pieces=[PolytopePiece("box", np.array([0]), scale=math.sqrt(2.0), lo=0.0, hi=1.0)])
    out = project_polytope(np.array([3.0 * math.sqrt(2.0), 9.0]), spec)
    assert out[0] == pytest.approx(math.sqrt(2.0))
    assert out[1] == 9.0  # uncovered coordinate passes through


def _box_cap_oracle(v, rhs):
    w = np.clip(v, 0.0, 1.0)
    if w.sum() <= rhs:
        return w
    return _capped_simplex_oracle(v, rhs, 0.0, 1.0)


def test_polytope_box_cap_group():
    rng = np.random.default_rng(5)
    idx = np.arange(6)
    spec = PolytopeSpec(
        pieces=[
            PolytopePiece("box", idx, lo=0.0, hi=1.0),
            PolytopePiece("cap", idx, rhs=2.0),
        ]
    )
    for _ in range(10):
        v = rng.standard_normal(6) * 1.5
        np.testing.assert_allclose(project_polytope(v, spec), _box_cap_oracle(v, 2.0), atol=1e-7)


def test_polytope_sweep_budget():
    idx = np.arange(4)
    spec = PolytopeSpec(
        pieces=[
            PolytopePiece("box", idx, lo=0.0, hi=1.0),
            PolytopePiece("cap", idx, rhs=1.0),
        ],
        tol=1e-14,
        max_sweeps=1,
    )
    with pytest.raises(ToleranceError) as exc:
        project_polytope(np.full(4, 2.0), spec)
    assert exc.value.residual > 0.0


def test_project_cone_blockwise():
    prog = ConicProgram(
        blocks=[ConeBlock("psd", 3), ConeBlock("nonneg", 2), ConeBlock("free", 2)],
        A_E=sp.csr_matrix((0, 10)),
        b_E=np.zeros(0),
        A_I=sp.csr_matrix((0, 10)),
        b_I=np.zeros(0),
        polytope=PolytopeSpec(pieces=[]),
    )
    rng = np.random.default_rng(6)
    u = rng.standard_normal(10)
    out = project_cone(prog, u)
    np.testing.assert_allclose(smat(out[:6], 3), project_psd(smat(u[:6], 3)), atol=1e-12)
    np.testing.assert_allclose(out[6:8], np.maximum(u[6:8], 0.0))
    np.testing.assert_allclose(out[8:], u[8:])
    assert cone_distance(prog, out) <= 1e-10


# ---------------------------------------------------------------------------
# one proximal step


def test_prox_duality_gap_closes():
    for seed in (301, 302, 303):
        prog, center, c_u = random_sc_subproblem(seed)
        pt, dual, info = prox_subproblem(prog, center, c_u, 1.0, tol=1e-10, max_sweeps=4000)
        pv = prox_primal_value(prog, center, c_u, 1.0, pt)
        dv = prox_dual_value(prog, center, c_u, 1.0, dual)
        assert dv <= pv + 1e-7 * (1.0 + abs(pv))
        assert pv - dv <= 1e-6 * (1.0 + abs(pv))


def test_prox_matches_consensus_oracle():
    for seed in (304, 305):
        prog, center, c_u = random_sc_subproblem(seed, n_lo=4, n_hi=6)
        pt, _, _ = prox_subproblem(prog, center, c_u, 1.0, tol=1e-10, max_sweeps=4000)
        opt = admm_prox_oracle(prog, center, c_u, 1.0)
        pv = prox_primal_value(prog, center, c_u, 1.0, pt)
        ov = prox_primal_value(prog, center, c_u, 1.0, opt)
        assert abs(pv - ov) <= 1e-5 * (1.0 + abs(pv))


def _toy_psd_program():
    # minimize sqrt(2) * X01 over 2x2 PSD matrices with unit diagonal
    dim = svec_length(2)
    rows = [0, 1]
    cols = [svec_index(2, 0, 0), svec_index(2, 1, 1)]
    A_E = sp.csr_matrix((np.ones(2), (rows, cols)), shape=(2, dim))
    c = np.zeros(dim)
    c[svec_index(2, 0, 1)] = 1.0
    return ConicProgram(
        blocks=[ConeBlock("psd", 2)],
        A_E=A_E,
        b_E=np.ones(2),
        A_I=sp.csr_matrix((0, dim)),
        b_I=np.zeros(0),
        polytope=PolytopeSpec(pieces=[PolytopePiece("box", np.arange(dim), lo=-3.0, hi=3.0)]),
        c_lin=c,
    )


def test_prox_toy_psd_exact():
    prog = _toy_psd_program()
    rng = np.random.default_rng(7)
    center = ConicPoint(rng.standard_normal(prog.dim) * 0.5, np.zeros(0), np.zeros(0))
    c_u = rng.standard_normal(prog.dim)
    pt, _, _ = prox_subproblem(prog, center, c_u, 1.0, tol=1e-12, max_sweeps=6000)
    pv = prox_primal_value(prog, center, c_u, 1.0, pt)
    ov = prox_primal_value(prog, center, c_u, 1.0, admm_prox_oracle(prog, center, c_u, 1.0))
    assert abs(pv - ov) <= 1e-9 * (1.0 + abs(pv))


def test_prox_warm_dual_reuses_progress():
    prog, center, c_u = random_sc_subproblem(306, n_lo=4, n_hi=6)
    _, dual, cold = prox_subproblem(prog, center, c_u, 1.0, tol=1e-8, max_sweeps=2000)
    _, _, warm = prox_subproblem(prog, center, c_u, 1.0, tol=1e-8, dual=dual, max_sweeps=2000)
    assert warm.sweeps <= cold.sweeps


def test_kkt_residual_mirrors_stationarity():
    prog, center, c_u = random_sc_subproblem(307, n_lo=4, n_hi=6)
    pt, dual, info = prox_subproblem(prog, center, c_u, 1.0, tol=1e-9, max_sweeps=3000)
    rec = kkt_residual(prog, pt, dual, center, c_u, 1.0)
    assert rec.max <= 1e-6
    # independent recompute of the stationarity block
    Ay = prog.A_E.T @ dual.y_E + prog.A_I.T @ dual.y_I
    r_u = 1.0 * (pt.u - center.u) - c_u - Ay - dual.S - dual.Z
    stat = float(np.max(np.abs(r_u)))
    By = prog.B_E.T @ dual.y_E + prog.B_I.T @ dual.y_I
    r_b = prog.P_quad @ pt.beta + prog.Q_metric @ (pt.beta - center.beta) + By
    stat = max(stat, float(np.max(np.abs(r_b))))
    r_s = (pt.s - center.s) - dual.y_I - dual.v
    stat = max(stat, float(np.max(np.abs(r_s))))
    assert rec.stationarity == pytest.approx(stat, rel=1e-12, abs=1e-15)
    assert rec.eq == pytest.approx(float(np.abs(prog.eq_residual(pt.u, pt.beta)).max()), abs=1e-15)


def test_polytope_support_values():
    idx = np.arange(3)
    spec = PolytopeSpec(
        pieces=[
            PolytopePiece("box", idx, lo=0.0, hi=1.0),
            PolytopePiece("cap", idx, rhs=2.0),
        ]
    )
    # best point for z = (1, 1, -1) puts mass on the two positive coords
    assert polytope_support(spec, np.array([1.0, 1.0, -1.0])) == pytest.approx(2.0, abs=1e-9)
    free = PolytopeSpec(pieces=[PolytopePiece("box", np.array([0]), lo=0.0, hi=math.inf)])
    assert polytope_support(free, np.array([1.0])) == math.inf


# ---------------------------------------------------------------------------
# smooth-part estimates and the pure minimization driver


def test_power_lambda_max_agrees_with_eigh():
    rng = np.random.default_rng(8)
    for _ in range(5):
        G = rng.standard_normal((8, 8))
        H = G @ G.T
        lam = power_lambda_max(H, iters=200)
        # power iteration stalls on tight spectral gaps; 1e-4 is plenty here
        assert lam == pytest.approx(float(np.linalg.eigvalsh(H)[-1]), rel=1e-4)


class _QuadMock:
    """Constant alpha curvature d0, alpha gradient linear in the cone point."""

    d0 = 0.7

    def __init__(self):
        self.Mx = np.array([[1.0, 0.2, 0.0], [0.0, 0.5, -0.3], [0.4, 0.0, 0.8]])
        self.program = ConicProgram(
            blocks=[ConeBlock("free", 3)],
            A_E=sp.csr_matrix((0, 3)),
            b_E=np.zeros(0),
            A_I=sp.csr_matrix((0, 3)),
            b_I=np.zeros(0),
            polytope=PolytopeSpec(pieces=[]),
        )

    def alpha_bounds(self):
        return np.zeros(3), np.ones(3)

    def alpha_hessian(self, pt):
        return self.d0 * np.eye(3)

    def grad_alpha(self, pt, alpha):
        return self.Mx @ pt.u

    def sample_feasible(self, rng):
        return ConicPoint(rng.standard_normal(3), np.zeros(0), np.zeros(0))


def test_estimate_lipschitz_on_known_curvature():
    mock = _QuadMock()
    L_aa, L_ax = estimate_lipschitz(mock, rng=0)
    assert L_aa == pytest.approx(1.2 * mock.d0, rel=1e-9)
    sigma_max = float(np.linalg.svd(mock.Mx, compute_uv=False)[0])
    assert 0.0 < L_ax <= 1.2 * sigma_max + 1e-9


def test_ppa_minimize_toy_psd():
    prog = _toy_psd_program()
    cfg = SolverConfig(rho=1.0, tol_fixed_point=1e-9, tol_inner=1e-9, max_outer=300, max_inner=400)
    res = ppa_minimize(prog, cfg)
    assert res.converged
    X = smat(res.point.u, 2)
    assert X[0, 1] == pytest.approx(-1.0, abs=1e-4)
    assert res.objective == pytest.approx(-math.sqrt(2.0), abs=2e-4)


def test_ppa_minimize_budget_error():
    prog = _toy_psd_program()
    cfg = SolverConfig(rho=1.0, tol_fixed_point=1e-14, tol_inner=1e-9, max_outer=1, max_inner=50)
    with pytest.raises(BudgetError) as exc:
        ppa_minimize(prog, cfg)
    assert len(exc.value.trace) == 1


# ---------------------------------------------------------------------------
# saddle drivers on a bilinear game


class BilinearToy:
    """min over alpha in the unit box of max over u in the simplex of
    alpha' M u - a0' alpha + (d0/2) |alpha|^2."""

    def __init__(self, shift: float = 0.0):
        self.M = np.array([[1.0, -0.5, 0.2], [0.3, 0.8, -0.4], [-0.2, 0.1, 0.6]])
        self.a0 = np.array([0.3 + shift, 0.5, 0.2])
        self.d0 = 0.7
        self.program = ConicProgram(
            blocks=[ConeBlock("nonneg", 3)],
            A_E=sp.csr_matrix((0, 3)),
            b_E=np.zeros(0),
            A_I=sp.csr_matrix((0, 3)),
            b_I=np.zeros(0),
            polytope=PolytopeSpec(
                pieces=[PolytopePiece("simplex", np.arange(3), 1.0, 0.0, 1.0, total=1.0)]
            ),
        )

    def alpha_bounds(self):
        return np.zeros(3), np.ones(3)

    def initial_point(self):
        return ConicPoint(np.full(3, 1.0 / 3.0), np.zeros(0), np.zeros(0)), np.full(3, 0.5)

    def build_cu(self, alpha):
        return self.M.T @ alpha

    def grad_alpha(self, x, alpha):
        return self.M @ x.u - self.a0 + self.d0 * alpha

    def objective(self, x, alpha):
        return float(alpha @ self.M @ x.u - self.a0 @ alpha + 0.5 * self.d0 * alpha @ alpha)

    def alpha_hessian(self, x):
        return self.d0 * np.eye(3)

    def sample_feasible(self, rng):
        u = project_polytope(project_cone(self.program, rng.standard_normal(3)), self.program.polytope)
        return ConicPoint(u, np.zeros(0), np.zeros(0))


def _tseng_cfg(**kw):
    base = dict(rho=1.0, tol_fixed_point=1e-9, tol_inner=1e-10, max_outer=5000, max_inner=60)
    base.update(kw)
    return SolverConfig(**base)


def test_tseng_reaches_game_value():
    res = tseng_solve(BilinearToy(), _tseng_cfg())
    assert res.converged
    assert res.objective == pytest.approx(SADDLE_VALUE, abs=5e-6)
    assert res.dual is not None
    assert isinstance(res.warm, WarmStartState)


def test_nesterov_matches_tseng():
    cfg_n = SolverConfig(rho=0.5, tol_fixed_point=1e-8, tol_inner=1e-10, max_outer=300, max_inner=80)
    res_n = nesterov_solve(BilinearToy(), cfg_n)
    res_t = tseng_solve(BilinearToy(), _tseng_cfg())
    assert res_n.converged
    assert res_n.objective == pytest.approx(SADDLE_VALUE, abs=5e-6)
    assert abs(res_n.objective - res_t.objective) <= 1e-6
    # the alpha block is strongly convex, so both drivers agree on it
    np.testing.assert_allclose(res_n.alpha, res_t.alpha, atol=1e-3)


def test_warm_start_cuts_iterations():
    cold = tseng_solve(BilinearToy(), _tseng_cfg())
    shifted = BilinearToy(shift=1e-3)
    cold_shifted = tseng_solve(shifted, _tseng_cfg())
    warm = tseng_solve(shifted, _tseng_cfg(), warm=cold.warm)
    assert warm.converged
    assert warm.iterations < cold_shifted.iterations


def test_tseng_writes_trace(tmp_path):
    path = tmp_path / "trace.ndjson"
    res = tseng_solve(BilinearToy(), _tseng_cfg(), trace_path=path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == res.iterations
    rec = json.loads(lines[-1])
    assert {"iter", "objective", "fixed_point_residual", "kkt_max"} <= set(rec)


class _RunawayMock:
    """Chases alternating alpha targets whose gap strictly grows, so the
    fixed-point residual rises every iteration while every magnitude stays
    bounded; recalibrates the step from observed movement so halvings do not
    break the pattern."""

    def __init__(self, gamma0: float):
        self.gamma = gamma0
        self.k = 0
        self.phase = 0
        self.last_alpha = 0.0
        self.last_g2 = None
        self.program = ConicProgram(
            blocks=[ConeBlock("free", 1)],
            A_E=sp.csr_matrix((0, 1)),
            b_E=np.zeros(0),
            A_I=sp.csr_matrix((0, 1)),
            b_I=np.zeros(0),
            polytope=PolytopeSpec(pieces=[]),
        )

    def alpha_bounds(self):
        return np.array([-np.inf]), np.array([np.inf])

    def initial_point(self):
        return ConicPoint(np.zeros(1), np.zeros(0), np.zeros(0)), np.zeros(1)

    def build_cu(self, alpha):
        return np.zeros(1)

    def objective(self, x, alpha):
        return 0.0

    def grad_alpha(self, x, alpha):
        a = float(alpha[0])
        if self.phase == 0:
            if self.last_g2 is not None and abs(self.last_g2) > 1e-300:
                implied = (self.last_alpha - a) / self.last_g2
                if implied > 1e-300:
                    self.gamma = implied
            self.phase = 1
            self.last_alpha = a
            return np.zeros(1)
        self.phase = 0
        self.k += 1
        target = 0.5 * (1.0 - 1.0 / (self.k + 2.0)) * (-1.0) ** self.k
        g = (a - target) / self.gamma
        self.last_alpha = a
        self.last_g2 = g
        return np.array([g])


def test_step_size_error_on_growing_residual():
    gamma0 = 0.9 / 1.05
    cfg = SolverConfig(rho=1.0, tol_fixed_point=0.0, tol_inner=1e-6, max_outer=500,
                       max_inner=5, lipschitz=(1.0, 0.0))
    with pytest.raises(StepSizeError) as exc:
        tseng_solve(_RunawayMock(gamma0), cfg)
    assert "halvings" in str(exc.value)


# ---------------------------------------------------------------------------
# accelerated composite rate


def _rate_problem():
    rng = np.random.default_rng(5)
    G = rng.standard_normal((10, 10))
    H = G @ G.T / 10.0 + 0.1 * np.eye(10)
    b = rng.standard_normal(10)
    return H, b


def test_accelerated_rate_bound():
    H, b = _rate_problem()
    xstar = np.linalg.solve(H, b)

    def f(x):
        return 0.5 * float(x @ H @ x) - float(b @ x)

    fstar = f(xstar)
    L_true = float(np.linalg.eigvalsh(H)[-1])
    L = 100.0 * L_true  # deliberately pessimistic constant
    x0 = np.zeros(10)
    _, k, hist = accelerated_composite(lambda x: H @ x - b, lambda x: x, x0, L,
                                       mu=0.0, max_iter=400, tol=0.0)
    errs = np.array([f(x) - fstar for x in hist])
    d2 = float((x0 - xstar) @ (x0 - xstar))
    ks = np.arange(1, len(errs) + 1, dtype=float)
    # certified worst-case constant: err_k <= 2 L d^2 / k^2, with margin
    assert float(np.max(ks**2 * errs)) < 2.0 * L * d2
    # observed decay is at least quadratic in k on a log-log fit
    mask = (ks >= 5) & (errs > 1e-14)
    slope, intercept = np.polyfit(np.log(ks[mask]), np.log(errs[mask]), 1)
    pred = slope * np.log(ks[mask]) + intercept
    ss_res = float(np.sum((np.log(errs[mask]) - pred) ** 2))
    ss_tot = float(np.sum((np.log(errs[mask]) - np.log(errs[mask]).mean()) ** 2))
    assert slope <= -1.9
    assert 1.0 - ss_res / ss_tot >= 0.85


def test_accelerated_strongly_convex_is_geometric():
    H, b = _rate_problem()
    mu = float(np.linalg.eigvalsh(H)[0])
    # the estimate-sequence mixing needs headroom beyond the raw curvature;
    # the same doubling nesterov_solve applies to its inner constant
    L = 2.0 * (float(np.linalg.eigvalsh(H)[-1]) + mu)
    x0 = np.zeros(10)
    # with the mu-quadratic added around the center, the target shifts
    xstar = np.linalg.solve(H + mu * np.eye(10), b)

    def F(x):
        return 0.5 * float(x @ H @ x) - float(b @ x) + 0.5 * mu * float(x @ x)

    xbar, _, _ = accelerated_composite(lambda x: H @ x - b, lambda x: x, x0, L,
                                       mu=mu, max_iter=400, tol=0.0)
    assert F(xbar) - F(xstar) <= 1e-12 * (1.0 + abs(F(xstar)))


def test_accelerated_on_point_weights():
    H, b = _rate_problem()
    calls = []
    accelerated_composite(lambda x: H @ x - b, lambda x: x, np.zeros(10),
                          10.0, max_iter=25, tol=0.0,
                          on_point=lambda w, y: calls.append(w))
    assert len(calls) == 25
    assert all(0.0 < w <= 1.0 for w in calls)


# ---------------------------------------------------------------------------
# config and trace plumbing


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rho=0.0)
    with pytest.raises(ValueError):
        SolverConfig(gamma=-1.0)
    cfg = SolverConfig()
    assert cfg.tol_fixed_point == 1e-7


def test_dump_trace_roundtrip(tmp_path):
    records = [{"iter": 1, "objective": -0.5}, {"iter": 2, "objective": -0.75}]
    path = tmp_path / "t.ndjson"
    dump_trace(records, path)
    back = [json.loads(line) for line in path.read_text().splitlines()]
    assert back == records


def test_dual_iterate_shapes():
    prog, _, _ = random_sc_subproblem(308, n_lo=4, n_hi=5)
    d = DualIterate.zeros(prog)
    assert d.S.shape == (prog.dim,)
    assert d.y_E.shape == (prog.n_eq,)
    assert d.y_I.shape == (prog.n_ineq,)
    z = ConicPoint.zeros(prog)
    other = ConicPoint(z.u + 1.0, z.beta, z.s)
    assert z.metric_dist(other) == pytest.approx(math.sqrt(prog.dim))
