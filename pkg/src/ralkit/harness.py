"""Simulation harness: noise injection, active-learning loops, metrics export.

One experiment = one seed: draw a pool, hold out a clean test split,
contaminate the rest, then run querying rounds against a simulated labeler
that answers with the stored (possibly noisy) labels.  Baselines share the
loop skeleton with the query rule swapped out.  All randomness flows from
the seed, so identical configs produce bit-identical exports.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import box_qp_maximize
from .data import (
    Dataset,
    GramPair,
    KernelSpec,
    build_gram_pair,
    default_kernel_pair,
    hinge,
    load_dataset,
)
from .ral import (
    ConfigError,
    RalConfig,
    RalProblem,
    SaddlePoint,
    carry_warm_start,
    select_queries,
)
from .scmodel import SCModel
from .solver import BudgetError, SolverConfig, nesterov_solve, tseng_solve

__all__ = [
    "HarnessError",
    "NoiseSpec",
    "ExperimentConfig",
    "RoundMetrics",
    "inject_noise",
    "run_active_loop",
    "run_baseline",
    "run_corpus",
    "decision_coef",
    "weighted_risk",
    "export_results",
    "load_results",
    "config_from_dict",
    "config_to_dict",
    "load_experiment_config",
]

BASELINES = ("random", "margin", "ral-lite")

CSV_HEADER = ["round", "accuracy", "query", "precision", "recall", "iters", "warm", "wall_ms"]


class HarnessError(RuntimeError):
    """Loop failure; carries the metrics of the rounds that did finish."""

    def __init__(self, message: str, metrics: list | None = None):
        super().__init__(message)
        self.metrics = metrics or []


@dataclass
class NoiseSpec:
    flip_rate: float = 0.0
    outlier_count: int = 0
    outlier_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_rate <= 1.0:
            raise HarnessError(f"flip_rate must be in [0,1], got {self.flip_rate}")
        if self.outlier_count < 0:
            raise HarnessError("outlier_count must be nonnegative")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; JSON config files mirror these names.

    dataset is either a CSV path or a synthetic generator spec, a dict with
    optional keys n / dim / separation (two Gaussian blobs, unit variance,
    mean separation 3 by default).  solver None picks round-level defaults
    for the chosen method.
    """

    dataset: str | dict | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rounds: int = 1
    ral: RalConfig = field(default_factory=lambda: RalConfig(n_o=1))
    solver: SolverConfig | None = None
    seeds: list = field(default_factory=lambda: [0])
    baselines: list = field(default_factory=list)
    method: str = "tseng"
    timing: str = "zeroed"
    test_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise HarnessError("rounds must be at least 1")
        if self.method not in ("tseng", "nesterov"):
            raise HarnessError(f"unknown method {self.method!r}")
        if self.timing not in ("zeroed", "measured"):
            raise HarnessError(f"timing must be zeroed or measured, got {self.timing!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise HarnessError("test_fraction must be strictly between 0 and 1")
        bad = [b for b in self.baselines if b not in BASELINES]
        if bad:
            raise HarnessError(f"unknown baselines {bad}; pick from {BASELINES}")


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    queried: int
    noisy_detection_precision: float | None
    noisy_detection_recall: float | None
    solver_iters: int
    warm_started: bool
    wall_ms: int


def _round_solver(cfg: ExperimentConfig) -> SolverConfig:
    if cfg.solver is not None:
        return cfg.solver
    # round-level accuracy: query ranks are stable well above the residual floor
    if cfg.method == "tseng":
        return SolverConfig(
            rho=1.0, tol_fixed_point=1e-3, tol_inner=1e-8, max_outer=25000, max_inner=3
        )
    return SolverConfig(
        rho=0.5, tol_fixed_point=1e-3, tol_inner=1e-6, max_outer=500, max_inner=15
    )


# ---------------------------------------------------------------------------
# data sources and contamination


def _synthetic_pool(spec: dict | None, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    spec = spec or {}
    n = int(spec.get("n", 40))
    dim = int(spec.get("dim", 2))
    sep = float(spec.get("separation", 3.0))
    half = n // 2
    mean = np.zeros(dim)
    mean[0] = sep / 2.0
    X = np.vstack(
        [
            rng.normal(+mean, 1.0, (half, dim)),
            rng.normal(-mean, 1.0, (n - half, dim)),
        ]
    )
    y = np.concatenate([np.ones(half, dtype=np.int64), -np.ones(n - half, dtype=np.int64)])
    perm = rng.permutation(n)
    return X[perm], y[perm]


def _source_pool(
    cfg: ExperimentConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Returns (features, truth, initial-label mask or None).

    A file whose label column has gaps keeps its own labeled rows as the
    starting state (mask); fully labeled files and synthetic pools start
    from scratch (mask None, the loop reveals one row per class).
    """
    if isinstance(cfg.dataset, str):
        ds = load_dataset(cfg.dataset)
        if ds.ground_truth is not None:
            truth = ds.ground_truth
        elif np.all(ds.labels != 0):
            truth = ds.labels
        else:
            raise HarnessError("file datasets with unlabeled rows need a truth column")
        mask = None if np.all(ds.labels != 0) else ds.labels != 0
        return ds.features, truth.astype(np.int64), mask
    X, y = _synthetic_pool(cfg.dataset, rng)
    return X, y, None


def inject_noise(data: Dataset, spec: NoiseSpec, seed: int) -> tuple[Dataset, frozenset]:
    """Contaminate a fully labeled pool; returns (noisy pool, injected rows).

    Flips floor(flip_rate * n) labels chosen uniformly, then appends
    outlier_count points at outlier_scale times the pool radius with random
    labels.  The returned dataset stores the noisy labels as its ground
    truth: the simulated labeler answers with them, noise included.
    """
    truth = data.ground_truth if data.ground_truth is not None else data.labels
    if truth is None or np.any(np.asarray(truth) == 0):
        raise HarnessError("inject_noise needs a fully labeled pool")
    rng = np.random.default_rng(seed)
    X = data.features.copy()
    y = np.asarray(truth, dtype=np.int64).copy()
    n = y.size
    injected: list[int] = []
    k = int(np.floor(spec.flip_rate * n))
    if k > 0:
        rows = rng.choice(n, size=k, replace=False)
        y[rows] = -y[rows]
        injected.extend(int(r) for r in rows)
    if spec.outlier_count > 0:
        centroid = X.mean(axis=0)
        radius = float(np.max(np.linalg.norm(X - centroid, axis=1)))
        radius = radius if radius > 0 else 1.0
        for j in range(spec.outlier_count):
            direction = rng.standard_normal(X.shape[1])
            direction /= max(np.linalg.norm(direction), 1e-12)
            X = np.vstack([X, centroid + spec.outlier_scale * radius * direction])
            y = np.append(y, rng.choice((-1, 1)))
            injected.append(n + j)
    noisy = Dataset(features=X, labels=y, ground_truth=y)
    return noisy, frozenset(injected)


# ---------------------------------------------------------------------------
# predictors and metrics


def _cross_gram(X_train: np.ndarray, X_eval: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Kernel rows k(x_eval, x_train); no diagonal jitter off the square gram."""
    if spec.kind == "linear":
        return X_eval @ X_train.T
    d2 = (
        np.sum(X_eval**2, axis=1)[:, None]
        + np.sum(X_train**2, axis=1)[None, :]
        - 2.0 * X_eval @ X_train.T
    )
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * float(spec.bandwidth) ** 2))


def decision_coef(x: SaddlePoint, data: Dataset, lam: float) -> np.ndarray:
    """Simple-model expansion from a solved round.

    The weighted dual behind the objective has w = (1/lam) sum alpha_i a_i
    gamma_i phi(x_i) with gamma the corner column: revealed labels on
    labeled rows, relaxed labels elsewhere.  Decision values on new points
    are cross-kernel rows against this coefficient vector.
    """
    n = data.n
    gamma = np.zeros(n)
    lab = data.labeled_idx
    gamma[lab] = data.labels[lab]
    gamma[data.unlabeled_idx] = x.tau
    return x.alpha * x.a * gamma / lam


def _accuracy(scores: np.ndarray, truth: np.ndarray) -> float:
    pred = np.where(scores >= 0.0, 1, -1)
    return float(np.mean(pred == truth))


def _detection(x: SaddlePoint, injected: frozenset, n_o: int) -> tuple[float | None, float | None]:
    if n_o <= 0:
        return None, None
    support = {int(i) for i in np.flatnonzero(x.p >= 0.5)}
    # empty support asserts nothing false; empty injected set leaves nothing to miss
    precision = 1.0 if not support else len(support & injected) / len(support)
    recall = 1.0 if not injected else len(support & injected) / len(injected)
    return precision, recall


def weighted_risk(model: SCModel, data: Dataset, gram: GramPair) -> tuple[float, float]:
    """Complex-gated empirical hinge risk next to the plain one.

    Weights are 1 - y_i f_o(x_i): points the complex model explains away
    contribute nothing, clean points contribute their full hinge loss.  gram
    must be the pair the model was fit on (the model stores expansions, not
    features).
    """
    y = data.labels.astype(np.float64)
    if np.any(y == 0):
        raise HarnessError("weighted_risk needs labels on every row")
    f = gram.K @ model.simple_coef
    fo = gram.K_o @ model.beta
    losses = hinge(y * f)
    weights = 1.0 - y * fo
    return float(np.mean(weights * losses)), float(np.mean(losses))


# ---------------------------------------------------------------------------
# the loop


@dataclass
class _Arena:
    """Everything fixed for one seed: pool, test split, grams, labeler."""

    pool: Dataset
    injected: frozenset
    gram: GramPair
    test_X: np.ndarray
    test_y: np.ndarray
    test_K: np.ndarray
    initial_labels: np.ndarray


def _build_arena(cfg: ExperimentConfig, seed: int) -> _Arena:
    rng = np.random.default_rng([seed, 0])
    X, truth, mask = _source_pool(cfg, rng)
    n = X.shape[0]
    n_test = max(1, int(round(cfg.test_fraction * n)))
    if n - n_test < 4:
        raise HarnessError(f"pool of {n} too small for a {cfg.test_fraction:.0%} test split")
    perm = rng.permutation(n)
    test_rows, train_rows = perm[:n_test], perm[n_test:]
    clean_train = Dataset(
        features=X[train_rows],
        labels=truth[train_rows],
        ground_truth=truth[train_rows],
    )
    pool, injected = inject_noise(clean_train, cfg.noise, seed)
    labels0 = np.zeros(pool.n, dtype=np.int64)
    if mask is None:
        # cold start: reveal the lowest-index row of each class
        for cls in (1, -1):
            rows = np.flatnonzero(pool.ground_truth == cls)
            if rows.size == 0:
                raise HarnessError(f"contaminated pool lost class {cls}")
            labels0[rows[0]] = cls
    else:
        # the file already queried these rows; flips carry through so the
        # visible label stays what the (noisy) labeler would have said
        rows = np.flatnonzero(mask[train_rows])
        labels0[rows] = pool.ground_truth[rows]
        for cls in (1, -1):
            if not np.any(labels0 == cls):
                raise HarnessError(f"file's labeled rows are missing class {cls}")
    shell = Dataset(features=pool.features, labels=labels0, ground_truth=pool.ground_truth)
    gram = build_gram_pair(shell, *default_kernel_pair(shell))
    test_K = _cross_gram(pool.features, X[test_rows], gram.spec_simple)
    return _Arena(
        pool=pool,
        injected=injected,
        gram=gram,
        test_X=X[test_rows],
        test_y=truth[test_rows].astype(np.int64),
        test_K=test_K,
        initial_labels=labels0,
    )


def _solve_round(problem: RalProblem, scfg: SolverConfig, method: str, warm):
    driver = tseng_solve if method == "tseng" else nesterov_solve
    return driver(problem, scfg, warm=warm)


def run_active_loop(
    cfg: ExperimentConfig, seed: int | None = None
) -> tuple[list[RoundMetrics], SaddlePoint]:
    """Run one seeded experiment; returns per-round metrics and the last model.

    Budget exhaustion raises HarnessError with the completed rounds attached.
    """
    seed = int(cfg.seeds[0] if seed is None else seed)
    arena = _build_arena(cfg, seed)
    return _query_loop(cfg, arena, cfg.ral)


def _query_loop(
    cfg: ExperimentConfig,
    arena: _Arena,
    rcfg: RalConfig,
) -> tuple[list[RoundMetrics], SaddlePoint]:
    scfg = _round_solver(cfg)
    metrics: list[RoundMetrics] = []
    data_r = Dataset(
        features=arena.pool.features,
        labels=arena.initial_labels.copy(),
        ground_truth=arena.pool.ground_truth,
    )
    prev_problem: RalProblem | None = None
    warm = None
    x = None
    for rnd in range(1, cfg.rounds + 1):
        if data_r.candidate_idx.size == 0:
            break
        t0 = time.perf_counter()
        problem = RalProblem(data_r, arena.gram, rcfg)
        if prev_problem is not None and warm is not None:
            warm = carry_warm_start(warm, prev_problem, problem)
        try:
            res = _solve_round(problem, scfg, cfg.method, warm)
        except BudgetError as exc:
            raise HarnessError(
                f"solver budget exhausted in round {rnd}: {exc}", metrics
            ) from exc
        x = problem.extract(res.point, res.alpha)
        queries = select_queries(x, rcfg)
        if not queries:
            break
        wall = (time.perf_counter() - t0) * 1e3
        coef = decision_coef(x, data_r, rcfg.lam)
        precision, recall = _detection(x, arena.injected, rcfg.n_o)
        metrics.append(
            RoundMetrics(
                round=rnd,
                test_accuracy=_accuracy(arena.test_K @ coef, arena.test_y),
                queried=int(queries[0]),
                noisy_detection_precision=precision,
                noisy_detection_recall=recall,
                solver_iters=int(res.iterations),
                warm_started=warm is not None,
                wall_ms=int(wall) if cfg.timing == "measured" else 0,
            )
        )
        for idx in queries:
            data_r = data_r.with_label(int(idx), int(arena.pool.ground_truth[int(idx)]))
        prev_problem = problem
        warm = res.warm
    if x is None:
        raise HarnessError("no rounds ran: empty candidate pool", metrics)
    return metrics, x


def _plain_svm_coef(data_r: Dataset, gram: GramPair, lam: float) -> np.ndarray:
    lab = data_r.labeled_idx
    y = data_r.labels[lab].astype(np.float64)
    Q = gram.K[np.ix_(lab, lab)] * np.outer(y, y) / lam
    alpha = np.asarray(box_qp_maximize(Q, np.ones(lab.size), np.zeros(lab.size), 4000, 1e-10))
    coef = np.zeros(data_r.n)
    coef[lab] = alpha * y / lam
    return coef


def run_baseline(
    cfg: ExperimentConfig, strategy: str, seed: int | None = None
) -> list[RoundMetrics]:
    """Same loop, query rule swapped; margin and random refit a plain SVM."""
    if strategy not in BASELINES:
        raise HarnessError(f"unknown strategy {strategy!r}; pick from {BASELINES}")
    seed = int(cfg.seeds[0] if seed is None else seed)
    arena = _build_arena(cfg, seed)
    if strategy == "ral-lite":
        lite = dataclasses.replace(cfg.ral, n_o=0, mode="lite")
        metrics, _ = _query_loop(cfg, arena, lite)
        return metrics
    rng = np.random.default_rng([seed, 1])
    metrics = []
    data_r = Dataset(
        features=arena.pool.features,
        labels=arena.initial_labels.copy(),
        ground_truth=arena.pool.ground_truth,
    )
    for rnd in range(1, cfg.rounds + 1):
        cands = data_r.candidate_idx
        if cands.size == 0:
            break
        t0 = time.perf_counter()
        coef = _plain_svm_coef(data_r, arena.gram, cfg.ral.lam)
        if strategy == "random":
            queried = int(rng.choice(cands))
        else:  # margin: the candidate nearest the current boundary
            f_cand = (arena.gram.K @ coef)[cands]
            order = np.lexsort((cands, np.abs(f_cand)))
            queried = int(cands[order[0]])
        wall = (time.perf_counter() - t0) * 1e3
        metrics.append(
            RoundMetrics(
                round=rnd,
                test_accuracy=_accuracy(arena.test_K @ coef, arena.test_y),
                queried=queried,
                noisy_detection_precision=None,
                noisy_detection_recall=None,
                solver_iters=0,
                warm_started=False,
                wall_ms=int(wall) if cfg.timing == "measured" else 0,
            )
        )
        data_r = data_r.with_label(queried, int(arena.pool.ground_truth[queried]))
    return metrics


def run_corpus(cfg: ExperimentConfig) -> dict:
    """All seeds, deterministic fold in seed order.

    Returns {seed: {"ral": metrics, baseline_name: metrics, ...}}.
    """
    out: dict = {}
    for seed in cfg.seeds:
        entry: dict = {}
        entry["ral"], _ = run_active_loop(cfg, seed=int(seed))
        for name in cfg.baselines:
            entry[name] = run_baseline(cfg, name, seed=int(seed))
        out[int(seed)] = entry
    return out


# ---------------------------------------------------------------------------
# export


def _metric_row(m: RoundMetrics) -> list:
    return [
        m.round,
        repr(float(m.test_accuracy)),
        m.queried,
        "" if m.noisy_detection_precision is None else repr(float(m.noisy_detection_precision)),
        "" if m.noisy_detection_recall is None else repr(float(m.noisy_detection_recall)),
        m.solver_iters,
        int(m.warm_started),
        m.wall_ms,
    ]


def export_results(metrics: list, path: str, format: str = "csv") -> None:
    """One row per round.  CSV uses the fixed header; JSON mirrors it."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for m in metrics:
                writer.writerow(_metric_row(m))
    elif format == "json":
        rows = []
        for m in metrics:
            rows.append(
                {
                    "round": m.round,
                    "accuracy": float(m.test_accuracy),
                    "query": m.queried,
                    "precision": m.noisy_detection_precision,
                    "recall": m.noisy_detection_recall,
                    "iters": m.solver_iters,
                    "warm": int(m.warm_started),
                    "wall_ms": m.wall_ms,
                }
            )
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    else:
        raise HarnessError(f"unknown export format {format!r}")


def load_results(path: str, format: str = "csv") -> list[RoundMetrics]:
    def build(row: dict) -> RoundMetrics:
        return RoundMetrics(
            round=int(row["round"]),
            test_accuracy=float(row["accuracy"]),
            queried=int(row["query"]),
            noisy_detection_precision=(
                None if row["precision"] in ("", None) else float(row["precision"])
            ),
            noisy_detection_recall=(
                None if row["recall"] in ("", None) else float(row["recall"])
            ),
            solver_iters=int(row["iters"]),
            warm_started=bool(int(row["warm"])),
            wall_ms=int(row["wall_ms"]),
        )

    if format == "csv":
        with open(path, newline="") as fh:
            return [build(row) for row in csv.DictReader(fh)]
    if format == "json":
        with open(path) as fh:
            return [build(row) for row in json.load(fh)]
    raise HarnessError(f"unknown results format {format!r}")


# ---------------------------------------------------------------------------
# config files


def config_to_dict(cfg: ExperimentConfig) -> dict:
    payload = {
        "dataset": cfg.dataset,
        "noise": dataclasses.asdict(cfg.noise),
        "rounds": cfg.rounds,
        "ral": {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in dataclasses.asdict(cfg.ral).items()
            if not (k == "coupling_ref" and v is None)
        },
        "seeds": list(cfg.seeds),
        "baselines": list(cfg.baselines),
        "method": cfg.method,
        "timing": cfg.timing,
        "test_fraction": cfg.test_fraction,
    }
    if cfg.solver is not None:
        solver = dataclasses.asdict(cfg.solver)
        if solver.get("lipschitz") is not None:
            solver["lipschitz"] = list(solver["lipschitz"])
        payload["solver"] = solver
    return payload


def config_from_dict(payload: dict) -> ExperimentConfig:
    data = dict(payload)
    try:
        if "noise" in data and not isinstance(data["noise"], NoiseSpec):
            data["noise"] = NoiseSpec(**data["noise"])
        if "ral" in data and not isinstance(data["ral"], RalConfig):
            ral = dict(data["ral"])
            if ral.get("coupling_ref") is not None:
                ral["coupling_ref"] = np.asarray(ral["coupling_ref"], dtype=np.float64)
            data["ral"] = RalConfig(**ral)
        if "solver" in data and data["solver"] is not None and not isinstance(data["solver"], SolverConfig):
            solver = dict(data["solver"])
            if "lipschitz" in solver and solver["lipschitz"] is not None:
                solver["lipschitz"] = tuple(solver["lipschitz"])
            data["solver"] = SolverConfig(**solver)
    except (TypeError, ConfigError, ValueError) as exc:
        raise HarnessError(f"bad experiment config: {exc}") from exc
    return ExperimentConfig(**data)


def load_experiment_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))
