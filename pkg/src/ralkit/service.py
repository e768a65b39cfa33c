"""HTTP layer for human-in-the-loop labeling sessions.

One session = one dataset plus one querying configuration.  The flow mirrors
the offline loop: solve, surface the chosen instance, accept a label, carry
the warm state forward, repeat.  Every accepted label is appended to a
newline-delimited JSON log, and a session can be rebuilt from that log alone;
the reconstruction re-runs the exact solve sequence, so live state and
replayed state agree field for field.

Commands for one session are serialized behind a lock; solves run on a
worker thread so label submission returns immediately and the query endpoint
blocks until the round is ready.  Distinct sessions are fully independent.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
import uuid
from dataclasses import asdict, dataclass

import numpy as np
from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .data import Dataset, DatasetError, build_gram_pair, default_kernel_pair, load_dataset
from .harness import decision_coef
from .ral import (
    ConfigError,
    RalConfig,
    RalProblem,
    carry_warm_start,
    select_queries,
)
from .solver import SolverConfig, SolverError, nesterov_solve, tseng_solve

__all__ = ["LabelEvent", "ServiceError", "create_app", "replay_session", "DEFAULT_QUERY_TIMEOUT"]

DEFAULT_QUERY_TIMEOUT = 120.0
TRACE_TAIL = 5


@dataclass
class LabelEvent:
    ts: float
    round: int
    index: int
    label: int


class ServiceError(Exception):
    """Maps straight onto the JSON error envelope."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _round_defaults(method: str) -> SolverConfig:
    if method == "tseng":
        return SolverConfig(
            rho=1.0, tol_fixed_point=1e-3, tol_inner=1e-8, max_outer=25000, max_inner=3
        )
    return SolverConfig(
        rho=0.5, tol_fixed_point=1e-3, tol_inner=1e-6, max_outer=500, max_inner=15
    )


# ---------------------------------------------------------------------------
# session state


class _Session:
    def __init__(
        self,
        sid: str,
        data: Dataset,
        cfg: RalConfig,
        scfg: SolverConfig,
        method: str,
        max_rounds: int | None,
        log_path: str,
    ):
        self.id = sid
        self.data = data
        self.cfg = cfg
        self.scfg = scfg
        self.method = method
        self.max_rounds = max_rounds
        self.log_path = log_path
        self.gram = build_gram_pair(data, *default_kernel_pair(data))
        self.lock = threading.RLock()
        self.solved = threading.Event()
        self.round = 1
        self.pending: int | None = None
        self.x = None
        self.iters = 0
        self.trace_tail: list = []
        self.prev_problem: RalProblem | None = None
        self.warm = None
        self.events: list[LabelEvent] = []
        self.error: str | None = None
        self.terminal = False
        self.query_body: bytes | None = None
        self.solve_started = False

    # decision values of the current solve on every pool point
    def scores(self) -> tuple[np.ndarray, np.ndarray]:
        coef = decision_coef(self.x, self.data, self.cfg.lam)
        f = self.gram.K @ coef
        fo = self.gram.K_o @ self.x.beta if self.x.beta.size else np.zeros(self.data.n)
        return f, fo


def _solve_once(sess: _Session) -> None:
    """One round solve; installs results and the next pending query."""
    try:
        problem = RalProblem(sess.data, sess.gram, sess.cfg)
        warm = None
        if sess.prev_problem is not None and sess.warm is not None:
            warm = carry_warm_start(sess.warm, sess.prev_problem, problem)
        driver = tseng_solve if sess.method == "tseng" else nesterov_solve
        res = driver(problem, sess.scfg, warm=warm)
        x = problem.extract(res.point, res.alpha)
        queries = select_queries(x, sess.cfg) if not sess.terminal else []
        with sess.lock:
            sess.x = x
            sess.iters = int(res.iterations)
            sess.trace_tail = [
                {
                    "iter": int(t["iter"]),
                    "objective": float(t["objective"]),
                    "residual": float(t["fixed_point_residual"]),
                }
                for t in res.trace[-TRACE_TAIL:]
            ]
            sess.prev_problem = problem
            sess.warm = res.warm
            if sess.terminal or not queries:
                sess.terminal = True
                sess.pending = None
            else:
                sess.pending = int(queries[0])
            sess.query_body = None
    except (SolverError, ConfigError) as exc:
        with sess.lock:
            sess.error = f"{type(exc).__name__}: {exc}"
    finally:
        sess.solved.set()


def _ensure_solving(sess: _Session) -> None:
    with sess.lock:
        if sess.solve_started or sess.solved.is_set():
            return
        sess.solve_started = True
    threading.Thread(target=_solve_once, args=(sess,), daemon=True).start()


def _apply_label(sess: _Session, index: int, label: int) -> None:
    """State transition shared by the live endpoint and replay."""
    sess.data = sess.data.with_label(index, label)
    sess.pending = None
    sess.query_body = None
    sess.round += 1
    past_cap = sess.max_rounds is not None and sess.round > sess.max_rounds
    cands = sess.data.candidate_idx.size
    if past_cap or cands < sess.cfg.b:
        # no further querying; one more solve refreshes the final model when possible
        sess.terminal = True
    sess.solved.clear()
    sess.solve_started = False
    if cands == 0:
        # nothing left to relax over; keep the last solved model
        sess.solved.set()
        sess.solve_started = True


# ---------------------------------------------------------------------------
# persistence


def _append_line(path: str, payload: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(payload, separators=(",", ":")) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _dataset_payload(data: Dataset) -> dict:
    return {
        "features": data.features.tolist(),
        "labels": data.labels.tolist(),
        "truth": None if data.ground_truth is None else data.ground_truth.tolist(),
        "ids": data.ids,
    }


def _dataset_from_payload(payload: dict) -> Dataset:
    return Dataset(
        features=np.asarray(payload["features"], dtype=np.float64),
        labels=np.asarray(payload["labels"], dtype=np.int64),
        ground_truth=None if payload.get("truth") is None else np.asarray(payload["truth"]),
        ids=payload.get("ids"),
    )


def _ral_config(payload: dict) -> RalConfig:
    payload = dict(payload)
    if payload.get("coupling_ref") is not None:
        payload["coupling_ref"] = np.asarray(payload["coupling_ref"], dtype=np.float64)
    return RalConfig(**payload)


def _solver_config(payload: dict) -> SolverConfig:
    payload = dict(payload)
    if payload.get("lipschitz") is not None:
        payload["lipschitz"] = tuple(payload["lipschitz"])
    return SolverConfig(**payload)


def _session_from_meta(meta: dict, log_path: str) -> _Session:
    cfg = _ral_config(meta["config"])
    scfg = _solver_config(meta["solver"]) if meta.get("solver") else _round_defaults(meta["method"])
    return _Session(
        sid=meta["id"],
        data=_dataset_from_payload(meta["dataset"]),
        cfg=cfg,
        scfg=scfg,
        method=meta["method"],
        max_rounds=meta.get("max_rounds"),
        log_path=log_path,
    )


def _read_log(log_path: str) -> tuple[dict, list[LabelEvent]]:
    with open(log_path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "created":
        raise ServiceError(500, "log", f"malformed session log {log_path}")
    events = [
        LabelEvent(ts=e["ts"], round=e["round"], index=e["index"], label=e["label"])
        for e in lines[1:]
        if e.get("type") == "label"
    ]
    return lines[0], events


def replay_session(data_dir: str, sid: str) -> _Session:
    """Rebuild a session from its event log by re-running every solve.

    The solve sequence is deterministic, so the result matches the live
    session that wrote the log, including warm-start lineage.
    """
    log_path = os.path.join(data_dir, f"{sid}.ndjson")
    if not os.path.exists(log_path):
        raise ServiceError(404, "not_found", f"no session {sid}")
    meta, events = _read_log(log_path)
    sess = _session_from_meta(meta, log_path)
    for ev in events:
        _solve_once(sess)
        if sess.error is not None:
            raise ServiceError(500, "replay", f"solve failed during replay: {sess.error}")
        if sess.pending != ev.index:
            raise ServiceError(
                500, "replay", f"log expects query {ev.index}, replay produced {sess.pending}"
            )
        sess.events.append(ev)
        _apply_label(sess, ev.index, ev.label)
    if not sess.solved.is_set():
        sess.solve_started = True
        _solve_once(sess)
    return sess


# ---------------------------------------------------------------------------
# request plumbing


def _parse_create(body: dict, data_dir: str) -> _Session:
    if "dataset" not in body:
        raise ServiceError(400, "config", "missing dataset")
    try:
        spec = body["dataset"]
        if isinstance(spec, dict) and "path" in spec:
            data = load_dataset(spec["path"])
        elif isinstance(spec, dict):
            data = _dataset_from_payload(spec)
        else:
            raise ServiceError(400, "config", "dataset must be an object")
        cfg = _ral_config(body.get("config", {}))
        method = body.get("method", "tseng")
        if method not in ("tseng", "nesterov"):
            raise ServiceError(400, "config", f"unknown method {method!r}")
        scfg = _solver_config(body["solver"]) if body.get("solver") else _round_defaults(method)
        max_rounds = body.get("rounds")
        if max_rounds is not None and int(max_rounds) < 1:
            raise ServiceError(400, "config", "rounds must be at least 1")
        # assemble once now so infeasible budgets fail the create call, not a worker
        gram = build_gram_pair(data, *default_kernel_pair(data))
        RalProblem(data, gram, cfg)
    except ServiceError:
        raise
    except (ConfigError, DatasetError, TypeError, ValueError, KeyError, OSError) as exc:
        raise ServiceError(400, "config", str(exc)) from exc
    sid = uuid.uuid4().hex[:12]
    log_path = os.path.join(data_dir, f"{sid}.ndjson")
    sess = _Session(sid, data, cfg, scfg, method, max_rounds, log_path)
    meta = {
        "type": "created",
        "id": sid,
        "ts": time.time(),
        "dataset": _dataset_payload(data),
        "config": {
            k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(cfg).items()
        },
        "solver": {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(scfg).items()
        },
        "method": method,
        "max_rounds": max_rounds,
    }
    _append_line(log_path, meta)
    return sess


def _query_payload(sess: _Session) -> bytes:
    if sess.query_body is not None:
        return sess.query_body
    if sess.terminal and sess.pending is None:
        body = {"terminal": True, "round": sess.round, "labeled": int(sess.data.labeled_idx.size)}
    else:
        f, fo = sess.scores()
        i = sess.pending
        body = {
            "terminal": False,
            "round": sess.round,
            "index": i,
            "features": sess.data.features[i].tolist(),
            "f": float(f[i]),
            "f_o": float(fo[i]),
            "suspected_noisy": [int(j) for j in np.flatnonzero(sess.x.p >= 0.5)],
        }
    sess.query_body = json.dumps(body, separators=(",", ":")).encode()
    return sess.query_body


def _model_payload(sess: _Session) -> dict:
    base = {
        "round": sess.round,
        "terminal": sess.terminal,
        "pending": sess.pending,
        "labeled": int(sess.data.labeled_idx.size),
        "candidates": int(sess.data.candidate_idx.size),
        "iters": sess.iters,
        "trace_tail": sess.trace_tail,
    }
    if sess.x is None:
        # nothing solved yet: initial snapshot
        base.update({"f": None, "f_o": None, "p": None, "q": None, "accuracy": None})
        return base
    f, fo = sess.scores()
    accuracy = None
    if sess.data.ground_truth is not None:
        pred = np.where(f >= 0.0, 1, -1)
        accuracy = float(np.mean(pred == sess.data.ground_truth))
    base.update(
        {
            "f": f.tolist(),
            "f_o": fo.tolist(),
            "p": sess.x.p.tolist(),
            "q": sess.x.q.tolist(),
            "suspected_noisy": [int(j) for j in np.flatnonzero(sess.x.p >= 0.5)],
            "accuracy": accuracy,
        }
    )
    return base


def create_app(data_dir: str | None = None, eager_solve: bool = True) -> FastAPI:
    """App factory.  data_dir holds one NDJSON log per session.

    eager_solve=False defers the first solve until the first query request;
    the default matches the create-then-label flow of the console.
    """
    app = FastAPI(title="ralkit label service")
    directory = data_dir or tempfile.mkdtemp(prefix="ralkit-sessions-")
    os.makedirs(directory, exist_ok=True)
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()
    app.state.data_dir = directory

    def get_session(sid: str) -> _Session:
        with registry_lock:
            if sid in sessions:
                return sessions[sid]
        # cold lookup: rebuild from the log if one exists
        sess = replay_session(directory, sid)
        with registry_lock:
            return sessions.setdefault(sid, sess)

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse({"error": exc.code, "message": exc.message}, status_code=exc.status)

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        if not isinstance(body, dict):
            raise ServiceError(400, "config", "body must be a JSON object")
        sess = _parse_create(body, directory)
        with registry_lock:
            sessions[sess.id] = sess
        if eager_solve:
            _ensure_solving(sess)
        return {"id": sess.id}

    @app.get("/sessions/{sid}/query")
    def next_query(sid: str, timeout: float = DEFAULT_QUERY_TIMEOUT):
        sess = get_session(sid)
        _ensure_solving(sess)
        if not sess.solved.wait(timeout):
            raise ServiceError(503, "timeout", f"round solve still running after {timeout}s")
        with sess.lock:
            if sess.error is not None:
                raise ServiceError(500, "solver", sess.error)
            return Response(content=_query_payload(sess), media_type="application/json")

    @app.post("/sessions/{sid}/label")
    def submit_label(sid: str, body: dict = Body(...)):
        sess = get_session(sid)
        with sess.lock:
            if sess.error is not None:
                raise ServiceError(500, "solver", sess.error)
            if sess.terminal:
                raise ServiceError(409, "state", "session is complete")
            if sess.pending is None:
                raise ServiceError(409, "state", "no pending query (solve in progress?)")
            try:
                index = int(body["index"])
                label = int(body["label"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ServiceError(400, "label", "body needs integer index and label") from exc
            if label not in (-1, 1):
                raise ServiceError(400, "label", f"label must be -1 or +1, got {label}")
            if index != sess.pending:
                raise ServiceError(
                    409, "conflict", f"pending query is {sess.pending}, not {index}"
                )
            ev = LabelEvent(ts=time.time(), round=sess.round, index=index, label=label)
            _append_line(sess.log_path, {"type": "label", **asdict(ev)})
            sess.events.append(ev)
            _apply_label(sess, index, label)
            summary = {
                "ok": True,
                "round": sess.round,
                "labeled": int(sess.data.labeled_idx.size),
                "candidates": int(sess.data.candidate_idx.size),
                "terminal": sess.terminal,
            }
        _ensure_solving(sess)
        return summary

    @app.get("/sessions/{sid}/model")
    def model_state(sid: str):
        sess = get_session(sid)
        with sess.lock:
            if sess.error is not None:
                raise ServiceError(500, "solver", sess.error)
            return _model_payload(sess)

    return app
