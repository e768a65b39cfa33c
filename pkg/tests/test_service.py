"""Session lifecycle, blocking queries, event-log replay."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

import ralkit.harness as harness_mod
from ralkit.data import Dataset
from ralkit.harness import ExperimentConfig, decision_coef, run_active_loop
from ralkit.ral import RalConfig
from ralkit.service import create_app

QUERY_TIMEOUT = {"timeout": 90}


def pool_payload(seed=4, n=12):
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack([rng.normal(1.5, 0.5, (half, 2)), rng.normal(-1.5, 0.5, (n - half, 2))])
    truth = [1] * half + [-1] * (n - half)
    labels = [0] * n
    labels[0], labels[half] = 1, -1
    return {"features": X.tolist(), "labels": labels, "truth": truth}


def session_body(**overrides):
    body = {
        "dataset": pool_payload(),
        "config": {"lam": 1.0, "lam_o": 1.0, "c_a": 0.5, "b": 1, "n_o": 1},
        "rounds": 3,
    }
    body.update(overrides)
    return body


@pytest.fixture()
def client(tmp_path):
    return TestClient(create_app(data_dir=str(tmp_path / "sessions")))


def start(client, **overrides) -> str:
    r = client.post("/sessions", json=session_body(**overrides))
    assert r.status_code == 201
    return r.json()["id"]


# ---------------------------------------------------------------------------
# create_session


def test_create_returns_id(client):
    sid = start(client)
    assert isinstance(sid, str) and len(sid) > 0


def test_duplicate_create_distinct_ids(client):
    assert start(client) != start(client)


def test_batch_larger_than_candidate_pool_rejected(client):
    r = client.post("/sessions", json=session_body(config={"b": 50, "n_o": 1}))
    assert r.status_code == 400
    body = r.json()
    assert body["error"] == "config"
    assert "message" in body


def test_bad_dataset_rejected(client):
    bad = session_body(dataset={"features": [[0.0], [1.0]], "labels": [1, 5]})
    r = client.post("/sessions", json=bad)
    assert r.status_code == 400
    assert r.json()["error"] == "config"


def test_missing_dataset_rejected(client):
    r = client.post("/sessions", json={"config": {"b": 1}})
    assert r.status_code == 400


# ---------------------------------------------------------------------------
# next_query


def test_query_payload_shape(client):
    sid = start(client)
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    assert q["terminal"] is False
    assert q["round"] == 1
    assert isinstance(q["index"], int)
    assert len(q["features"]) == 2
    assert isinstance(q["f"], float) and isinstance(q["f_o"], float)
    assert isinstance(q["suspected_noisy"], list)


def test_repeated_query_byte_identical(client):
    sid = start(client)
    bodies = [
        client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).content for _ in range(3)
    ]
    assert bodies[0] == bodies[1] == bodies[2]


def test_fresh_session_matches_offline_round_one():
    # the offline loop and the service share solver defaults and warm policy,
    # so a session seeded with the loop's starting pool must pick the same query
    cfg = ExperimentConfig(
        dataset={"n": 8, "dim": 2, "separation": 3.0},
        rounds=1,
        ral=RalConfig(lam=1.0, lam_o=1.0, c_a=0.5, b=1, n_o=1),
        seeds=[1],
    )
    arena = harness_mod._build_arena(cfg, 1)
    metrics, _ = run_active_loop(cfg)

    app = create_app()
    client = TestClient(app)
    body = {
        "dataset": {
            "features": arena.pool.features.tolist(),
            "labels": arena.initial_labels.tolist(),
            "truth": arena.pool.ground_truth.tolist(),
        },
        "config": {"lam": 1.0, "lam_o": 1.0, "c_a": 0.5, "b": 1, "n_o": 1},
    }
    sid = client.post("/sessions", json=body).json()["id"]
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    assert q["index"] == metrics[0].queried


def test_finished_session_terminal_marker(client):
    sid = start(client, rounds=1)
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    client.post(f"/sessions/{sid}/label", json={"index": q["index"], "label": 1})
    done = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    assert done["terminal"] is True
    assert done["round"] == 2


def test_query_unknown_session_not_found(client):
    r = client.get("/sessions/nope/query", params=QUERY_TIMEOUT)
    assert r.status_code == 404
    assert r.json()["error"] == "not_found"


# ---------------------------------------------------------------------------
# submit_label


def test_submit_advances_round(client):
    sid = start(client)
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    r = client.post(f"/sessions/{sid}/label", json={"index": q["index"], "label": -1})
    assert r.status_code == 200
    body = r.json()
    assert body["round"] == 2
    assert body["terminal"] is False
    q2 = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    assert q2["round"] == 2
    assert q2["index"] != q["index"]


def test_wrong_index_conflict(client):
    sid = start(client)
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    other = (q["index"] + 1) % 12
    r = client.post(f"/sessions/{sid}/label", json={"index": other, "label": 1})
    assert r.status_code == 409
    assert r.json()["error"] == "conflict"


def test_submit_without_pending_is_state_error(tmp_path):
    # deferred first solve: no query was ever produced, so nothing is pending
    client = TestClient(create_app(data_dir=str(tmp_path), eager_solve=False))
    sid = start(client)
    r = client.post(f"/sessions/{sid}/label", json={"index": 0, "label": 1})
    assert r.status_code == 409
    assert r.json()["error"] == "state"


def test_invalid_label_value_rejected(client):
    sid = start(client)
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    r = client.post(f"/sessions/{sid}/label", json={"index": q["index"], "label": 3})
    assert r.status_code == 400
    assert r.json()["error"] == "label"


# ---------------------------------------------------------------------------
# model_state


def test_initial_snapshot_before_first_solve(tmp_path):
    client = TestClient(create_app(data_dir=str(tmp_path), eager_solve=False))
    sid = start(client)
    m = client.get(f"/sessions/{sid}/model").json()
    assert m["round"] == 1
    assert m["pending"] is None
    assert m["f"] is None and m["p"] is None
    assert m["accuracy"] is None
    assert m["terminal"] is False


def test_model_matches_offline_loop_after_same_labels():
    cfg = ExperimentConfig(
        dataset={"n": 8, "dim": 2, "separation": 3.0},
        rounds=3,
        ral=RalConfig(lam=1.0, lam_o=1.0, c_a=0.5, b=1, n_o=1),
        seeds=[1],
    )
    arena = harness_mod._build_arena(cfg, 1)
    metrics, x_off = run_active_loop(cfg)

    app = create_app()
    client = TestClient(app)
    body = {
        "dataset": {
            "features": arena.pool.features.tolist(),
            "labels": arena.initial_labels.tolist(),
            "truth": arena.pool.ground_truth.tolist(),
        },
        "config": {"lam": 1.0, "lam_o": 1.0, "c_a": 0.5, "b": 1, "n_o": 1},
    }
    sid = client.post("/sessions", json=body).json()["id"]
    data_r = Dataset(
        features=arena.pool.features,
        labels=arena.initial_labels,
        ground_truth=arena.pool.ground_truth,
    )
    for m in metrics[:2]:
        q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
        assert q["index"] == m.queried
        answer = int(arena.pool.ground_truth[m.queried])
        client.post(f"/sessions/{sid}/label", json={"index": m.queried, "label": answer})
        data_r = data_r.with_label(m.queried, answer)
    # wait for the post-submit solve, then compare decision values
    client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT)
    state = client.get(f"/sessions/{sid}/model").json()
    f_off = arena.gram.K @ decision_coef(x_off, data_r, 1.0)
    assert np.allclose(state["f"], f_off, atol=1e-10)
    assert np.allclose(state["p"], x_off.p, atol=1e-10)
    assert state["round"] == 3


def test_model_unknown_session_not_found(client):
    r = client.get("/sessions/nope/model")
    assert r.status_code == 404


# ---------------------------------------------------------------------------
# persistence and replay


def test_replay_reproduces_live_state(tmp_path):
    directory = str(tmp_path / "sessions")
    client = TestClient(create_app(data_dir=directory))
    sid = start(client)
    truth = [1] * 6 + [-1] * 6
    for _ in range(2):
        q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
        client.post(
            f"/sessions/{sid}/label", json={"index": q["index"], "label": truth[q["index"]]}
        )
    client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT)
    live = client.get(f"/sessions/{sid}/model").json()

    fresh = TestClient(create_app(data_dir=directory))
    fresh.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT)
    replayed = fresh.get(f"/sessions/{sid}/model").json()
    assert replayed == live


def test_event_log_is_append_only_ndjson(tmp_path):
    import json as _json

    directory = str(tmp_path / "sessions")
    client = TestClient(create_app(data_dir=directory))
    sid = start(client)
    q = client.get(f"/sessions/{sid}/query", params=QUERY_TIMEOUT).json()
    client.post(f"/sessions/{sid}/label", json={"index": q["index"], "label": 1})
    with open(f"{directory}/{sid}.ndjson") as fh:
        lines = [_json.loads(line) for line in fh]
    assert lines[0]["type"] == "created"
    assert lines[0]["id"] == sid
    assert lines[1]["type"] == "label"
    assert lines[1]["index"] == q["index"]
    assert lines[1]["round"] == 1
    assert "ts" in lines[1]
