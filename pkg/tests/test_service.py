"""HTTP API: routing, error contract, and parity with the library calls."""

from __future__ import annotations

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from hintsr import hints
from hintsr.datagen import Observations
from hintsr.expr import to_prefix
from hintsr.infer import BeamCandidate, run_inference
from hintsr.service import (
    DEFAULT_PORT,
    PORT_ENV_VAR,
    ServiceError,
    _candidate_json,
    create_app,
    load_bundle,
    resolve_port,
)
from hintsr.train import save_checkpoint


@pytest.fixture(scope="module")
def bundle(quick_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("service") / "model.ckpt"
    save_checkpoint(path, quick_model)
    return load_bundle(path)


@pytest.fixture(scope="module")
def client(bundle):
    return TestClient(create_app(bundle, max_beam=16))


def obs_rows(fn, n=40, d=1, seed=0) -> list[list[float]]:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3.0, 3.0, size=(n, d))
    vals = fn(pts)
    return [[*map(float, p), float(v)] for p, v in zip(pts, vals)]


# ---------------------------------------------------------------------------
# Health and metadata
# ---------------------------------------------------------------------------


def test_health(client, bundle):
    r = client.get("/api/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "model_hash": bundle.model_hash}


def test_health_without_model():
    empty = TestClient(create_app(None))
    assert empty.get("/api/health").status_code == 503
    r = empty.post("/api/infer", json={"observations": [[1.0, 2.0]]})
    assert r.status_code == 503
    assert empty.get("/api/model").status_code == 503


def test_model_info(client, quick_model):
    info = client.get("/api/model").json()
    assert info["config"] == quick_model.cfg.to_dict()
    assert len(info["vocabulary"]) == 109
    assert set(info["presets"]) == set(hints.PRESETS)
    assert info["baseline"] is False
    assert info["max_beam"] == 16


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def test_infer_deterministic_and_matches_library(client, bundle):
    rows = obs_rows(lambda p: np.sin(p[:, 0]), seed=1)
    body = {"observations": rows, "beam": 4, "seed": 0, "restarts": 3}
    a = client.post("/api/infer", json=body)
    assert a.status_code == 200
    b = client.post("/api/infer", json=body)
    assert a.json() == b.json()

    data = np.asarray(rows, dtype=np.float32)
    obs = Observations(points=data[:, :-1], values=data[:, -1])
    direct = run_inference(bundle.model, bundle.vocab, obs, beam=4, seed=0,
                           restarts=3)
    got = a.json()["candidates"]
    assert got[0]["prefix"] == " ".join(direct.best.tokens)
    assert len(got) == len(direct.candidates)
    diag = a.json()["diagnostics"]
    assert diag["decode_budget"] == 4 and diag["dropped"] == direct.dropped


def test_infer_with_hypotheses(client):
    rows = obs_rows(lambda p: np.sin(p[:, 0]), seed=2)
    body = {"observations": rows, "hypotheses": "Complexity=2", "beam": 4,
            "seed": 0, "restarts": 2}
    r = client.post("/api/infer", json=body)
    assert r.status_code == 200
    for cand in r.json()["candidates"]:
        assert "complexity" in cand["satisfied"]


def test_candidate_json_is_strict(client):
    # a failed fit carries inf internally; the wire format must stay strict
    # JSON (browser parsers reject Infinity literals)
    cand = BeamCandidate(
        tokens=("sin", "x1"), log_prob=-1.5, constants={},
        fit_loss=float("inf"), satisfied={}, r2_selection=float("-inf"),
        fit_failed=True,
    )
    out = _candidate_json(cand)
    assert out["fit_loss"] is None and out["r2_selection"] is None
    json.dumps(out, allow_nan=False)

    rows = obs_rows(lambda p: np.sin(p[:, 0]), seed=4)
    r = client.post("/api/infer", json={"observations": rows, "beam": 3,
                                        "seed": 0, "restarts": 2})
    assert r.status_code == 200
    json.dumps(r.json(), allow_nan=False)


def test_infer_explore_rejected(client):
    # exploration needs a global pool, which the service does not hold; the
    # endpoint must reject rather than silently fall back
    rows = obs_rows(lambda p: p[:, 0], seed=3)
    r = client.post("/api/infer", json={"observations": rows, "explore": 3,
                                        "beam": 2, "seed": 0})
    assert r.status_code == 400 and "explore" in r.json()["detail"]


def test_infer_validation_errors(client):
    rows = obs_rows(lambda p: p[:, 0], n=10)
    r = client.post("/api/infer", json={"observations": rows, "beam": 99})
    assert r.status_code == 400 and "beam" in r.json()["detail"]

    r = client.post("/api/infer", json={"observations": rows,
                                        "dataset": "also.csv"})
    assert r.status_code == 400

    bad = [[1.0, 2.0], [3.0]]
    r = client.post("/api/infer", json={"observations": bad})
    assert r.status_code == 400 and "(at row 1)" in r.json()["detail"]

    r = client.post("/api/infer", json={"observations": []})
    assert r.status_code == 400 and "(at row 0)" in r.json()["detail"]

    wide = obs_rows(lambda p: p.sum(axis=1), d=4, n=8)
    r = client.post("/api/infer", json={"observations": wide})
    assert r.status_code == 400 and "columns" in r.json()["detail"]

    r = client.post("/api/infer", json={"observations": rows,
                                        "hypotheses": "<Positive> sin"})
    assert r.status_code == 400 and "position" in r.json()


def test_infer_from_csv_dataset(client, tmp_path):
    path = tmp_path / "points.csv"
    rows = obs_rows(lambda p: np.sin(p[:, 0]), n=24, seed=4)
    path.write_text("x1,y\n" + "\n".join(f"{a},{b}" for a, b in rows))
    r = client.post("/api/infer", json={"dataset": str(path), "beam": 3,
                                        "seed": 0, "restarts": 2})
    assert r.status_code == 200
    missing = client.post("/api/infer", json={"dataset": str(tmp_path / "no.csv")})
    assert missing.status_code == 400


# ---------------------------------------------------------------------------
# Hypothesis checking
# ---------------------------------------------------------------------------


def test_check_parity_with_library(client, quick_corpus):
    """Replay corpus hypotheses against shuffled expressions; the endpoint
    must agree with satisfied_flags exactly."""
    pool = [s for s in quick_corpus[:200]
            if any(v is not None for v in (s.pi.positive, s.pi.complexity,
                                           s.pi.symmetry, s.pi.constants))]
    assert len(pool) >= 30
    rng = np.random.default_rng(5)
    for i in range(30):
        holder = pool[i]
        expr_sample = pool[int(rng.integers(len(pool)))]
        body = {
            "expression": " ".join(to_prefix(expr_sample.skeleton)),
            "hypotheses": hints.hypotheses_string(holder.pi),
            "constant_values": [list(p) for p in (holder.pi.constants or [])],
            "constants": list(expr_sample.constants),
            "seed": 0,
        }
        r = client.post("/api/check", json=body)
        assert r.status_code == 200, r.text
        want = hints.satisfied_flags(
            expr_sample.skeleton, holder.pi,
            constants=expr_sample.constants,
            pointers=dict(holder.pi.constants or []),
            probe_seed=0,
        )
        got = r.json()
        assert got["flags"] == want
        assert got["all"] == (all(want.values()) if want else True)


def test_check_empty_hypotheses_accepts_everything(client):
    r = client.post("/api/check", json={"expression": "sin x1"})
    assert r.status_code == 200
    assert r.json() == {"flags": {}, "all": True}


def test_check_grammar_error_has_position(client):
    r = client.post("/api/check", json={"expression": "sin x1",
                                        "hypotheses": "<Positive> sin <Positive>"})
    assert r.status_code == 400
    body = r.json()
    assert "position" in body and isinstance(body["position"], int)


def test_check_expression_error_annotated(client):
    r = client.post("/api/check", json={"expression": "frobnicate x1"})
    assert r.status_code == 400
    assert "token" in r.json()["detail"]


def test_check_payload_without_hypotheses(client):
    r = client.post("/api/check", json={"expression": "sin x1",
                                        "constant_values": [[0, 1.5]]})
    assert r.status_code == 400


# ---------------------------------------------------------------------------
# Constant fitting
# ---------------------------------------------------------------------------


def test_fit_endpoint(client):
    rows = obs_rows(lambda p: 2.5 * np.sin(p[:, 0]) - 1.0, n=120, seed=6)
    r = client.post("/api/fit", json={"skeleton": "add mul c sin x1 c",
                                      "observations": rows, "seed": 0})
    assert r.status_code == 200
    body = r.json()
    assert body["failed"] is False
    assert abs(body["constants"]["0"] - 2.5) < 1e-3
    assert abs(body["constants"]["1"] + 1.0) < 1e-3


def test_fit_reports_failure_without_error(client):
    rows = obs_rows(lambda p: p[:, 0], n=20, seed=7)
    rows = [[r[0] + 10.0, r[1]] for r in rows]  # x in [7, 13]
    r = client.post("/api/fit", json={"skeleton": "sqrt sub c mul x1 x1",
                                      "observations": rows, "restarts": 4})
    assert r.status_code == 200
    assert r.json()["failed"] is True


def test_fit_with_pinned_pointer(client):
    rows = obs_rows(lambda p: 2.5 * np.sin(p[:, 0]) - 1.0, n=80, seed=8)
    r = client.post("/api/fit", json={
        "skeleton": "add mul pointer_0 sin x1 pointer_1",
        "observations": rows, "pinned": [[0, 2.5]], "seed": 0,
    })
    assert r.status_code == 200
    assert abs(r.json()["constants"]["0"] + 1.0) < 1e-3


# ---------------------------------------------------------------------------
# Port resolution
# ---------------------------------------------------------------------------


def test_resolve_port(monkeypatch):
    monkeypatch.delenv(PORT_ENV_VAR, raising=False)
    assert resolve_port(None) == DEFAULT_PORT
    assert resolve_port(9001) == 9001
    monkeypatch.setenv(PORT_ENV_VAR, "7777")
    assert resolve_port(None) == 7777
    assert resolve_port(9001) == 9001  # explicit flag still wins
    monkeypatch.setenv(PORT_ENV_VAR, "not-a-port")
    with pytest.raises(ServiceError):
        resolve_port(None)
