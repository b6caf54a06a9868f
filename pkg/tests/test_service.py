import json
import threading
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from objsplat.cli import main
from objsplat.service import create_app


@pytest.fixture(scope="module")
def service_fixture(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc") / "nested"
    assert main(["gen-synthetic", "nested", "--out", str(out), "--seed", "9",
                 "--iterations", "10"]) == 0
    cfg_path = out / "scene_config.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["train"]["stage_boundaries"] = [3, 6]
    cfg["train"]["densify_from"] = 10 ** 9
    cfg_path.write_text(json.dumps(cfg))
    ckpt = out / "out" / "init.ckpt"
    assert main(["init", "--config", str(cfg_path), "--out", str(ckpt)]) == 0
    trained = out / "out" / "trained.ckpt"
    assert main(["train", "--config", str(cfg_path), "--checkpoint", str(ckpt),
                 "--out", str(trained)]) == 0
    return out, trained


@pytest.fixture(scope="module")
def client(service_fixture):
    out, trained = service_fixture
    app = create_app(trained, embeddings_path=out / "embeddings.bin")
    with TestClient(app) as c:
        yield c


def test_scene_endpoint_lists_objects(client):
    payload = client.get("/scene").json()
    assert payload["objects"]["S"] == [4, 5, 6]
    assert payload["objects"]["M"] == [2, 3]
    assert payload["objects"]["L"] == [1]
    assert len(payload["cameras"]) == 24


def test_query_with_embedding_vector(client):
    vec = [0.0] * 16
    vec[4] = 1.0
    payload = client.post("/query", json={"embedding": vec, "granularity": "S",
                                          "top_k": 3}).json()
    assert payload["matches"][0]["object_id"] == 4
    assert payload["matches"][0]["score"] == pytest.approx(1.0, abs=1e-6)


def test_query_text_without_endpoint_is_rejected(client):
    resp = client.post("/query", json={"text": "a red ball"})
    assert resp.status_code == 400
    assert "embedding endpoint" in resp.json()["detail"]


def test_query_requires_payload(client):
    assert client.post("/query", json={}).status_code == 400
    assert client.post("/query", content=b"not json").status_code in (400, 422)


def test_render_full_scene_png(client):
    resp = client.get("/render", params={"camera": 0})
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_render_unknown_camera_404(client):
    assert client.get("/render", params={"camera": 999}).status_code == 404


def test_render_unknown_object_404(client):
    resp = client.get("/render", params={"camera": 0, "object_id": 77,
                                         "granularity": "S"})
    assert resp.status_code == 404


def test_render_highlight_is_deterministic(client):
    a = client.get("/render", params={"camera": 1, "object_id": 4, "granularity": "S"})
    b = client.get("/render", params={"camera": 1, "object_id": 4, "granularity": "S"})
    assert a.content == b.content


def test_export_endpoint_returns_ply(client):
    resp = client.get("/export/4", params={"granularity": "S"})
    assert resp.status_code == 200
    assert resp.content.startswith(b"ply\n")
    assert client.get("/export/99", params={"granularity": "S"}).status_code == 404


def test_concurrent_queries_match_sequential(client):
    queries = []
    rng = np.random.default_rng(3)
    for _ in range(100):
        v = rng.normal(0, 1, 16)
        queries.append((v / np.linalg.norm(v)).tolist())
    sequential = [client.post("/query", json={"embedding": q}).json() for q in queries]
    results = [None] * len(queries)

    def worker(i):
        results[i] = client.post("/query", json={"embedding": queries[i]}).json()

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(len(queries))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == sequential


def test_service_503_while_loading(tmp_path):
    app = create_app(tmp_path / "missing.ckpt")
    with TestClient(app) as c:
        assert c.get("/scene").status_code == 503
