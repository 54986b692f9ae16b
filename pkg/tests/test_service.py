"""HTTP service: job lifecycle, validation mapping, queue limits, artifacts."""

from __future__ import annotations

import json
import threading
import time
import types

import pytest
from fastapi.testclient import TestClient

from partlab import pngio
from partlab.config import EngineConfig
from partlab.engine import SCHEMA_VERSION
from partlab.scenes import SceneSpec
from partlab.service import JobStore, build_app, job_dir

SPEC = SceneSpec(
    kind="creature", stance="quadruped", background="sky",
    attrs=("red", "blue", "green"), seed=31,
)


def payload(**over) -> dict:
    base = {
        "scene": json.loads(SPEC.to_json()),
        "prompt": "with golden <creature-head>",
        "seed": 11,
    }
    base.update(over)
    return base


def wait_done(client: TestClient, job_id: str, deadline: float = 60.0) -> dict:
    end = time.time() + deadline
    while time.time() < end:
        record = client.get(f"/v1/jobs/{job_id}").json()
        if record["status"] in ("done", "failed"):
            return record
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} did not finish: {record}")


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def client(tiny_engine):
    return TestClient(build_app(tiny_engine))


@pytest.fixture(scope="module")
def finished_job(client):
    response = client.post("/v1/jobs/edit", json=payload())
    assert response.status_code == 202
    job_id = response.json()["job_id"]
    record = wait_done(client, job_id)
    assert record["status"] == "done", record
    return record


# ------------------------------------------------------------------ routes


def test_health(client):
    body = client.get("/v1/health").json()
    assert body == {"schema_version": SCHEMA_VERSION, "status": "ok"}


def test_tokens_listing(client, tiny_engine):
    body = client.get("/v1/tokens").json()
    assert body["schema_version"] == SCHEMA_VERSION
    names = [t["name"] for t in body["tokens"]]
    assert names == sorted(tiny_engine.tokens)
    assert all("window" in t for t in body["tokens"])


def test_job_record_fields(finished_job):
    assert finished_job["schema_version"] == SCHEMA_VERSION
    assert finished_job["job_id"].startswith("job-")
    assert finished_job["payload"]["prompt"] == "with golden <creature-head>"
    assert finished_job["artifacts"]["result"] == "result.png"
    assert finished_job["error"] is None
    assert finished_job["timings"]["finished"] >= finished_job["timings"]["started"]


def test_result_png_matches_engine_artifact(client, finished_job, tiny_engine):
    job_id = finished_job["job_id"]
    response = client.get(f"/v1/jobs/{job_id}/result.png")
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    on_disk = (job_dir(tiny_engine.config, job_id) / "result.png").read_bytes()
    assert response.content == on_disk
    image = pngio.read_png(response.content)
    assert image.shape == (32, 32, 3)


def test_source_and_mask_artifacts(client, finished_job, tiny_engine):
    job_id = finished_job["job_id"]
    assert client.get(f"/v1/jobs/{job_id}/source.png").status_code == 200
    for t in (1, tiny_engine.config.steps):
        assert client.get(f"/v1/jobs/{job_id}/mask/{t}.png").status_code == 200
    assert client.get(f"/v1/jobs/{job_id}/mask/999.png").status_code == 404


def test_parity_same_payload_same_bytes(client, finished_job):
    job_id = finished_job["job_id"]
    response = client.post("/v1/jobs/edit", json=payload())
    rerun = wait_done(client, response.json()["job_id"])
    first = client.get(f"/v1/jobs/{job_id}/result.png").content
    second = client.get(f"/v1/jobs/{rerun['job_id']}/result.png").content
    assert first == second


def test_zero_t_edit_rejected(client):
    response = client.post("/v1/jobs/edit", json=payload(t_edit=0))
    assert response.status_code == 400
    errors = response.json()["errors"]
    assert any(e["field"] == "t_edit" for e in errors)


def test_unknown_field_rejected(client):
    response = client.post("/v1/jobs/edit", json=payload(bogus=1))
    assert response.status_code == 400
    assert any(e["field"] == "body" for e in response.json()["errors"])


def test_malformed_json_rejected(client):
    response = client.post(
        "/v1/jobs/edit", content=b"{oops", headers={"content-type": "application/json"}
    )
    assert response.status_code == 400
    assert response.json()["schema_version"] == SCHEMA_VERSION


def test_unknown_job_id(client):
    assert client.get("/v1/jobs/job-999999").status_code == 404
    assert client.get("/v1/jobs/job-999999/result.png").status_code == 404


def test_artifacts_not_ready(client):
    record = client.app.state.store.create(payload())
    response = client.get(f"/v1/jobs/{record['job_id']}/result.png")
    assert response.status_code == 404
    message = response.json()["errors"][0]["message"]
    assert "queued" in message


def test_generate_png(client):
    response = client.post(
        "/v1/generate", json={"seed": 5, "prompt": "creature quadruped sky red blue green"}
    )
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    assert response.headers["x-schema-version"] == str(SCHEMA_VERSION)
    assert pngio.read_png(response.content).shape == (32, 32, 3)
    again = client.post(
        "/v1/generate", json={"seed": 5, "prompt": "creature quadruped sky red blue green"}
    )
    assert again.content == response.content


@pytest.mark.parametrize(
    "body, field",
    [
        ({"seed": -1, "prompt": "creature quadruped sky red blue green"}, "seed"),
        ({"seed": 5, "prompt": ""}, "prompt"),
        ({"seed": 5, "prompt": "with golden <creature-head>"}, "prompt"),
        ({"seed": 5, "prompt": "creature quadruped sky red blue green", "x": 1}, "body"),
    ],
)
def test_generate_validation(client, body, field):
    response = client.post("/v1/generate", json=body)
    assert response.status_code == 400
    assert any(e["field"] == field for e in response.json()["errors"])


def test_cors_allows_local_ui(client):
    response = client.options(
        "/v1/jobs/edit",
        headers={
            "Origin": "http://localhost:5173",
            "Access-Control-Request-Method": "POST",
        },
    )
    assert response.status_code == 200
    assert response.headers["access-control-allow-origin"] == "http://localhost:5173"


# ----------------------------------------------------------- queue + store


class StubEngine:
    """parse-anything engine whose edit blocks on a gate, then fails."""

    def __init__(self, config):
        self.config = config
        self.started = threading.Event()
        self.gate = threading.Event()

    def parse_request(self, payload):
        return types.SimpleNamespace(payload_echo=lambda: dict(payload))

    def token_rows(self):
        return []

    def edit(self, request):
        self.started.set()
        self.gate.wait(timeout=30)
        raise RuntimeError("stub failure")


def test_queue_overflow_and_failed_jobs(tmp_path):
    config = EngineConfig(queue_depth=1, output_dir=str(tmp_path))
    engine = StubEngine(config)
    client = TestClient(build_app(engine, config))

    first = client.post("/v1/jobs/edit", json={"n": 1})
    assert first.status_code == 202
    assert engine.started.wait(timeout=10)  # worker now holds job 1
    second = client.post("/v1/jobs/edit", json={"n": 2})
    assert second.status_code == 202  # sits in the depth-1 queue
    third = client.post("/v1/jobs/edit", json={"n": 3})
    assert third.status_code == 429
    overflow_ids = {first.json()["job_id"], second.json()["job_id"]}

    engine.gate.set()
    for job_id in overflow_ids:
        record = wait_done(client, job_id, deadline=30)
        assert record["status"] == "failed"
        assert "stub failure" in record["error"]
        assert client.get(f"/v1/jobs/{job_id}/result.png").status_code == 404


def test_job_store_monotonic_ids():
    store = JobStore()
    ids = [store.create({})["job_id"] for _ in range(3)]
    assert ids == sorted(ids) == ["job-000001", "job-000002", "job-000003"]


def test_job_store_terminal_states_immutable():
    store = JobStore()
    job_id = store.create({})["job_id"]
    store.update(job_id, status="done")
    with pytest.raises(RuntimeError, match="immutable"):
        store.update(job_id, status="running")
    assert store.get(job_id)["status"] == "done"


def test_job_store_discard():
    store = JobStore()
    job_id = store.create({})["job_id"]
    store.discard(job_id)
    assert store.get(job_id) is None
