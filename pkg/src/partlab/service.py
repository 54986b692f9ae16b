"""HTTP face of the edit engine: a bounded job queue over one executor.

Handlers never run the model. They validate payloads, enqueue jobs, and read
the job store, so health and status responses stay live while an edit
computes on the worker thread. Every JSON response carries `schema_version`;
image responses are PNG files the engine wrote atomically.

Routes (all under /v1):
    GET  /health                     liveness + schema version
    GET  /tokens                     trained part tokens with their windows
    POST /jobs/edit                  enqueue an edit job -> job id (202)
    GET  /jobs/{id}                  job record (status, payload, artifacts)
    GET  /jobs/{id}/result.png       edited image (404 until done)
    GET  /jobs/{id}/source.png       source-path render of the same job
    GET  /jobs/{id}/mask/{t}.png     aggregated blend mask at noise level t
    POST /generate                   synchronous seed+prompt -> source PNG
"""

from __future__ import annotations

import queue
import threading
import time
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response

from .config import EngineConfig
from .engine import SCHEMA_VERSION, Engine, EditRequest, RequestError, write_outcome
from .pngio import png_bytes

TERMINAL_STATES = ("done", "failed")
_LOCAL_UI_ORIGIN = r"https?://(localhost|127\.0\.0\.1)(:\d+)?"


class JobStore:
    """Monotonic job ids, concurrent readers, exclusive single-writer updates."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        self._counter = 0

    def create(self, payload: dict) -> dict:
        with self._lock:
            self._counter += 1
            job_id = f"job-{self._counter:06d}"
            record = {
                "job_id": job_id,
                "status": "queued",
                "payload": payload,
                "artifacts": {},
                "error": None,
                "timings": {"created": round(time.time(), 3)},
            }
            self._records[job_id] = record
            return dict(record)

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            record = self._records.get(job_id)
            return None if record is None else dict(record)

    def discard(self, job_id: str) -> None:
        with self._lock:
            self._records.pop(job_id, None)

    def update(self, job_id: str, **changes) -> dict:
        with self._lock:
            record = self._records[job_id]
            if record["status"] in TERMINAL_STATES:
                raise RuntimeError(f"{job_id} is {record['status']}; terminal states are immutable")
            timings = changes.pop("timings", None)
            record.update(changes)
            if timings:
                record["timings"].update(timings)
            return dict(record)


def _versioned(body: dict, status_code: int = 200) -> JSONResponse:
    return JSONResponse({"schema_version": SCHEMA_VERSION, **body}, status_code=status_code)


def _error(status_code: int, message: str) -> JSONResponse:
    return _versioned({"errors": [{"field": "", "message": message}]}, status_code)


def job_dir(config: EngineConfig, job_id: str) -> Path:
    return Path(config.output_dir) / "jobs" / job_id


def build_app(engine: Engine, config: EngineConfig | None = None) -> FastAPI:
    config = config or engine.config
    app = FastAPI(title="part-edit engine", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origin_regex=_LOCAL_UI_ORIGIN,
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = JobStore()
    jobs: queue.Queue[tuple[str, EditRequest]] = queue.Queue(maxsize=config.queue_depth)
    app.state.store = store

    def worker() -> None:
        while True:
            job_id, request = jobs.get()
            store.update(job_id, status="running", timings={"started": round(time.time(), 3)})
            try:
                outcome = engine.edit(request)
                write_outcome(outcome, job_dir(config, job_id))
                store.update(
                    job_id,
                    status="done",
                    artifacts=outcome.receipt["artifacts"],
                    timings={
                        "finished": round(time.time(), 3),
                        "duration_s": outcome.receipt["timings"]["duration_s"],
                    },
                )
            except Exception as exc:  # a failed job must not kill the executor
                store.update(
                    job_id,
                    status="failed",
                    error=f"{type(exc).__name__}: {exc}",
                    timings={"finished": round(time.time(), 3)},
                )

    for i in range(config.workers):
        threading.Thread(target=worker, name=f"edit-worker-{i}", daemon=True).start()

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        errors = [
            {"field": ".".join(str(p) for p in err.get("loc", [])), "message": err.get("msg", "")}
            for err in exc.errors()
        ]
        return _versioned({"errors": errors}, 400)

    @app.get("/v1/health")
    def health():
        return _versioned({"status": "ok"})

    @app.get("/v1/tokens")
    def tokens():
        return _versioned({"tokens": engine.token_rows(), "steps": config.steps})

    @app.post("/v1/jobs/edit")
    def submit_edit(payload: dict):
        try:
            request = engine.parse_request(payload)
        except RequestError as exc:
            return _versioned({"errors": exc.errors}, 400)
        record = store.create(request.payload_echo())
        try:
            jobs.put_nowait((record["job_id"], request))
        except queue.Full:
            store.discard(record["job_id"])
            return _error(429, f"job queue is full (depth {config.queue_depth}); retry later")
        return _versioned({"job_id": record["job_id"], "status": record["status"]}, 202)

    @app.get("/v1/jobs/{job_id}")
    def job_status(job_id: str):
        record = store.get(job_id)
        if record is None:
            return _error(404, f"unknown job id {job_id!r}")
        return _versioned(record)

    def _artifact(job_id: str, relative: str):
        record = store.get(job_id)
        if record is None:
            return _error(404, f"unknown job id {job_id!r}")
        if record["status"] == "failed":
            return _error(404, f"job failed: {record['error']}")
        if record["status"] != "done":
            return _error(404, f"job is {record['status']}; artifacts appear when it is done")
        path = job_dir(config, job_id) / relative
        if not path.exists():
            return _error(404, f"job has no artifact {relative!r}")
        return FileResponse(path, media_type="image/png")

    @app.get("/v1/jobs/{job_id}/result.png")
    def job_result(job_id: str):
        return _artifact(job_id, "result.png")

    @app.get("/v1/jobs/{job_id}/source.png")
    def job_source(job_id: str):
        return _artifact(job_id, "source.png")

    @app.get("/v1/jobs/{job_id}/mask/{t}.png")
    def job_mask(job_id: str, t: int):
        return _artifact(job_id, f"mask/{t}.png")

    @app.post("/v1/generate")
    def generate(payload: dict):
        errors = []
        unknown = sorted(set(payload) - {"seed", "prompt"})
        if unknown:
            errors.append({"field": "body", "message": f"unknown fields {unknown}"})
        seed = payload.get("seed")
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            errors.append({"field": "seed", "message": "must be a non-negative integer"})
        prompt = payload.get("prompt")
        if not isinstance(prompt, str) or not prompt.strip():
            errors.append({"field": "prompt", "message": "must be a non-empty string"})
        if errors:
            return _versioned({"errors": errors}, 400)
        try:
            image = engine.generate(seed, prompt)
        except ValueError as exc:
            return _versioned({"errors": [{"field": "prompt", "message": str(exc)}]}, 400)
        return Response(
            content=png_bytes(image),
            media_type="image/png",
            headers={"X-Schema-Version": str(SCHEMA_VERSION)},
        )

    return app
