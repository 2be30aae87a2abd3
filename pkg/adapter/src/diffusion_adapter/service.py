"""The wire-protocol service: schema-checked /generate plus /healthz.

Inference is single in-flight: one request renders at a time while up to
``queue_depth`` more wait their turn, and anything beyond that is turned
away with 503 rather than queued unboundedly. The model loads during
application startup, so probes before the lifespan has run see 503.
"""
from __future__ import annotations

import base64
import threading
from contextlib import asynccontextmanager, contextmanager
from typing import Any, Iterator

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .config import AdapterConfig
from .model import SyntheticVideoModel
from .validation import Violation, validate_design


class QueueFull(RuntimeError):
    """More requests in flight than the service admits."""


class InferenceGate:
    """One running inference, a bounded line of waiters, 503 past that."""

    def __init__(self, queue_depth: int) -> None:
        self._slots = threading.BoundedSemaphore(queue_depth + 1)
        self._running = threading.Lock()

    @contextmanager
    def admit(self) -> Iterator[None]:
        if not self._slots.acquire(blocking=False):
            raise QueueFull
        try:
            with self._running:
                yield
        finally:
            self._slots.release()


class ModelHolder:
    def __init__(self, config: AdapterConfig) -> None:
        self.config = config
        self.model: SyntheticVideoModel | None = None

    def load(self) -> None:
        self.model = SyntheticVideoModel(self.config)


def _error(status: int, detail: str, path: str | None = None) -> JSONResponse:
    content: dict[str, Any] = {"detail": detail}
    if path is not None:
        content["path"] = path
    return JSONResponse(status_code=status, content=content)


def _rejection(violation: Violation) -> JSONResponse:
    return _error(400, violation.detail(), violation.path)


def create_app(config: AdapterConfig | None = None) -> FastAPI:
    config = config or AdapterConfig()
    holder = ModelHolder(config)
    gate = InferenceGate(config.queue_depth)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        holder.load()
        yield

    app = FastAPI(title="diffusion-adapter", lifespan=lifespan)
    app.state.holder = holder

    @app.get("/healthz")
    async def healthz() -> JSONResponse:
        if holder.model is None:
            return _error(503, "model not loaded")
        return JSONResponse({"status": "ok", "capabilities": holder.model.capabilities})

    @app.post("/generate")
    async def generate(request: Request) -> JSONResponse:
        model = holder.model
        if model is None:
            return _error(503, "model not loaded")
        try:
            body = await request.json()
        except ValueError:
            return _rejection(Violation("request body is not JSON", "$"))
        violation = validate_design(body)
        if violation is not None:
            return _rejection(violation)

        def render() -> list[bytes]:
            with gate.admit():
                return model.generate(body)

        try:
            frames = await run_in_threadpool(render)
        except QueueFull:
            return _error(503, f"inference queue full (depth {config.queue_depth})")
        return JSONResponse(
            {
                "frames": [base64.b64encode(f).decode("ascii") for f in frames],
                "frame_count": len(frames),
                "capabilities": model.capabilities,
            }
        )

    return app
