"""Shared helper: serve an ASGI app over a real socket for the duration of a test."""
from __future__ import annotations

import threading
import time
from contextlib import contextmanager
from typing import Iterator

import pytest


@contextmanager
def serve(app) -> Iterator[str]:
    """Run ``app`` under uvicorn on an ephemeral port, yield the base URL."""
    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning", lifespan="on")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10.0
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start within 10s")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10.0)


@pytest.fixture(scope="session")
def run_server():
    """The ``serve`` helper, for tests that need a custom app or config."""
    return serve


@pytest.fixture(scope="session")
def adapter_url() -> Iterator[str]:
    """A live default-config adapter shared by the whole session."""
    da = pytest.importorskip("diffusion_adapter")
    with serve(da.create_app(da.AdapterConfig())) as url:
        yield url
