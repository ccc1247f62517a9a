"""Live-server fixture: real uvicorn on a free port, torn down after each test."""

from __future__ import annotations

import socket
import threading
import time

import pytest
import uvicorn

from renewal_service.app import ServiceConfig, create_app


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture()
def live_server():
    """Factory: ``live_server(**config_fields)`` starts a server, returns its base URL."""
    running: list[tuple[uvicorn.Server, threading.Thread]] = []

    def start(**config_fields) -> str:
        port = _free_port()
        app = create_app(ServiceConfig(**config_fields))
        server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 10.0
        while not server.started:
            if not thread.is_alive():
                raise RuntimeError("server thread died during startup")
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start within 10 seconds")
            time.sleep(0.01)
        running.append((server, thread))
        return f"http://127.0.0.1:{port}"

    yield start
    for server, _ in running:
        server.should_exit = True
    for _, thread in running:
        thread.join(timeout=5.0)
