"""Wire-protocol client against a loopback HTTP service."""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from renewal.fixtures import make_image, make_mask
from renewal.gateway import (
    EditParams,
    EditRequest,
    ProtocolError,
    RemoteBackend,
    TransportError,
)


class _Controller:
    """Scripted behavior for the loopback service."""

    def __init__(self):
        self.requests = []
        self.fail_next: list[int] = []
        self.edit_response: dict | None = None
        self.score_response: dict | None = None
        self.health_body: dict = {"status": "ok"}
        self.health_status: int = 200


def _default_edit(body: dict) -> dict:
    image = base64.b64decode(body["image_b64"])
    edited = b"edited:" + hashlib.sha256(image + body["prompt"].encode()).digest()
    return {"image_b64": base64.b64encode(edited).decode(), "model_id": "editor-1"}


def _default_score(body: dict) -> dict:
    return {"safe": 5.0, "beauty": 6.5, "lively": 7.25, "model_id": "scorer-1"}


class _Handler(BaseHTTPRequestHandler):
    controller: _Controller

    def log_message(self, *args):
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/health":
            self._send_json(self.controller.health_status, self.controller.health_body)
        else:
            self._send_json(404, {"error": "no such path"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length))
        self.controller.requests.append((self.path, body))
        if self.controller.fail_next:
            status = self.controller.fail_next.pop(0)
            self._send_json(status, {"error": "injected"})
            return
        if self.path == "/v1/edit":
            self._send_json(200, self.controller.edit_response or _default_edit(body))
        elif self.path == "/v1/score":
            self._send_json(200, self.controller.score_response or _default_score(body))
        else:
            self._send_json(404, {"error": "no such path"})


@pytest.fixture()
def service():
    controller = _Controller()
    handler = type("Handler", (_Handler,), {"controller": controller})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield controller, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    thread.join()


class _Sleeper:
    def __init__(self):
        self.delays = []

    def __call__(self, seconds):
        self.delays.append(seconds)


def _request() -> EditRequest:
    return EditRequest(
        image=make_image(32, 24, seed=2),
        mask=make_mask(32, 24),
        prompt="Tyne Building in a street",
        seed=12345,
        params=EditParams(guidance_scale=8.0, steps=25),
    )


def test_edit_and_score_round_trip(service):
    controller, url = service
    backend = RemoteBackend(url, sleep=_Sleeper())
    request = _request()
    result = backend.edit_and_score(request)
    assert result.edited_image.startswith(b"edited:")
    assert result.model_id == "editor-1+scorer-1"
    assert result.scores.safe == 5.0
    assert result.scores.beauty == 6.5
    assert result.scores.lively == 7.25
    assert not result.cache_hit
    assert [path for path, _ in controller.requests] == ["/v1/edit", "/v1/score"]


def test_request_bytes_cross_the_wire_unmodified(service):
    controller, url = service
    backend = RemoteBackend(url, sleep=_Sleeper())
    request = _request()
    backend.edit(request)
    path, body = controller.requests[0]
    assert path == "/v1/edit"
    assert set(body) == {"image_b64", "mask_b64", "prompt", "seed", "params"}
    assert base64.b64decode(body["image_b64"]) == request.image
    assert base64.b64decode(body["mask_b64"]) == request.mask
    assert body["prompt"] == request.prompt
    assert body["seed"] == request.seed
    assert body["params"] == {"guidance_scale": 8.0, "steps": 25}


def test_score_payload_is_just_the_image(service):
    controller, url = service
    backend = RemoteBackend(url, sleep=_Sleeper())
    image = make_image(16, 16, seed=5)
    scores, model_id = backend.score(image)
    path, body = controller.requests[0]
    assert path == "/v1/score"
    assert set(body) == {"image_b64"}
    assert base64.b64decode(body["image_b64"]) == image
    assert model_id == "scorer-1"
    assert backend.score_raw(image) == scores


def test_server_errors_are_retried_until_success(service):
    controller, url = service
    controller.fail_next = [503, 500]
    sleeper = _Sleeper()
    backend = RemoteBackend(url, sleep=sleeper)
    result = backend.edit_and_score(_request())
    assert result.model_id == "editor-1+scorer-1"
    assert sleeper.delays == [0.5, 2.0]
    # two failures + one success + one score call
    assert len(controller.requests) == 4


def test_retries_exhaust_into_transport_error(service):
    controller, url = service
    controller.fail_next = [503, 503, 503, 503]
    sleeper = _Sleeper()
    backend = RemoteBackend(url, sleep=sleeper)
    with pytest.raises(TransportError, match="503"):
        backend.edit(_request())
    assert sleeper.delays == [0.5, 2.0, 8.0]


def test_connection_failure_is_retried_then_raised():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        dead_port = probe.getsockname()[1]
    sleeper = _Sleeper()
    backend = RemoteBackend(f"http://127.0.0.1:{dead_port}", sleep=sleeper)
    with pytest.raises(TransportError):
        backend.edit(_request())
    assert sleeper.delays == [0.5, 2.0, 8.0]


def test_client_errors_are_not_retried(service):
    controller, url = service
    controller.fail_next = [422]
    sleeper = _Sleeper()
    backend = RemoteBackend(url, sleep=sleeper)
    with pytest.raises(ProtocolError, match="422"):
        backend.edit(_request())
    assert sleeper.delays == []
    assert len(controller.requests) == 1


def test_malformed_edit_response_is_protocol_error(service):
    controller, url = service
    backend = RemoteBackend(url, sleep=_Sleeper())
    controller.edit_response = {"model_id": "editor-1"}  # image missing
    with pytest.raises(ProtocolError, match="malformed"):
        backend.edit(_request())
    controller.edit_response = {"image_b64": "@@not base64@@", "model_id": "m"}
    with pytest.raises(ProtocolError, match="malformed"):
        backend.edit(_request())
    controller.edit_response = {"image_b64": "", "model_id": ""}
    with pytest.raises(ProtocolError, match="model_id"):
        backend.edit(_request())


def test_malformed_score_response_is_protocol_error(service):
    controller, url = service
    backend = RemoteBackend(url, sleep=_Sleeper())
    controller.score_response = {"safe": 1.0, "beauty": 2.0, "model_id": "m"}
    with pytest.raises(ProtocolError, match="malformed"):
        backend.score(b"img")
    controller.score_response = {
        "safe": float("nan"), "beauty": 2.0, "lively": 3.0, "model_id": "m",
    }
    with pytest.raises(ProtocolError, match="finite"):
        backend.score(b"img")


def test_health_check(service):
    controller, url = service
    backend = RemoteBackend(url, sleep=_Sleeper())
    assert backend.ping() is True
    controller.health_body = {"status": "degraded"}
    assert backend.ping() is False
    controller.health_status = 503
    assert backend.ping() is False


def test_health_check_handles_unreachable_host():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        dead_port = probe.getsockname()[1]
    backend = RemoteBackend(f"http://127.0.0.1:{dead_port}")
    assert backend.ping() is False


def test_trailing_slash_in_base_url_is_tolerated(service):
    _, url = service
    backend = RemoteBackend(url + "/", sleep=_Sleeper())
    assert backend.ping() is True
