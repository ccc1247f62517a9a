"""Service wiring: configuration, model loading, and the HTTP application.

The protocol separates two failure classes: 400 for a request that violates
the schema (missing or mistyped fields, undecodable payloads), 422 for a
well-formed request whose mask dimensions do not match the image. 503 means
the model is unavailable; the ``simulate_unavailable`` knob makes the first N
edit/score requests fail that way so clients can exercise their retry path.
"""

from __future__ import annotations

import base64
import binascii
import importlib
import io
import math
import threading
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .stub import METRICS, StubEditor, StubScorer

MODES = ("stub", "real")

EDIT_KEYS = {"image_b64", "mask_b64", "prompt", "seed", "params"}
PARAMS_KEYS = {"guidance_scale", "steps"}


class ServiceStartupError(RuntimeError):
    """The service cannot come up: bad configuration or unloadable models."""


@dataclass(frozen=True)
class ServiceConfig:
    mode: str = "stub"
    host: str = "127.0.0.1"
    port: int = 8000
    stub_seed: int = 0
    simulate_unavailable: int = 0
    edit_model: str | None = None
    score_model: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "real" and not (self.edit_model and self.score_model):
            raise ValueError("real mode requires both an edit and a score model identifier")
        if not 0 <= self.stub_seed < 2**64:
            raise ValueError("stub_seed must fit in an unsigned 64-bit integer")
        if self.simulate_unavailable < 0:
            raise ValueError("simulate_unavailable must be non-negative")
        if not 1 <= self.port <= 65535:
            raise ValueError("port must be in [1, 65535]")


def load_model(identifier: str, required: tuple[str, ...]):
    """Resolve ``package.module:factory`` and instantiate the model.

    The named attribute must be a zero-argument callable returning an object
    that provides ``model_id`` plus the ``required`` methods.
    """
    module_name, sep, attr = identifier.partition(":")
    if not sep or not module_name or not attr:
        raise ServiceStartupError(
            f"model identifier must look like 'package.module:factory', got {identifier!r}"
        )
    try:
        module = importlib.import_module(module_name)
        factory = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ServiceStartupError(f"cannot load model {identifier!r}: {exc}") from exc
    if not callable(factory):
        raise ServiceStartupError(f"model identifier {identifier!r} does not name a callable")
    model = factory()
    missing = [name for name in (*required, "model_id") if not hasattr(model, name)]
    if missing:
        raise ServiceStartupError(
            f"model {identifier!r} lacks required attributes: {', '.join(missing)}"
        )
    return model


def build_backends(config: ServiceConfig):
    """Instantiate the edit and score backends for the configured mode."""
    if config.mode == "stub":
        return StubEditor(config.stub_seed), StubScorer(config.stub_seed)
    return (
        load_model(config.edit_model, required=("edit",)),
        load_model(config.score_model, required=("score",)),
    )


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=400)


def _decode_b64(value: object, field: str) -> bytes:
    if not isinstance(value, str):
        raise ValueError(f"{field} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"{field} is not valid base64: {exc}") from exc


def _decode_image(data: bytes, field: str) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        return img
    except Exception as exc:
        raise ValueError(f"{field} does not decode as an image: {exc}") from exc


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the application; real-mode models load (or fail) right here."""
    editor, scorer = build_backends(config)
    app = FastAPI(title="renewal evaluator service", docs_url=None, redoc_url=None)

    remaining = {"count": config.simulate_unavailable}
    gate = threading.Lock()

    def unavailable() -> bool:
        with gate:
            if remaining["count"] > 0:
                remaining["count"] -= 1
                return True
        return False

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/edit")
    async def edit(request: Request):
        if unavailable():
            return JSONResponse({"error": "model unavailable"}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return _bad_request("request body is not valid JSON")
        if not isinstance(body, dict):
            return _bad_request("request body must be a JSON object")
        if set(body) != EDIT_KEYS:
            return _bad_request(f"request must have exactly the keys {sorted(EDIT_KEYS)}")

        try:
            image_bytes = _decode_b64(body["image_b64"], "image_b64")
            mask_bytes = _decode_b64(body["mask_b64"], "mask_b64")
            image = _decode_image(image_bytes, "image_b64")
            mask = _decode_image(mask_bytes, "mask_b64")
        except ValueError as exc:
            return _bad_request(str(exc))

        prompt = body["prompt"]
        if not isinstance(prompt, str) or not prompt:
            return _bad_request("prompt must be a non-empty string")
        seed = body["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            return _bad_request("seed must be an unsigned 64-bit integer")
        params = body["params"]
        if not isinstance(params, dict) or set(params) != PARAMS_KEYS:
            return _bad_request(f"params must have exactly the keys {sorted(PARAMS_KEYS)}")
        guidance = params["guidance_scale"]
        if isinstance(guidance, bool) or not isinstance(guidance, (int, float)) or not math.isfinite(guidance):
            return _bad_request("params.guidance_scale must be a finite number")
        steps = params["steps"]
        if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
            return _bad_request("params.steps must be a positive integer")
        if mask.mode != "L":
            return _bad_request(f"mask must be a single-channel 8-bit image, got mode {mask.mode!r}")
        if mask.size != image.size:
            return JSONResponse(
                {
                    "error": (
                        f"mask dimensions {mask.size[0]}x{mask.size[1]} do not match "
                        f"image dimensions {image.size[0]}x{image.size[1]}"
                    )
                },
                status_code=422,
            )

        edited = editor.edit(image_bytes, mask_bytes, prompt, seed, float(guidance), steps)
        return {
            "image_b64": base64.b64encode(edited).decode("ascii"),
            "model_id": editor.model_id,
        }

    @app.post("/v1/score")
    async def score(request: Request):
        if unavailable():
            return JSONResponse({"error": "model unavailable"}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return _bad_request("request body is not valid JSON")
        if not isinstance(body, dict) or set(body) != {"image_b64"}:
            return _bad_request("request must have exactly the key ['image_b64']")
        try:
            image_bytes = _decode_b64(body["image_b64"], "image_b64")
            _decode_image(image_bytes, "image_b64")
        except ValueError as exc:
            return _bad_request(str(exc))

        values = scorer.score(image_bytes)
        response = dict(zip(METRICS, values))
        response["model_id"] = scorer.model_id
        return response

    return app
