"""Evaluation gateway: the one boundary where images get edited and scored.

Three interchangeable backends sit behind a small protocol:

* :class:`RemoteBackend` speaks the HTTP wire protocol to a real editing and
  scoring service.
* :class:`SyntheticOracleBackend` is a deterministic stand-in whose reward
  landscape is known in closed form, so optimizer behavior can be verified at
  desk scale.
* :class:`renewal.cache.CachedBackend` wraps either with content-addressed
  memoization.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
import requests
from PIL import Image

from .embeddings import EmbeddingVocabulary, UnknownWordError
from .metrics import PerceptionScores
from .prompts import METRICS

log = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1

DEFAULT_RETRY_DELAYS = (0.5, 2.0, 8.0)


class GatewayError(Exception):
    """Base class for evaluation failures."""


class RequestValidationError(GatewayError):
    """Request rejected locally before any backend call."""


class TransportError(GatewayError):
    """Connection-level failure; retried before surfacing."""


class ProtocolError(GatewayError):
    """The service answered, but not per the wire contract. Not retryable."""


@dataclass(frozen=True)
class EditParams:
    guidance_scale: float = 7.5
    steps: int = 30

    def __post_init__(self):
        if self.steps < 1:
            raise RequestValidationError("steps must be a positive integer")

    def canonical_json(self) -> bytes:
        # stable byte form; participates in cache keys
        return (
            '{"guidance_scale":' + repr(float(self.guidance_scale))
            + ',"steps":' + str(int(self.steps)) + "}"
        ).encode("utf-8")


def image_info(data: bytes) -> tuple[tuple[int, int], str]:
    """(width, height) and color mode of encoded image bytes."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            return img.size, img.mode
    except Exception as exc:
        raise RequestValidationError(f"image bytes do not decode: {exc}") from exc


@dataclass(frozen=True)
class EditRequest:
    """One edit job: raster, editable-region mask, instruction, and sampling knobs.

    ``record_id`` and ``trigger`` are evaluation metadata; the synthetic oracle
    keys its landscape on them, remote backends ignore them, and neither enters
    the wire format or the cache key.
    """

    image: bytes
    mask: bytes
    prompt: str
    seed: int
    params: EditParams = field(default_factory=EditParams)
    record_id: str | None = None
    trigger: str | None = None

    def __post_init__(self):
        if not self.prompt:
            raise RequestValidationError("prompt must be non-empty")
        if not 0 <= self.seed <= MAX_SEED:
            raise RequestValidationError("seed must fit in an unsigned 64-bit integer")
        image_size, _ = image_info(self.image)
        mask_size, mask_mode = image_info(self.mask)
        if mask_mode != "L":
            raise RequestValidationError(
                f"mask must be single-channel 8-bit (mode 'L'), got {mask_mode!r}"
            )
        if image_size != mask_size:
            raise RequestValidationError(
                f"mask dimensions {mask_size} do not match image dimensions {image_size}"
            )


@dataclass(frozen=True)
class EvaluationResult:
    edited_image: bytes
    scores: PerceptionScores
    model_id: str
    cache_hit: bool = False

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be non-empty")


@runtime_checkable
class Backend(Protocol):
    """What the optimizer and pipeline require from an evaluator."""

    def edit_and_score(self, request: EditRequest) -> EvaluationResult: ...

    def score_raw(self, image: bytes, record_id: str | None = None) -> PerceptionScores: ...

    def ping(self) -> bool: ...


# ---------------------------------------------------------------------------
# Synthetic oracle


@dataclass(frozen=True)
class SyntheticOracleConfig:
    """Deterministic Gaussian-bump reward landscape over a vocabulary.

    Every metric of every record gets a base score hashed from the record id
    into ``[base_low, base_high]``; editing with trigger word w adds
    ``amplitude * exp(-||v(w) - v(w*)||^2 / (2 bandwidth^2))``. The bump peaks
    at the optimum word w*, chosen by seed when not pinned explicitly.
    """

    vocab: EmbeddingVocabulary
    optimum_word: str | None = None
    amplitude: float = 4.0
    bandwidth: float = 0.35
    base_low: float = 3.0
    base_high: float = 6.0
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.vocab.normalized:
            raise ValueError("oracle vocabulary must be unit-normalized")
        if self.amplitude <= 0 or self.bandwidth <= 0:
            raise ValueError("amplitude and bandwidth must be positive")
        if self.base_low >= self.base_high:
            raise ValueError("base_low must be below base_high")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.optimum_word is None:
            rng = np.random.default_rng(self.rng_seed)
            choice = self.vocab.words[int(rng.integers(len(self.vocab)))]
            object.__setattr__(self, "optimum_word", choice)
        elif self.optimum_word not in self.vocab:
            raise UnknownWordError(self.optimum_word)


def _unit_hash(*parts: object) -> float:
    """Stable hash of the parts mapped into [0, 1)."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def oracle_base_score(config: SyntheticOracleConfig, record_id: str, metric: str) -> float:
    """Per-record, per-metric base score in [base_low, base_high]."""
    if metric not in METRICS:
        raise KeyError(f"unknown metric {metric!r}")
    u = _unit_hash("base", record_id, metric)
    return config.base_low + u * (config.base_high - config.base_low)


def synthetic_score(
    config: SyntheticOracleConfig, record_id: str, trigger: str, metric: str
) -> float:
    """Base score plus the Gaussian bump (plus seeded noise if configured)."""
    base = oracle_base_score(config, record_id, metric)
    delta = config.vocab.vector(trigger) - config.vocab.vector(config.optimum_word)
    bump = config.amplitude * math.exp(
        -float(np.dot(delta, delta)) / (2.0 * config.bandwidth**2)
    )
    noise = 0.0
    if config.noise_sigma > 0.0:
        seed_digest = hashlib.sha256(
            f"noise|{config.rng_seed}|{record_id}|{trigger}|{metric}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(seed_digest[:8], "big"))
        noise = float(rng.normal(0.0, config.noise_sigma))
    return base + bump + noise


class SyntheticOracleBackend:
    """Backend over the synthetic landscape. Pure and trivially thread-safe.

    Requests must carry ``record_id`` and ``trigger`` metadata; the edited
    image is returned unchanged since the scores carry all the signal.
    """

    model_id = "synthetic-oracle"

    def __init__(self, config: SyntheticOracleConfig):
        self.config = config

    def edit_and_score(self, request: EditRequest) -> EvaluationResult:
        if request.record_id is None or request.trigger is None:
            raise RequestValidationError(
                "synthetic oracle requires record_id and trigger metadata on the request"
            )
        scores = PerceptionScores(
            *(
                synthetic_score(self.config, request.record_id, request.trigger, m)
                for m in METRICS
            )
        )
        return EvaluationResult(
            edited_image=request.image,
            scores=scores,
            model_id=self.model_id,
            cache_hit=False,
        )

    def score_raw(self, image: bytes, record_id: str | None = None) -> PerceptionScores:
        if record_id is None:
            raise RequestValidationError("synthetic oracle requires a record_id to score")
        return PerceptionScores(
            *(oracle_base_score(self.config, record_id, m) for m in METRICS)
        )

    def ping(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# Remote wire client


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class RemoteBackend:
    """HTTP client for the /v1/edit + /v1/score wire protocol.

    Transport failures and 5xx responses are retried with exponential backoff;
    4xx responses and malformed payloads are protocol errors and surface
    immediately. Request bytes are serialized exactly as given, never mutated.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        retry_delays: tuple[float, ...] = DEFAULT_RETRY_DELAYS,
        session: requests.Session | None = None,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retry_delays = tuple(retry_delays)
        self.session = session or requests.Session()
        self._sleep = sleep

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        attempts = len(self.retry_delays) + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                response = self.session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = TransportError(f"POST {path}: {exc}")
            else:
                if response.status_code == 200:
                    try:
                        body = response.json()
                    except ValueError as exc:
                        raise ProtocolError(f"POST {path}: response is not JSON: {exc}") from exc
                    if not isinstance(body, dict):
                        raise ProtocolError(f"POST {path}: response body must be a JSON object")
                    return body
                if 400 <= response.status_code < 500:
                    raise ProtocolError(
                        f"POST {path}: HTTP {response.status_code}: {response.text[:200]}"
                    )
                last_error = TransportError(
                    f"POST {path}: HTTP {response.status_code}: {response.text[:200]}"
                )
            if attempt < attempts - 1:
                delay = self.retry_delays[attempt]
                log.warning("retrying %s after failure (%s); sleeping %.1fs", path, last_error, delay)
                self._sleep(delay)
        assert last_error is not None
        raise last_error

    def edit(self, request: EditRequest) -> tuple[bytes, str]:
        payload = {
            "image_b64": _b64(request.image),
            "mask_b64": _b64(request.mask),
            "prompt": request.prompt,
            "seed": request.seed,
            "params": {
                "guidance_scale": request.params.guidance_scale,
                "steps": request.params.steps,
            },
        }
        body = self._post("/v1/edit", payload)
        try:
            edited = base64.b64decode(body["image_b64"], validate=True)
            model_id = body["model_id"]
        except (KeyError, ValueError, TypeError) as exc:
            raise ProtocolError(f"/v1/edit: malformed response body: {exc}") from exc
        if not isinstance(model_id, str) or not model_id:
            raise ProtocolError("/v1/edit: model_id must be a non-empty string")
        return edited, model_id

    def score(self, image: bytes) -> tuple[PerceptionScores, str]:
        body = self._post("/v1/score", {"image_b64": _b64(image)})
        try:
            values = [float(body[m]) for m in METRICS]
            model_id = body["model_id"]
        except (KeyError, ValueError, TypeError) as exc:
            raise ProtocolError(f"/v1/score: malformed response body: {exc}") from exc
        if not all(math.isfinite(v) for v in values):
            raise ProtocolError("/v1/score: scores must be finite")
        if not isinstance(model_id, str) or not model_id:
            raise ProtocolError("/v1/score: model_id must be a non-empty string")
        return PerceptionScores(*values), model_id

    def edit_and_score(self, request: EditRequest) -> EvaluationResult:
        edited, edit_model = self.edit(request)
        scores, score_model = self.score(edited)
        return EvaluationResult(
            edited_image=edited,
            scores=scores,
            model_id=f"{edit_model}+{score_model}",
            cache_hit=False,
        )

    def score_raw(self, image: bytes, record_id: str | None = None) -> PerceptionScores:
        scores, _ = self.score(image)
        return scores

    def ping(self) -> bool:
        try:
            response = self.session.get(f"{self.base_url}/v1/health", timeout=self.timeout)
        except requests.RequestException:
            return False
        if response.status_code != 200:
            return False
        try:
            return response.json().get("status") == "ok"
        except ValueError:
            return False
