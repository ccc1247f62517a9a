"""Content-addressed memoization for evaluation results.

Every edit is keyed by the exact bytes that determine its output: image, mask,
prompt, seed, and sampler params. Identical requests replay from disk without
touching the backend, which is what makes warm reruns free and byte-stable.

Layout: ``<cache_dir>/<first two key hex chars>/<64-hex key>``. Each file is a
length-prefixed pair of (edited image bytes, metadata JSON). Writes go through
a temp file and ``os.replace`` so readers never observe a partial record, and
any record that fails to parse is treated as a miss and overwritten.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path

from .gateway import Backend, EditRequest, EvaluationResult
from .metrics import PerceptionScores
from .prompts import METRICS

log = logging.getLogger(__name__)

_RAW_SCORE_MARKER = b"raw-score"


def edit_cache_key(request: EditRequest) -> str:
    """Hex digest over every input that can change the edit output."""
    h = hashlib.sha256()
    h.update(request.image)
    h.update(request.mask)
    h.update(request.prompt.encode("utf-8"))
    h.update(request.seed.to_bytes(8, "big"))
    h.update(request.params.canonical_json())
    return h.hexdigest()


def raw_score_cache_key(image: bytes, record_id: str | None) -> str:
    """Key for raw (pre-edit) scores; disjoint from the edit key space."""
    h = hashlib.sha256()
    h.update(image)
    h.update(_RAW_SCORE_MARKER)
    if record_id is not None:
        h.update(record_id.encode("utf-8"))
    return h.hexdigest()


def _pack(image: bytes, meta: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return (
        len(image).to_bytes(8, "big")
        + image
        + len(meta_bytes).to_bytes(8, "big")
        + meta_bytes
    )


def _unpack(blob: bytes) -> tuple[bytes, dict]:
    if len(blob) < 8:
        raise ValueError("record shorter than image length prefix")
    image_len = int.from_bytes(blob[:8], "big")
    offset = 8 + image_len
    if len(blob) < offset + 8:
        raise ValueError("record truncated before metadata length prefix")
    meta_len = int.from_bytes(blob[offset : offset + 8], "big")
    meta_end = offset + 8 + meta_len
    if len(blob) != meta_end:
        raise ValueError("record length does not match its prefixes")
    meta = json.loads(blob[offset + 8 : meta_end].decode("utf-8"))
    if not isinstance(meta, dict):
        raise ValueError("metadata must be a JSON object")
    return blob[8:offset], meta


class CachedBackend:
    """Wraps a backend with the on-disk cache. Thread-safe for distinct keys;
    concurrent writers of the same key settle by last ``os.replace`` winning,
    which is harmless because both wrote identical content-addressed records.
    """

    def __init__(self, inner: Backend, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / key

    def _read(self, key: str) -> tuple[bytes, dict] | None:
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            return None
        except OSError as exc:
            log.warning("cache read failed for %s: %s", path, exc)
            return None
        try:
            return _unpack(blob)
        except (ValueError, UnicodeDecodeError) as exc:
            log.warning("corrupt cache record %s (%s); treating as miss", path, exc)
            return None

    def _write(self, key: str, image: bytes, meta: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = _pack(image, meta)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(blob)
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise

    @staticmethod
    def _scores_from_meta(meta: dict) -> PerceptionScores:
        scores = meta["scores"]
        return PerceptionScores(*(float(scores[m]) for m in METRICS))

    def edit_and_score(self, request: EditRequest) -> EvaluationResult:
        key = edit_cache_key(request)
        hit = self._read(key)
        if hit is not None:
            image, meta = hit
            try:
                return EvaluationResult(
                    edited_image=image,
                    scores=self._scores_from_meta(meta),
                    model_id=str(meta["model_id"]),
                    cache_hit=True,
                )
            except (KeyError, TypeError, ValueError) as exc:
                log.warning("corrupt cache metadata for key %s (%s); refetching", key, exc)
        result = self.inner.edit_and_score(request)
        self._write(
            key,
            result.edited_image,
            {"scores": result.scores.as_dict(), "model_id": result.model_id},
        )
        return result

    def score_raw(self, image: bytes, record_id: str | None = None) -> PerceptionScores:
        key = raw_score_cache_key(image, record_id)
        hit = self._read(key)
        if hit is not None:
            _, meta = hit
            try:
                return self._scores_from_meta(meta)
            except (KeyError, TypeError, ValueError) as exc:
                log.warning("corrupt cache metadata for key %s (%s); refetching", key, exc)
        scores = self.inner.score_raw(image, record_id)
        self._write(key, b"", {"scores": scores.as_dict(), "model_id": "raw"})
        return scores

    def ping(self) -> bool:
        return self.inner.ping()


def cached(inner: Backend, cache_dir: str | Path) -> CachedBackend:
    """Convenience wrapper constructor."""
    return CachedBackend(inner, cache_dir)
