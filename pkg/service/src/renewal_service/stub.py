"""Deterministic synthetic edit and score backends.

Stub mode mimics the wire-protocol contract without any model: edits fill the
editable mask region with a flat color keyed by (prompt, seed), and scores
hash the image bytes into [0, 10]. Both are pure functions of their inputs
plus the service's stub seed, so identical requests yield identical bytes.
"""

from __future__ import annotations

import hashlib
import io

from PIL import Image

METRICS = ("safe", "beauty", "lively")

EDITABLE_THRESHOLD = 128  # mask pixels at or above this are editable


def _u64(value: int) -> bytes:
    return int(value).to_bytes(8, "big")


class StubEditor:
    """Fills the editable region with a color derived from (prompt, seed)."""

    model_id = "stub-edit"

    def __init__(self, stub_seed: int = 0):
        self.stub_seed = int(stub_seed)

    def fill_color(self, prompt: str, seed: int) -> tuple[int, int, int]:
        digest = hashlib.sha256(
            b"edit|" + _u64(self.stub_seed) + b"|" + _u64(seed) + b"|" + prompt.encode("utf-8")
        ).digest()
        return digest[0], digest[1], digest[2]

    def edit(
        self,
        image: bytes,
        mask: bytes,
        prompt: str,
        seed: int,
        guidance_scale: float,
        steps: int,
    ) -> bytes:
        del guidance_scale, steps  # sampling knobs do not change the stub pattern
        img = Image.open(io.BytesIO(image)).convert("RGB")
        mask_img = Image.open(io.BytesIO(mask))
        editable = mask_img.point(lambda p: 255 if p >= EDITABLE_THRESHOLD else 0)
        flat = Image.new("RGB", img.size, self.fill_color(prompt, seed))
        out = Image.composite(flat, img, editable)
        buf = io.BytesIO()
        out.save(buf, format="PNG")
        return buf.getvalue()


class StubScorer:
    """Maps a stable hash of the image bytes into [0, 10] per metric."""

    model_id = "stub-score"

    def __init__(self, stub_seed: int = 0):
        self.stub_seed = int(stub_seed)

    def score(self, image: bytes) -> tuple[float, float, float]:
        values = []
        for metric in METRICS:
            digest = hashlib.sha256(
                b"score|" + _u64(self.stub_seed) + b"|" + metric.encode("ascii") + b"|" + image
            ).digest()
            values.append(int.from_bytes(digest[:8], "big") / 2**64 * 10.0)
        return values[0], values[1], values[2]
