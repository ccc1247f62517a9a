"""Shared test utilities: tiny PNG builders."""

from __future__ import annotations

import io

from PIL import Image

BASE_COLOR = (40, 80, 120)
BOX = (4, 3, 12, 9)  # left, upper, right, lower; right/lower exclusive


def rgb_png(width: int = 16, height: int = 12, color: tuple[int, int, int] = BASE_COLOR) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


def mask_png(
    width: int = 16,
    height: int = 12,
    box: tuple[int, int, int, int] = BOX,
    value: int = 255,
) -> bytes:
    """Single-channel mask: ``value`` inside ``box``, 0 everywhere else."""
    mask = Image.new("L", (width, height), 0)
    mask.paste(value, box)
    buf = io.BytesIO()
    mask.save(buf, format="PNG")
    return buf.getvalue()


def open_image(data: bytes) -> Image.Image:
    img = Image.open(io.BytesIO(data))
    img.load()
    return img


def in_box(x: int, y: int, box: tuple[int, int, int, int] = BOX) -> bool:
    return box[0] <= x < box[2] and box[1] <= y < box[3]
