"""Deterministic synthetic fixtures: vocabularies, images, masks, manifests.

Everything here is seeded so tests and example scripts can regenerate
identical inputs. Vectors for oracle experiments live on a low-dimensional
unit sphere, where distances to the optimum vary smoothly across the
vocabulary and a surrogate model has a climbable landscape.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .embeddings import EmbeddingVocabulary, dump_vocabulary
from .prompts import METRICS

MANUAL_WORDS = ("Safe", "Beautiful", "Lively")


def make_sphere_vocabulary(
    count: int,
    dim: int = 3,
    seed: int = 0,
    extra_words: tuple[str, ...] = (),
) -> EmbeddingVocabulary:
    """``count`` unit vectors drawn uniformly on the sphere.

    The manual baseline words and any ``extra_words`` are included in the
    count and get random directions like everything else; remaining entries
    are named ``w0000``, ``w0001``, ...
    """
    named = list(MANUAL_WORDS) + [w for w in extra_words if w not in MANUAL_WORDS]
    if count < len(named):
        raise ValueError(f"count {count} cannot fit the {len(named)} named words")
    words = named + [f"w{i:04d}" for i in range(count - len(named))]
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((count, dim))
    return EmbeddingVocabulary.from_arrays(words, vectors, normalize=True)


def make_test_vocabulary(seed: int = 0) -> EmbeddingVocabulary:
    """Small general-purpose vocabulary for pipeline and CLI tests.

    50-dimensional, 100 words: the manual words plus a few multi-token
    entries whose underscores must render as spaces.
    """
    extra = ("Tyne", "Gin_Palaces", "Werribee", "Mayor", "Art_Deco")
    return make_sphere_vocabulary(100, dim=50, seed=seed, extra_words=extra)


def write_vocabulary(vocab: EmbeddingVocabulary, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_vocabulary(vocab, path)
    return path


def make_image(width: int = 48, height: int = 32, seed: int = 0) -> bytes:
    """Small deterministic RGB PNG."""
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def make_mask(
    width: int = 48,
    height: int = 32,
    box: tuple[int, int, int, int] | None = None,
) -> bytes:
    """Single-channel mask PNG; pixels >= 128 mark the editable region."""
    img = Image.new("L", (width, height), color=0)
    if box is None:
        box = (width // 4, height // 4, 3 * width // 4, 3 * height // 4)
    ImageDraw.Draw(img).rectangle(box, fill=255)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


# (scenario, factor) pairs cycled across generated records
_SCENARIO_CYCLE = (
    ("NI", "Wall"),
    ("BR", "Building"),
    ("GSE", "Vegetation"),
    ("CG", "Vegetation"),
    ("NI", "Fence"),
)

# covers every morphology stratum including the 0.5 and 1.5 boundaries
_HW_CYCLE = (0.3, 0.5, 1.0, 1.5, 1.6)


def build_fixture_manifest(
    root: str | Path,
    upd_records: int = 6,
    no_upd_records: int = 2,
    seed: int = 0,
    external_on_first: bool = True,
    width: int = 48,
    height: int = 32,
) -> Path:
    """Write a complete manifest with images and masks under ``root``.

    Returns the manifest path. Records cycle through all four scenarios and
    all morphology strata; ``no_upd_records`` entries exercise the gating
    branch. One external baseline entry is attached to the first record when
    requested.
    """
    root = Path(root)
    images = root / "images"
    masks = root / "masks"
    images.mkdir(parents=True, exist_ok=True)
    masks.mkdir(parents=True, exist_ok=True)
    lines = []
    total = upd_records + no_upd_records
    for i in range(total):
        record_id = f"rec{i:03d}"
        scenario, factor = _SCENARIO_CYCLE[i % len(_SCENARIO_CYCLE)]
        upd = i < upd_records
        image_name = f"images/{record_id}.png"
        (root / image_name).write_bytes(make_image(width, height, seed=seed * 1000 + i))
        entry: dict = {
            "id": record_id,
            "image": image_name,
            "upd_detected": upd,
            "factor": factor if upd else None,
            "mask": None,
            "hw_ratio": _HW_CYCLE[i % len(_HW_CYCLE)],
            "scenario": scenario,
        }
        if upd:
            mask_name = f"masks/{record_id}.png"
            (root / mask_name).write_bytes(make_mask(width, height))
            entry["mask"] = mask_name
        if upd and external_on_first and i == 0:
            entry["external_results"] = [
                {
                    "label": "diffedit",
                    "trigger": None,
                    "scores": {m: 5.0 + 0.5 * j for j, m in enumerate(METRICS)},
                }
            ]
        lines.append(json.dumps(entry, sort_keys=True))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def write_oracle_config(
    root: str | Path,
    vocab_filename: str = "vocab.txt",
    seed: int = 0,
    budget: int = 12,
    patience: int = 12,
    init_random: int = 3,
    workers: int = 1,
    extra: dict | None = None,
) -> Path:
    """Write a minimal YAML config for an oracle-backed run under ``root``."""
    root = Path(root)
    config = {
        "vocabulary": {"path": vocab_filename, "normalize": True},
        "backend": {"kind": "oracle"},
        "optimizer": {
            "budget": budget,
            "patience": patience,
            "init_random": init_random,
        },
        "workers": workers,
        "output_dir": "out",
        "seed": seed,
    }
    if extra:
        config.update(extra)
    path = root / "config.yaml"
    path.write_text(json.dumps(config, sort_keys=True), encoding="utf-8")
    return path
