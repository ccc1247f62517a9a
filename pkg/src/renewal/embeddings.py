"""Word-vector vocabulary: loading, lookup, and nearest-neighbor search.

The vocabulary is the discrete search space for trigger-word tuning. Files use
the plain-text format ``<count> <dim>`` on the first line followed by one
``<word> <f1> ... <fdim>`` line per entry. Underscores inside a word stand for
spaces when the word is rendered into a prompt.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

import numpy as np

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


class VocabularyError(ValueError):
    """Malformed vocabulary file or inconsistent vectors."""


class UnknownWordError(KeyError):
    """Lookup of a word that is not in the vocabulary."""


class NeighborResult(NamedTuple):
    word: str
    similarity: float


@dataclass(frozen=True)
class EmbeddingVocabulary:
    """Immutable word -> vector map over a fixed dimension.

    Words are unique after case-folding and lookup is case-insensitive.
    Safe to share across threads once constructed.
    """

    words: tuple[str, ...]
    vectors: np.ndarray
    normalized: bool
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise VocabularyError("vectors must be a 2-D array")
        if len(self.words) != self.vectors.shape[0]:
            raise VocabularyError(
                f"{len(self.words)} words but {self.vectors.shape[0]} vectors"
            )
        if self.vectors.shape[1] < 2:
            raise VocabularyError("vector dimension must be >= 2")
        index: dict[str, int] = {}
        for i, w in enumerate(self.words):
            key = w.casefold()
            if key in index:
                raise VocabularyError(f"duplicate word after case-folding: {w!r}")
            index[key] = i
        object.__setattr__(self, "_index", index)
        if self.normalized:
            norms = np.linalg.norm(self.vectors, axis=1)
            if not np.all(np.abs(norms - 1.0) <= NORM_TOLERANCE):
                raise VocabularyError("normalized flag set but vectors are not unit norm")

    @classmethod
    def from_arrays(
        cls, words: Iterable[str], vectors: np.ndarray, normalize: bool = False
    ) -> "EmbeddingVocabulary":
        vectors = np.asarray(vectors, dtype=np.float64)
        if normalize:
            norms = np.linalg.norm(vectors, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise VocabularyError("cannot normalize a zero vector")
            vectors = vectors / norms
        return cls(tuple(words), vectors, normalized=normalize)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word.casefold() in self._index

    def index(self, word: str) -> int:
        try:
            return self._index[word.casefold()]
        except KeyError:
            raise UnknownWordError(word) from None

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.index(word)]

    def canonical(self, word: str) -> str:
        """The stored spelling for a case-insensitive lookup."""
        return self.words[self.index(word)]

    def normalized_copy(self) -> "EmbeddingVocabulary":
        if self.normalized:
            return self
        return EmbeddingVocabulary.from_arrays(self.words, self.vectors, normalize=True)


def load_vocabulary(source: str | Path | TextIO, normalize: bool = False) -> EmbeddingVocabulary:
    """Parse a word-vector text stream into an :class:`EmbeddingVocabulary`.

    The header line must be ``<count> <dim>``. Exactly ``count`` entry lines
    follow, each with ``dim`` float components. Duplicate words after
    case-folding keep the first occurrence; later ones are dropped and counted
    in a single warning. With ``normalize`` set, every vector is scaled to unit
    L2 norm and zero vectors are rejected.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_vocabulary(fh, normalize=normalize)

    header = source.readline()
    parts = header.split()
    if len(parts) != 2:
        raise VocabularyError(f"malformed header line: {header!r}")
    try:
        count, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise VocabularyError(f"malformed header line: {header!r}") from None
    if count < 1 or dim < 2:
        raise VocabularyError(f"header must declare count >= 1 and dim >= 2, got {header!r}")

    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    duplicates = 0
    parsed = 0
    for line_no, line in enumerate(source, start=2):
        if not line.strip():
            continue
        if parsed >= count:
            raise VocabularyError(f"more than {count} entries in stream (line {line_no})")
        fields = line.rstrip("\n").split(" ")
        word, comps = fields[0], fields[1:]
        if len(comps) != dim:
            raise VocabularyError(
                f"line {line_no}: expected {dim} components for {word!r}, got {len(comps)}"
            )
        try:
            vec = np.array([float(c) for c in comps], dtype=np.float64)
        except ValueError:
            raise VocabularyError(f"line {line_no}: non-numeric component for {word!r}") from None
        parsed += 1
        key = word.casefold()
        if key in seen:
            duplicates += 1
            continue
        if normalize:
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise VocabularyError(f"line {line_no}: zero-norm vector for {word!r}")
            vec = vec / norm
        seen.add(key)
        words.append(word)
        rows.append(vec)

    if parsed != count:
        raise VocabularyError(f"header declared {count} entries but stream had {parsed}")
    if duplicates:
        log.warning("dropped %d duplicate word(s) after case-folding", duplicates)
    return EmbeddingVocabulary(tuple(words), np.vstack(rows), normalized=normalize)


def dump_vocabulary(vocab: EmbeddingVocabulary, path: str | Path, precision: int = 6) -> None:
    """Write a vocabulary back out in the text format accepted by the loader."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vocab)} {vocab.dim}\n")
        for word, vec in zip(vocab.words, vocab.vectors):
            comps = " ".join(f"{v:.{precision}f}" for v in vec)
            fh.write(f"{word} {comps}\n")


def cosine_similarity(v1: np.ndarray, v2: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors, clamped to [-1, 1]."""
    a = np.asarray(v1, dtype=np.float64)
    b = np.asarray(v2, dtype=np.float64)
    if a.shape != b.shape:
        raise VocabularyError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise VocabularyError("cosine similarity undefined for zero-norm input")
    value = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, value))


def nearest_neighbors(
    vocab: EmbeddingVocabulary,
    query: str,
    k: int,
    exclude_self: bool = True,
) -> list[NeighborResult]:
    """Top-k vocabulary words by cosine similarity to ``query``.

    Results are sorted by descending similarity with ties broken by ascending
    word order, so rankings are reproducible across platforms.
    """
    qi = vocab.index(query)
    if not 1 <= k <= len(vocab):
        raise ValueError(f"k must be in [1, {len(vocab)}], got {k}")
    qvec = vocab.vectors[qi]
    qnorm = float(np.linalg.norm(qvec))
    norms = np.linalg.norm(vocab.vectors, axis=1)
    if qnorm == 0.0 or np.any(norms == 0.0):
        raise VocabularyError("cosine similarity undefined for zero-norm vectors")
    sims = np.clip((vocab.vectors @ qvec) / (norms * qnorm), -1.0, 1.0)

    candidates = np.arange(len(vocab))
    if exclude_self:
        candidates = candidates[candidates != qi]
    order = sorted(candidates, key=lambda i: (-sims[i], vocab.words[i]))
    return [NeighborResult(vocab.words[i], float(sims[i])) for i in order[:k]]
