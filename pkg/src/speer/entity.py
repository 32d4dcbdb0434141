"""Typed entity mentions, pluggable extractors, and mention embeddings.

Extraction and embedding are interface-driven so that heavyweight neural
models can be swapped in; the in-repo defaults (a gazetteer matcher and a
hashed character n-gram embedder) are deterministic and run anywhere.
"""

from __future__ import annotations

import hashlib
import json
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvariantViolation, SpeerError

PROBLEM = "PROBLEM"
TEST = "TEST"
TREATMENT = "TREATMENT"
SEMANTIC_TYPES = (PROBLEM, TEST, TREATMENT)


@dataclass(frozen=True)
class EntitySpan:
    """One mention: character offsets into its source document."""

    doc_id: str
    start: int
    end: int
    surface: str
    semantic_type: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span offsets [{self.start}, {self.end})")
        if self.semantic_type not in SEMANTIC_TYPES:
            raise ValueError(f"unknown semantic type {self.semantic_type!r}")
        if len(self.surface) != self.end - self.start:
            raise ValueError("surface length does not match span offsets")


class EntityExtractor(ABC):
    @abstractmethod
    def extract(self, doc_id: str, text: str) -> list[EntitySpan]:
        raise NotImplementedError


class LexiconExtractor(EntityExtractor):
    """Gazetteer matcher: case-insensitive, word-boundary, longest-match-first.

    Overlapping candidates are resolved globally: longer matches win, ties go
    to the leftmost candidate; survivors are non-overlapping and start-sorted.
    """

    def __init__(self, gazetteer: dict[str, str]):
        if not gazetteer:
            raise ValueError("gazetteer must be non-empty")
        cleaned: dict[str, str] = {}
        for surface, semantic_type in gazetteer.items():
            key = surface.lower()
            if not key.strip():
                raise ValueError("gazetteer surfaces must be non-empty")
            if semantic_type not in SEMANTIC_TYPES:
                raise ValueError(f"unknown semantic type {semantic_type!r} for {surface!r}")
            if key in cleaned and cleaned[key] != semantic_type:
                raise ValueError(f"conflicting types for gazetteer surface {key!r}")
            cleaned[key] = semantic_type
        self.gazetteer = cleaned
        self._patterns = [
            (key, re.compile(rf"(?<!\w){re.escape(key)}(?!\w)", re.IGNORECASE))
            for key in sorted(cleaned, key=lambda k: (-len(k), k))
        ]

    def extract(self, doc_id: str, text: str) -> list[EntitySpan]:
        candidates: list[tuple[int, int, str]] = []
        for key, pattern in self._patterns:
            for match in pattern.finditer(text):
                candidates.append((match.start(), match.end(), key))
        candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
        accepted: list[tuple[int, int, str]] = []
        for start, end, key in candidates:
            if all(end <= a_start or start >= a_end for a_start, a_end, _ in accepted):
                accepted.append((start, end, key))
        accepted.sort()
        return [
            EntitySpan(doc_id, start, end, text[start:end], self.gazetteer[key])
            for start, end, key in accepted
        ]


def load_gazetteer(path: str | Path) -> dict[str, str]:
    """TSV `surface<TAB>semantic_type`; `#` starts a comment line."""
    gazetteer: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"line {line_no}: expected 'surface<TAB>semantic_type'")
            surface, semantic_type = parts[0].strip(), parts[1].strip()
            if semantic_type not in SEMANTIC_TYPES:
                raise DataFormatError(f"line {line_no}: unknown semantic type {semantic_type!r}")
            key = surface.lower()
            if key in gazetteer:
                raise DataFormatError(f"line {line_no}: duplicate surface {key!r}")
            gazetteer[key] = semantic_type
    if not gazetteer:
        raise DataFormatError(f"gazetteer file {path} has no entries")
    return gazetteer


class EmbeddingProvider(ABC):
    """surface text -> unit-norm vector of fixed dimension."""

    dimension: int

    @abstractmethod
    def embed(self, surface: str) -> np.ndarray:
        raise NotImplementedError


class HashedNgramProvider(EmbeddingProvider):
    """L2-normalized bag of hashed character n-grams of the lowercased surface.

    Surfaces are padded with boundary markers so single-character inputs still
    produce n-grams; hashing uses keyed blake2b, so vectors are stable across
    processes regardless of hash randomization.
    """

    def __init__(self, dimension: int = 256, ngram_sizes: tuple[int, ...] = (2, 3), seed: int = 0):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.ngram_sizes = tuple(ngram_sizes)
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, np.ndarray] = {}

    def _bucket(self, ngram: str) -> int:
        digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, surface: str) -> np.ndarray:
        lowered = surface.lower()
        cached = self._cache.get(lowered)
        if cached is not None:
            return cached
        padded = f"^{lowered}$"
        vector = np.zeros(self.dimension, dtype=np.float64)
        for n in self.ngram_sizes:
            for i in range(len(padded) - n + 1):
                vector[self._bucket(padded[i : i + n])] += 1.0
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            raise InvariantViolation(f"no n-grams for surface {surface!r}")
        vector /= norm
        vector.setflags(write=False)
        self._cache[lowered] = vector
        return vector


class PrecomputedProvider(EmbeddingProvider):
    """Looks up vectors computed elsewhere (e.g. by a clinical encoder).

    Keys are lowercased surfaces; vectors are L2-normalized on load.
    """

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise ValueError("vector store must be non-empty")
        dims = {np.asarray(v).shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError("all vectors must share one 1-D shape")
        self.dimension = next(iter(dims))[0]
        self._vectors: dict[str, np.ndarray] = {}
        for surface, vector in vectors.items():
            arr = np.asarray(vector, dtype=np.float64)
            norm = float(np.linalg.norm(arr))
            if norm == 0.0:
                raise ValueError(f"zero vector for surface {surface!r}")
            arr = arr / norm
            arr.setflags(write=False)
            self._vectors[surface.lower()] = arr

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "PrecomputedProvider":
        vectors: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
                if "surface" not in row or "vector" not in row:
                    raise DataFormatError(f"line {line_no}: expected fields surface, vector")
                key = str(row["surface"]).lower()
                if key in vectors:
                    raise DataFormatError(f"line {line_no}: duplicate surface {key!r}")
                vectors[key] = np.asarray(row["vector"], dtype=np.float64)
        if not vectors:
            raise DataFormatError(f"embedding store {path} has no entries")
        return cls(vectors)

    def embed(self, surface: str) -> np.ndarray:
        key = surface.lower()
        if key not in self._vectors:
            raise SpeerError(f"no precomputed embedding for surface {surface!r}")
        return self._vectors[key]


def extract_entities(doc_id: str, text: str, extractor: EntityExtractor) -> list[EntitySpan]:
    """Run an extractor and enforce the span contract on its output."""
    try:
        spans = extractor.extract(doc_id, text)
    except SpeerError:
        raise
    except Exception as exc:
        raise SpeerError(f"doc {doc_id!r}: extractor failed: {exc}") from exc
    previous_end = 0
    for span in spans:
        if span.doc_id != doc_id:
            raise InvariantViolation(f"doc {doc_id!r}: span reports doc_id {span.doc_id!r}")
        if span.start < previous_end:
            raise InvariantViolation(f"doc {doc_id!r}: spans overlap or are unsorted at {span.start}")
        if span.end > len(text):
            raise InvariantViolation(f"doc {doc_id!r}: span [{span.start}, {span.end}) out of bounds")
        if text[span.start : span.end] != span.surface:
            raise InvariantViolation(f"doc {doc_id!r}: surface mismatch at [{span.start}, {span.end})")
        previous_end = span.end
    return spans


def embed(surface: str, provider: EmbeddingProvider) -> np.ndarray:
    if not surface.strip():
        raise ValueError("cannot embed an empty surface")
    vector = provider.embed(surface)
    norm = float(np.linalg.norm(vector))
    if abs(norm - 1.0) > 1e-6:
        raise InvariantViolation(f"provider returned non-unit vector (norm {norm}) for {surface!r}")
    return vector


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return max(-1.0, min(1.0, value))
