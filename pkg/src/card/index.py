"""Resemblance lookup: FirstFit super-feature tables and an exhaustive
cosine nearest-neighbor index over context-aware vectors."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ParameterError, ShapeError
from .features import Scheme, SuperFeature

log = logging.getLogger(__name__)


class Decision(enum.Enum):
    DUPLICATE = "duplicate"
    SIMILAR = "similar"
    UNIQUE = "unique"


@dataclass(frozen=True)
class MatchResult:
    query_chunk_id: int
    base_chunk_id: int | None
    similarity_score: float
    decision: Decision


def unique_result(query_chunk_id: int = -1, score: float = 0.0) -> MatchResult:
    return MatchResult(query_chunk_id, None, score, Decision.UNIQUE)


class SuperFeatureIndex:
    """Per-dimension digest tables preserving insertion order."""

    def __init__(self, scheme: Scheme, dim_count: int):
        if dim_count < 1:
            raise ParameterError("dim_count must be >= 1")
        self.scheme = scheme
        self.dim_count = dim_count
        self._tables: list[dict[int, list[int]]] = [{} for _ in range(dim_count)]
        self._ids: set[int] = set()

    def __len__(self) -> int:
        return len(self._ids)

    def _check(self, sf: SuperFeature) -> None:
        if sf.scheme is not self.scheme:
            raise ParameterError(f"scheme {sf.scheme} does not match {self.scheme}")
        if len(sf.digests) != self.dim_count:
            raise ParameterError(
                f"super-feature has {len(sf.digests)} dimensions, index expects {self.dim_count}"
            )

    def insert(self, chunk_id: int, sf: SuperFeature) -> None:
        self._check(sf)
        if chunk_id in self._ids:
            raise ParameterError(f"chunk {chunk_id} already indexed")
        self._ids.add(chunk_id)
        for table, digest in zip(self._tables, sf.digests):
            table.setdefault(digest, []).append(chunk_id)

    def firstfit(self, sf: SuperFeature, query_chunk_id: int = -1) -> MatchResult:
        """First chunk sharing any digest, scanning dimensions in order."""
        self._check(sf)
        for table, digest in zip(self._tables, sf.digests):
            hits = table.get(digest)
            if hits:
                return MatchResult(query_chunk_id, hits[0], 1.0, Decision.SIMILAR)
        return unique_result(query_chunk_id)


class VectorIndex:
    """Exhaustive-scan cosine index (raw vectors plus cached norms)."""

    def __init__(self, dim: int, similarity_threshold: float = 0.7):
        if dim < 1:
            raise ParameterError("dim must be >= 1")
        if not 0.0 < similarity_threshold <= 1.0:
            raise ParameterError("similarity_threshold must be in (0, 1]")
        self.dim = dim
        self.similarity_threshold = similarity_threshold
        self._vecs = np.empty((16, dim), dtype=np.float64)
        self._norms = np.empty(16, dtype=np.float64)
        self._ids = np.empty(16, dtype=np.int64)
        self._n = 0
        self._known: set[int] = set()

    def __len__(self) -> int:
        return self._n

    @property
    def stored_norms(self) -> np.ndarray:
        return self._norms[: self._n]

    @property
    def stored_vectors(self) -> np.ndarray:
        return self._vecs[: self._n]

    @property
    def stored_ids(self) -> np.ndarray:
        return self._ids[: self._n]

    def insert(self, chunk_id: int, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeError(f"vector shape {v.shape} != ({self.dim},)")
        if chunk_id in self._known:
            raise ParameterError(f"chunk {chunk_id} already indexed")
        if self._n == len(self._vecs):
            grow = max(32, 2 * len(self._vecs))
            for name, shape in (("_vecs", (grow, self.dim)), ("_norms", grow), ("_ids", grow)):
                old = getattr(self, name)
                new = np.empty(shape, dtype=old.dtype)
                new[: self._n] = old[: self._n]
                setattr(self, name, new)
        self._vecs[self._n] = v
        self._norms[self._n] = np.linalg.norm(v)
        self._ids[self._n] = chunk_id
        self._n += 1
        self._known.add(chunk_id)

    def nearest(self, vector: np.ndarray, query_chunk_id: int = -1) -> MatchResult:
        """Arg-max cosine similarity; ties break to the smallest chunk id."""
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeError(f"vector shape {v.shape} != ({self.dim},)")
        qn = float(np.linalg.norm(v))
        if self._n == 0:
            return unique_result(query_chunk_id)
        if qn == 0.0:
            log.warning("zero-norm query vector for chunk %s", query_chunk_id)
            return unique_result(query_chunk_id)
        dots = self._vecs[: self._n] @ v
        denom = self._norms[: self._n] * qn
        scores = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        best = float(scores.max())
        base = int(self._ids[: self._n][scores == best].min())
        if best >= self.similarity_threshold:
            return MatchResult(query_chunk_id, base, best, Decision.SIMILAR)
        return MatchResult(query_chunk_id, None, best, Decision.UNIQUE)


class DedupeAction(enum.Enum):
    DUPLICATE = "duplicate"
    DELTA = "delta"
    STORE = "store"


def dedupe_decide(
    seen: Mapping[bytes, int], identity_digest: bytes, match: MatchResult | None
) -> tuple[DedupeAction, int | None]:
    """Exact-duplicate check first, then the resemblance verdict."""
    hit = seen.get(identity_digest)
    if hit is not None:
        return DedupeAction.DUPLICATE, hit
    if match is not None and match.decision is Decision.SIMILAR:
        return DedupeAction.DELTA, match.base_chunk_id
    return DedupeAction.STORE, None
