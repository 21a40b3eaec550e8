"""Per-chunk features: shingled initial vectors plus the two baseline
super-feature schemes.

The initial feature splits a chunk into K fixed-size sub-chunks, computes a
similarity-preserving digest per sub-chunk (min-hash over 4-byte grams, so
lightly edited sub-chunks keep the same digest with high probability), forms
the unique set of digest shingles up to the configured order, maps every
shingle through M seeded hash functions into [-1, 1], and averages the
norm-normalized rows. Baselines digest grouped Rabin-fingerprint maxima.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .chunking import RABIN_WINDOW, _as_bytes, rolling_fingerprints, subchunk_bounds
from .errors import ParameterError, ShapeError
from .rng import DEFAULT_SEED, MASK64, mix64, mix64v, stream_word, stream_words

LSH_GRAM = 4  # bytes per gram in the sub-chunk digest
_SALT_GRAM = 0xD6E8FEB86659FD93
_SALT_FINAL = 0x2545F4914F6CDD1D
_SALT_FAMILY = 0x8A5D0F
SHINGLE_SEP = b"\x1f"


class Scheme(enum.Enum):
    NTRANSFORM = "ntransform"
    FINESSE = "finesse"


@dataclass(frozen=True)
class FeatureConfig:
    """Initial-feature parameters.

    ``k_subchunks`` must be at least ``2 * shingle_order + 1`` so every
    shingle order contributes at least one full window.
    """

    k_subchunks: int = 32
    shingle_order: int = 2
    dim_m: int = 50
    hash_family_seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.dim_m < 1:
            raise ParameterError("dim_m must be >= 1")
        if self.shingle_order < 1:
            raise ParameterError("shingle_order must be >= 1")
        if self.k_subchunks < 2 * self.shingle_order + 1:
            raise ParameterError(
                "k_subchunks must be >= 2 * shingle_order + 1 "
                f"(got K={self.k_subchunks}, order={self.shingle_order})"
            )


@dataclass(frozen=True)
class InitialFeature:
    vector: np.ndarray  # (M,) float64
    chunk_id: int


@dataclass(frozen=True)
class SuperFeature:
    scheme: Scheme
    digests: tuple[int, ...]


def _pack_grams(data: bytes) -> np.ndarray:
    """Big-endian 4-byte grams of ``data`` as uint64 (one per position)."""
    u = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
    return (u[:-3] << np.uint64(24)) | (u[1:-2] << np.uint64(16)) | (
        u[2:-1] << np.uint64(8)
    ) | u[3:]


def _gram_hashes(data: bytes) -> np.ndarray:
    return mix64v(_pack_grams(data) ^ np.uint64(_SALT_GRAM))


def lsh_digest(span: bytes) -> int:
    """Similarity-preserving 64-bit digest of a byte span.

    The minimum of the hashed 4-byte grams survives small edits exactly
    (identical spans always collide); a final bijective mix spreads the
    result over all 64 bits.
    """
    if len(span) == 0:
        raise ParameterError("cannot digest an empty span")
    if len(span) < LSH_GRAM:
        m = mix64(int.from_bytes(span, "big") ^ _SALT_GRAM)
    else:
        m = int(_gram_hashes(span).min())
    return mix64(m ^ _SALT_FINAL)


def subchunk_lsh_digests(chunk_or_bytes, k: int) -> np.ndarray:
    """``lsh_digest`` of each of the k fixed-size sub-chunks, as uint64."""
    data = _as_bytes(chunk_or_bytes)
    bounds = subchunk_bounds(len(data), k)
    grams = _gram_hashes(data) if len(data) >= LSH_GRAM else None
    out = np.empty(k, dtype=np.uint64)
    for j, (s, e) in enumerate(bounds):
        if e - s < LSH_GRAM:
            m = mix64(int.from_bytes(data[s:e], "big") ^ _SALT_GRAM)
        else:
            m = int(grams[s : e - LSH_GRAM + 1].min())
        out[j] = mix64(m ^ _SALT_FINAL)
    return out


def shingle_strings(digests: Sequence[int], order: int) -> list[bytes]:
    """Unique digest shingles in first-appearance order.

    For each order r in 1..order and each center j, the shingle is the
    big-endian encoding of digests j-r..j+r joined by a separator byte;
    windows that would extend past either end are skipped.
    """
    if order < 1:
        raise ParameterError("shingle order must be >= 1")
    k = len(digests)
    encoded = [int(d).to_bytes(8, "big") for d in digests]
    seen: dict[bytes, None] = {}
    for r in range(1, order + 1):
        for j in range(r, k - r):
            seen[SHINGLE_SEP.join(encoded[j - r : j + r + 1])] = None
    return list(seen)


class HashFamily:
    """``size`` independent seeded hash functions into [-1, 1]."""

    def __init__(self, seed: int, size: int):
        if size < 1:
            raise ParameterError("hash family size must be >= 1")
        self.seed = seed
        self.size = size
        self._salts = stream_words(mix64(seed ^ _SALT_FAMILY), size)
        self._key = (seed & MASK64).to_bytes(8, "little")

    def _base(self, shingle: bytes) -> int:
        return int.from_bytes(
            hashlib.blake2b(shingle, key=self._key, digest_size=8).digest(), "little"
        )

    def value(self, i: int, shingle: bytes) -> float:
        """hf_i(shingle) as a scalar."""
        if not 0 <= i < self.size:
            raise ParameterError(f"hash index {i} out of range 0..{self.size - 1}")
        w = mix64(self._base(shingle) ^ int(self._salts[i]))
        if w >= 1 << 63:
            w -= 1 << 64
        return w / float(1 << 63)

    def map_many(self, shingles: Iterable[bytes]) -> np.ndarray:
        """(n, size) matrix of hf values for a batch of shingles."""
        bases = np.array([self._base(s) for s in shingles], dtype=np.uint64)
        w = mix64v(bases[:, None] ^ self._salts[None, :])
        return w.view(np.int64).astype(np.float64) / float(1 << 63)


def feature_vector_from_digests(
    digests: Sequence[int], order: int, family: HashFamily
) -> np.ndarray:
    """Average of norm-normalized shingle hash rows for a digest sequence."""
    shingles = shingle_strings(digests, order)
    if not shingles:
        raise ParameterError(
            f"no full shingle window fits {len(digests)} digests at order {order}"
        )
    rows = family.map_many(shingles)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return (rows / norms).mean(axis=0)


def initial_feature(chunk, cfg: FeatureConfig, family: HashFamily) -> InitialFeature:
    """Content-only feature vector of a chunk (the model's training unit)."""
    data = _as_bytes(chunk)
    if family.size != cfg.dim_m:
        raise ShapeError(f"hash family size {family.size} != dim_m {cfg.dim_m}")
    if len(data) < cfg.k_subchunks:
        raise ParameterError(
            f"chunk of {len(data)} bytes cannot form {cfg.k_subchunks} sub-chunks"
        )
    digests = subchunk_lsh_digests(data, cfg.k_subchunks)
    vec = feature_vector_from_digests(digests, cfg.shingle_order, family)
    chunk_id = getattr(chunk, "chunk_id", -1)
    return InitialFeature(vector=vec, chunk_id=chunk_id)


def superfeature_digest(values: Iterable[int], seed: int) -> int:
    """Seeded 64-bit digest of a tuple of feature values."""
    payload = b"".join(int(v).to_bytes(8, "big") for v in values)
    key = (seed & MASK64).to_bytes(8, "little")
    return int.from_bytes(
        hashlib.blake2b(payload, key=key, digest_size=8).digest(), "little"
    )


def ntransform_params(seed: int, n_transforms: int) -> list[tuple[int, int]]:
    """Seeded (odd multiplier, addend) pairs for the linear transforms."""
    return [
        (stream_word(seed, 2 * t) | 1, stream_word(seed, 2 * t + 1))
        for t in range(n_transforms)
    ]


def ntransform_maxima(
    fingerprints: np.ndarray, transforms: Sequence[tuple[int, int]]
) -> list[int]:
    """Per-transform maximum of m*fp + a mod 2^64 over all fingerprints."""
    out = []
    for m, a in transforms:
        vals = fingerprints * np.uint64(m & MASK64) + np.uint64(a & MASK64)
        out.append(int(vals.max()))
    return out


def ntransform_superfeature(
    chunk,
    n_transforms: int = 12,
    window: int = RABIN_WINDOW,
    group_count: int = 3,
    seed: int = DEFAULT_SEED,
    transforms: Sequence[tuple[int, int]] | None = None,
) -> SuperFeature:
    """Super-feature from linearly transformed fingerprint maxima."""
    if n_transforms < 1 or group_count < 1:
        raise ParameterError("n_transforms and group_count must be >= 1")
    if n_transforms % group_count:
        raise ParameterError(
            f"group_count {group_count} must divide n_transforms {n_transforms}"
        )
    fps = rolling_fingerprints(chunk, window)
    params = list(transforms) if transforms is not None else ntransform_params(
        seed, n_transforms
    )
    if len(params) != n_transforms:
        raise ParameterError("transform list length must equal n_transforms")
    feats = ntransform_maxima(fps, params)
    size = n_transforms // group_count
    digests = tuple(
        superfeature_digest(feats[g * size : (g + 1) * size], seed)
        for g in range(group_count)
    )
    return SuperFeature(scheme=Scheme.NTRANSFORM, digests=digests)


def finesse_grouped_digests(
    maxima: Sequence[int], dims: int, seed: int
) -> tuple[int, ...]:
    """Rank-grouped digests of per-sub-chunk maxima.

    The maxima are sorted descending and split into consecutive groups of
    ``dims``; dimension d digests the (d+1)-th largest member of each group
    in group order.
    """
    k = len(maxima)
    if dims < 1 or k % dims:
        raise ParameterError(f"dims {dims} must divide the sub-chunk count {k}")
    ordered = sorted((int(v) for v in maxima), reverse=True)
    n_groups = k // dims
    return tuple(
        superfeature_digest(
            [ordered[g * dims + d] for g in range(n_groups)], seed
        )
        for d in range(dims)
    )


def finesse_superfeature(
    chunk,
    k_subchunks: int = 12,
    dims: int = 3,
    window: int = RABIN_WINDOW,
    seed: int = DEFAULT_SEED,
) -> SuperFeature:
    """Super-feature from rank-grouped per-sub-chunk fingerprint maxima."""
    data = _as_bytes(chunk)
    bounds = subchunk_bounds(len(data), k_subchunks)
    if min(e - s for s, e in bounds) < window:
        raise ParameterError(
            f"sub-chunks of {len(data)}/{k_subchunks} bytes are below window {window}"
        )
    fps = rolling_fingerprints(data, window)
    maxima = [int(fps[s : e - window + 1].max()) for s, e in bounds]
    return SuperFeature(
        scheme=Scheme.FINESSE, digests=finesse_grouped_digests(maxima, dims, seed)
    )
