"""Deterministic counter-based randomness built on the splitmix64 mixer.

Every seeded behavior in the engine draws from these helpers so runs are
bit-reproducible across platforms (and re-implementable in any language);
the word stream is ``mix64(seed + (i + 1) * GOLDEN)`` with the constants
below, serialized little-endian when bytes are needed.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Shared default for every seed knob; overridable via CARD_SEED in the CLI.
DEFAULT_SEED = 0xC0FFEE


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective 64-bit mixer."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def mix64v(x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64` over a uint64 array."""
    z = x.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def stream_word(seed: int, index: int) -> int:
    """index-th 64-bit word of the counter stream for ``seed``."""
    return mix64((seed + (index + 1) * GOLDEN) & MASK64)


def stream_words(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """``count`` consecutive stream words starting at ``offset``."""
    if count < 0:
        raise ParameterError("word count must be non-negative")
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    base = np.uint64(seed & MASK64) + idx * np.uint64(GOLDEN)
    return mix64v(base)


def random_bytes(seed: int, count: int, offset: int = 0) -> bytes:
    """``count`` deterministic bytes: little-endian words of the stream.

    ``offset`` skips whole words so independent draws can share a seed.
    """
    if count < 0:
        raise ParameterError("byte count must be non-negative")
    if count == 0:
        return b""
    words = stream_words(seed, (count + 7) // 8, offset=offset)
    return words.astype("<u8").tobytes()[:count]


def sample_distinct(total: int, count: int, seed: int) -> np.ndarray:
    """``count`` distinct offsets in [0, total), sorted ascending.

    Rejection-samples from the word stream; when more than half the range is
    requested the complement is sampled instead so the expected work stays
    bounded. Fully determined by (total, count, seed).
    """
    if count < 0 or count > total:
        raise ParameterError(f"cannot draw {count} distinct offsets from {total}")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if count == total:
        return np.arange(total, dtype=np.int64)
    invert = count > total // 2
    want = total - count if invert else count
    chosen: set[int] = set()
    i = 0
    while len(chosen) < want:
        batch = stream_words(seed, max(64, want - len(chosen)), offset=i)
        i += len(batch)
        for w in batch:
            chosen.add(int(w) % total)
            if len(chosen) == want:
                break
    if invert:
        keep = np.ones(total, dtype=bool)
        keep[list(chosen)] = False
        return np.flatnonzero(keep).astype(np.int64)
    return np.array(sorted(chosen), dtype=np.int64)


def shuffled_indices(n: int, seed: int) -> np.ndarray:
    """Seeded Fisher-Yates permutation of range(n) (modulo reduction)."""
    idx = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = stream_word(seed, n - 1 - i) % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx
