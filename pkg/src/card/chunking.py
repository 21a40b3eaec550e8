"""Content-defined chunking and rolling-fingerprint machinery.

Chunk boundaries come from a gear-hash CDC with two-mask normalized cutting:
the gear value at a position depends only on the previous 64 content bytes,
a hard mask applies below the target size and an easy mask above it, and a
cut is forced at ``max_size``. Rabin fingerprints are 64-bit polynomial
hashes over a sliding window, used by the baseline detectors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .rng import DEFAULT_SEED, MASK64, stream_words

GEAR_WINDOW = 64  # bytes influencing one gear value (register width)
RABIN_POLY = 0xBFE6B8A5BF378D83  # degree-64 irreducible polynomial, implicit x^64
RABIN_WINDOW = 48
_SEGMENT = 1 << 22  # gear candidates are extracted in 4 MiB segments


@dataclass(frozen=True)
class ChunkingConfig:
    """Gear CDC parameters. ``avg_size`` must be a power of two >= 8."""

    avg_size: int
    min_size: int = 0  # 0 -> avg_size // 4
    max_size: int = 0  # 0 -> avg_size * 4
    gear_seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.avg_size < 8 or self.avg_size & (self.avg_size - 1):
            raise ParameterError(f"avg_size must be a power of two >= 8: {self.avg_size}")
        if self.min_size == 0:
            object.__setattr__(self, "min_size", self.avg_size // 4)
        if self.max_size == 0:
            object.__setattr__(self, "max_size", self.avg_size * 4)
        if not 1 <= self.min_size < self.avg_size < self.max_size:
            raise ParameterError(
                f"need 1 <= min < avg < max, got {self.min_size}/{self.avg_size}/{self.max_size}"
            )


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    offset: int
    length: int
    identity_digest: bytes  # sha256 of content
    content: bytes


def _as_bytes(chunk_or_bytes) -> bytes:
    if isinstance(chunk_or_bytes, Chunk):
        return chunk_or_bytes.content
    return bytes(chunk_or_bytes)


@lru_cache(maxsize=16)
def _gear_table(seed: int) -> np.ndarray:
    return stream_words(seed, 256)


def _masks(avg_size: int) -> tuple[np.uint64, np.uint64]:
    bits = avg_size.bit_length() - 1
    hard = ((1 << (bits + 2)) - 1) << (64 - bits - 2)
    easy = ((1 << (bits - 2)) - 1) << (64 - bits + 2)
    return np.uint64(hard), np.uint64(easy)


def gear_hashes(data: bytes, gear_seed: int) -> np.ndarray:
    """Gear value at every position of ``data``.

    Equals the sequential recurrence h = (h << 1) + gear[b] mod 2^64 started
    at the stream head; contributions age out after 64 bytes, so each value
    is a pure function of the trailing 64-byte window. Computed by window
    doubling: H_2w(i) = H_w(i) + (H_w(i - w) << w).
    """
    gear = _gear_table(gear_seed)
    u = np.frombuffer(data, dtype=np.uint8)
    h = gear[u]
    w = 1
    while w < min(GEAR_WINDOW, len(u)):
        h[w:] += h[:-w] << np.uint64(w)
        w *= 2
    return h


def _candidate_positions(
    data: bytes, cfg: ChunkingConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Positions passing the hard and easy mask tests, ascending."""
    mask_hard, mask_easy = _masks(cfg.avg_size)
    n = len(data)
    hard_parts, easy_parts = [], []
    for start in range(0, n, _SEGMENT):
        lo = max(0, start - (GEAR_WINDOW - 1))
        hi = min(n, start + _SEGMENT)
        h = gear_hashes(data[lo:hi], cfg.gear_seed)[start - lo :]
        zero = np.uint64(0)
        hard_parts.append(np.flatnonzero((h & mask_hard) == zero) + start)
        easy_parts.append(np.flatnonzero((h & mask_easy) == zero) + start)
    cat = lambda parts: (
        np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    )
    return cat(hard_parts), cat(easy_parts)


def _first_in(arr: np.ndarray, lo: int, hi: int) -> int | None:
    k = int(np.searchsorted(arr, lo, side="left"))
    if k < len(arr) and arr[k] <= hi:
        return int(arr[k])
    return None


def chunk_boundaries(data: bytes, cfg: ChunkingConfig) -> list[int]:
    """Exclusive end offsets of each chunk; empty input gives no cuts."""
    n = len(data)
    if n == 0:
        return []
    hard_pos, easy_pos = _candidate_positions(data, cfg)
    cuts = []
    s = 0
    while s < n:
        if n - s <= cfg.min_size:
            cuts.append(n)
            break
        # hard phase: lengths in [min, avg)
        cut = None
        i = _first_in(hard_pos, s + cfg.min_size - 1, min(s + cfg.avg_size - 2, n - 1))
        if i is not None:
            cut = i + 1
        else:
            # easy phase: lengths in [avg, max)
            j = _first_in(
                easy_pos, s + cfg.avg_size - 1, min(s + cfg.max_size - 2, n - 1)
            )
            if j is not None:
                cut = j + 1
            else:
                cut = min(s + cfg.max_size, n)
        cuts.append(cut)
        s = cut
    return cuts


def chunk_stream(data: bytes, cfg: ChunkingConfig) -> list[Chunk]:
    """Split ``data`` into content-defined chunks that tile the stream."""
    cuts = chunk_boundaries(data, cfg)
    chunks = []
    start = 0
    for cid, end in enumerate(cuts):
        content = data[start:end]
        chunks.append(
            Chunk(
                chunk_id=cid,
                offset=start,
                length=end - start,
                identity_digest=hashlib.sha256(content).digest(),
                content=content,
            )
        )
        start = end
    return chunks


def subchunk_bounds(length: int, k: int) -> list[tuple[int, int]]:
    """Fixed-size split bounds: k-1 spans of floor(length/k), remainder last."""
    if k < 1:
        raise ParameterError(f"sub-chunk count must be >= 1, got {k}")
    if k > length:
        raise ParameterError(f"cannot split {length} bytes into {k} sub-chunks")
    base = length // k
    bounds = [(j * base, (j + 1) * base) for j in range(k - 1)]
    bounds.append(((k - 1) * base, length))
    return bounds


def split_subchunks(chunk_or_bytes, k: int) -> list[bytes]:
    data = _as_bytes(chunk_or_bytes)
    return [data[s:e] for s, e in subchunk_bounds(len(data), k)]


def chunk_inventory(chunks: list[Chunk]) -> str:
    """Newline-delimited ``chunk_id offset length identity_digest`` records."""
    return "".join(
        f"{c.chunk_id} {c.offset} {c.length} {c.identity_digest.hex()}\n"
        for c in chunks
    )


# --- 64-bit Rabin fingerprints -------------------------------------------

def _mulx(value: int, poly: int) -> int:
    """Multiply a degree-<64 polynomial by x modulo poly (GF(2))."""
    top = value >> 63
    value = (value << 1) & MASK64
    return value ^ poly if top else value


@lru_cache(maxsize=8)
def _shift8_table(poly: int) -> np.ndarray:
    """T[t] = t * x^64 mod poly, for the top byte t."""
    table = np.empty(256, dtype=np.uint64)
    for t in range(256):
        r = t << 56
        for _ in range(8):
            r = _mulx(r, poly)
        table[t] = r
    return table


def _mult_x8(value: int, table: np.ndarray) -> int:
    return ((value << 8) & MASK64) ^ int(table[value >> 56])


@lru_cache(maxsize=8)
def _position_tables(window: int, poly: int) -> np.ndarray:
    """rows[k][b] = b * x^(8*(window-1-k)) mod poly."""
    t8 = _shift8_table(poly)
    rows = np.empty((window, 256), dtype=np.uint64)
    rows[window - 1] = np.arange(256, dtype=np.uint64)
    for k in range(window - 2, -1, -1):
        prev = rows[k + 1]
        rows[k] = ((prev << np.uint64(8)) ^ t8[(prev >> np.uint64(56)).astype(np.int64)])
    return rows


class RabinWindow:
    """Stateful 64-bit Rabin fingerprint over a sliding byte window.

    Sliding one byte forward yields the same value as recomputing the
    polynomial hash over the new window from scratch.
    """

    def __init__(self, window_size: int = RABIN_WINDOW, poly: int = RABIN_POLY):
        if window_size < 1:
            raise ParameterError("window must be >= 1")
        self.window_size = window_size
        self.poly = poly
        self._t8 = _shift8_table(poly)
        self._out = _position_tables(window_size, poly)[0]  # b * x^(8*(window-1))
        self._buf = bytearray()
        self.value = 0

    def reset(self) -> None:
        self._buf.clear()
        self.value = 0

    def push(self, byte: int) -> int:
        """Feed one byte while the window is filling up."""
        if len(self._buf) >= self.window_size:
            return self.roll(byte)
        self._buf.append(byte)
        self.value = _mult_x8(self.value, self._t8) ^ byte
        return self.value

    def roll(self, byte: int) -> int:
        """Slide the full window one byte forward."""
        if len(self._buf) != self.window_size:
            raise ParameterError("window not yet full")
        old = self._buf.pop(0)
        self._buf.append(byte)
        self.value = _mult_x8(self.value ^ int(self._out[old]), self._t8) ^ byte
        return self.value


def rolling_fingerprints(
    chunk_or_bytes, window: int = RABIN_WINDOW, poly: int = RABIN_POLY
) -> np.ndarray:
    """Rabin fingerprint at every window position of the chunk."""
    data = _as_bytes(chunk_or_bytes)
    if window < 1:
        raise ParameterError("window must be >= 1")
    if window > len(data):
        raise ParameterError(
            f"window {window} exceeds chunk length {len(data)}"
        )
    tables = _position_tables(window, poly)
    u = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    npos = len(data) - window + 1
    acc = tables[0][u[:npos]].copy()
    for k in range(1, window):
        acc ^= tables[k][u[k : k + npos]]
    return acc
