"""Binary delta codec: copy/add instruction patches against a base chunk.

The encoder indexes 16-byte grams of the base, greedily extends matches at
anchor hits, and emits literals in between; if that ever produces more bytes
than a raw literal patch it falls back to a single add, so a patch never
exceeds the target by more than the fixed header overhead. Decoding is
bit-exact and refuses a wrong base.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BaseMismatchError, CorruptPatchError, ParameterError
from .rng import mix64v

PATCH_MAGIC = b"CARDDLT1"
MIN_MATCH = 16  # anchor gram size; below this literals are cheaper
_OP_ADD = 0x00
_OP_COPY = 0x01
_DIGEST_LEN = 8  # sha256 prefix stored in the patch header


@dataclass(frozen=True)
class CopyOp:
    offset: int
    length: int


@dataclass(frozen=True)
class AddOp:
    data: bytes


Instruction = Union[CopyOp, AddOp]


@dataclass(frozen=True)
class DeltaPatch:
    base_digest: bytes  # first 8 bytes of sha256(base)
    instructions: tuple[Instruction, ...]
    encoded_size: int  # serialized length including header


def base_digest(base: bytes) -> bytes:
    return hashlib.sha256(base).digest()[:_DIGEST_LEN]


def _varint(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = 0
    value = 0
    while True:
        if pos >= len(data):
            raise CorruptPatchError(f"truncated varint at offset {pos}")
        b = data[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not b & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise CorruptPatchError(f"varint too long at offset {pos}")


def _serialize(digest: bytes, instructions: tuple[Instruction, ...]) -> bytes:
    out = bytearray(PATCH_MAGIC)
    out += digest
    out += _varint(len(instructions))
    for op in instructions:
        if isinstance(op, AddOp):
            out.append(_OP_ADD)
            out += _varint(len(op.data))
            out += op.data
        else:
            out.append(_OP_COPY)
            out += _varint(op.offset)
            out += _varint(op.length)
    return bytes(out)


def patch_to_bytes(patch: DeltaPatch) -> bytes:
    return _serialize(patch.base_digest, patch.instructions)


def patch_from_bytes(data: bytes) -> DeltaPatch:
    if len(data) < len(PATCH_MAGIC) or data[: len(PATCH_MAGIC)] != PATCH_MAGIC:
        raise CorruptPatchError("bad patch magic at offset 0")
    pos = len(PATCH_MAGIC)
    if len(data) < pos + _DIGEST_LEN:
        raise CorruptPatchError(f"truncated base digest at offset {pos}")
    digest = data[pos : pos + _DIGEST_LEN]
    pos += _DIGEST_LEN
    count, pos = _read_varint(data, pos)
    ops: list[Instruction] = []
    for _ in range(count):
        if pos >= len(data):
            raise CorruptPatchError(f"truncated opcode at offset {pos}")
        opcode = data[pos]
        pos += 1
        if opcode == _OP_ADD:
            length, pos = _read_varint(data, pos)
            if pos + length > len(data):
                raise CorruptPatchError(f"truncated literal at offset {pos}")
            ops.append(AddOp(data[pos : pos + length]))
            pos += length
        elif opcode == _OP_COPY:
            offset, pos = _read_varint(data, pos)
            length, pos = _read_varint(data, pos)
            ops.append(CopyOp(offset, length))
        else:
            raise CorruptPatchError(f"unknown opcode {opcode:#x} at offset {pos - 1}")
    if pos != len(data):
        raise CorruptPatchError(f"trailing bytes at offset {pos}")
    return DeltaPatch(base_digest=digest, instructions=tuple(ops), encoded_size=len(data))


def _gram_hash16(buf: np.ndarray) -> np.ndarray:
    """64-bit hashes of every 16-byte gram (positions 0..n-16)."""
    u = buf.astype(np.uint64)
    a = np.zeros(len(u) - MIN_MATCH + 1, dtype=np.uint64)
    b = np.zeros_like(a)
    n = len(a)
    for k in range(8):
        a = (a << np.uint64(8)) | u[k : k + n]
        b = (b << np.uint64(8)) | u[k + 8 : k + 8 + n]
    return mix64v(a ^ mix64v(b))


def delta_encode(target: bytes, base: bytes) -> DeltaPatch:
    """Greedy anchor-based patch of ``target`` against ``base``."""
    if len(base) == 0:
        raise ParameterError("delta base must be non-empty")
    digest = base_digest(base)
    instructions = _encode_instructions(target, base)
    blob = _serialize(digest, instructions)
    fallback: tuple[Instruction, ...] = (AddOp(target),) if target else ()
    fallback_blob = _serialize(digest, fallback)
    if len(fallback_blob) < len(blob):
        instructions, blob = fallback, fallback_blob
    return DeltaPatch(
        base_digest=digest, instructions=instructions, encoded_size=len(blob)
    )


def _encode_instructions(target: bytes, base: bytes) -> tuple[Instruction, ...]:
    n = len(target)
    if n == 0:
        return ()
    if n < MIN_MATCH or len(base) < MIN_MATCH:
        return (AddOp(target),)
    ta = np.frombuffer(target, dtype=np.uint8)
    ba = np.frombuffer(base, dtype=np.uint8)
    base_h = _gram_hash16(ba)
    uniq, first_idx = np.unique(base_h, return_index=True)
    t_h = _gram_hash16(ta)
    slot = np.searchsorted(uniq, t_h)
    slot[slot == len(uniq)] = 0
    member = uniq[slot] == t_h
    cand = np.flatnonzero(member)
    cand_base = first_idx[slot[cand]]

    ops: list[Instruction] = []
    lit_start = 0
    i = 0
    limit = n - MIN_MATCH
    while i <= limit:
        ci = int(np.searchsorted(cand, i, side="left"))
        if ci == len(cand):
            break
        j = int(cand[ci])
        p = int(cand_base[ci])
        if target[j : j + MIN_MATCH] != base[p : p + MIN_MATCH]:
            i = j + 1  # hash collision; step past it
            continue
        ext = _common_prefix(ta, j + MIN_MATCH, ba, p + MIN_MATCH)
        length = MIN_MATCH + ext
        if j > lit_start:
            ops.append(AddOp(target[lit_start:j]))
        ops.append(CopyOp(p, length))
        i = j + length
        lit_start = i
    if lit_start < n:
        ops.append(AddOp(target[lit_start:]))
    return tuple(ops)


def _common_prefix(a: np.ndarray, a_off: int, b: np.ndarray, b_off: int) -> int:
    n = min(len(a) - a_off, len(b) - b_off)
    if n <= 0:
        return 0
    neq = a[a_off : a_off + n] != b[b_off : b_off + n]
    k = int(np.argmax(neq))
    return n if not neq[k] else k


def delta_decode(patch: DeltaPatch, base: bytes) -> bytes:
    """Reconstruct the target; refuses a wrong or out-of-bounds base."""
    if base_digest(base) != patch.base_digest:
        raise BaseMismatchError(
            f"patch was encoded against base {patch.base_digest.hex()}, "
            f"got {base_digest(base).hex()}"
        )
    out = bytearray()
    for op in patch.instructions:
        if isinstance(op, AddOp):
            out += op.data
        else:
            if op.offset < 0 or op.length < 0 or op.offset + op.length > len(base):
                raise CorruptPatchError(
                    f"copy [{op.offset}, {op.offset + op.length}) exceeds base "
                    f"length {len(base)}"
                )
            out += base[op.offset : op.offset + op.length]
    return bytes(out)


def patch_overhead(patch: DeltaPatch) -> int:
    """Bytes this patch contributes to the stored total."""
    return patch.encoded_size
