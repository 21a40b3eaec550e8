"""Corpus ingestion and seeded synthetic version generation.

A corpus is a directory tree snapshotted into an ordered manifest (entries
sorted lexicographically by relative path so downstream chunk streams are
reproducible). Synthetic versions apply one of four per-file modification
patterns with counter-based randomness, which makes controlled experiments
on version data bit-reproducible.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmptyCorpusError, ParameterError
from .rng import mix64, random_bytes, sample_distinct, stream_word

_READ_BLOCK = 1 << 20

# Domain tags so the offset/value/fill draws of one mutation never overlap.
_SUB_OFFSETS = 0x0F5E75
_SUB_VALUES = 0x7A1065
_SUB_FILL = 0xF111


class MutationPattern(enum.Enum):
    HEAD_MODIFY = "head_modify"
    TAIL_DELETE = "tail_delete"
    MID_INSERT = "mid_insert"
    RANDOM_EDIT = "random_edit"


@dataclass(frozen=True)
class MutationSpec:
    """One seeded modification pattern applied to a byte stream."""

    pattern: MutationPattern
    edit_fraction: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.edit_fraction <= 1.0:
            raise ParameterError(
                f"edit_fraction must be in [0, 1], got {self.edit_fraction}"
            )


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the corpus root, posix separators
    size: int
    digest: str  # hex sha256 of the file contents


@dataclass(frozen=True)
class CorpusManifest:
    corpus_id: str
    version_tag: str
    total_bytes: int
    entries: tuple[ManifestEntry, ...]


@dataclass(frozen=True)
class Corpus:
    """A manifest plus the root directory its entry paths resolve against."""

    root: Path
    manifest: CorpusManifest

    def read_entry(self, entry: ManifestEntry) -> bytes:
        return (self.root / entry.path).read_bytes()

    def stream(self) -> bytes:
        """All entry contents concatenated in manifest order."""
        return b"".join(self.read_entry(e) for e in self.manifest.entries)


def _corpus_id(entries: Iterable[ManifestEntry], version_tag: str) -> str:
    src = "\n".join(f"{e.path}\x00{e.size}\x00{e.digest}" for e in entries)
    src += "\x00" + version_tag
    return hashlib.sha256(src.encode("utf-8")).hexdigest()[:16]


def make_manifest(entries: Iterable[ManifestEntry], version_tag: str) -> CorpusManifest:
    ordered = tuple(sorted(entries, key=lambda e: e.path))
    return CorpusManifest(
        corpus_id=_corpus_id(ordered, version_tag),
        version_tag=version_tag,
        total_bytes=sum(e.size for e in ordered),
        entries=ordered,
    )


def _digest_file(path: Path) -> tuple[int, str]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as f:
        while True:
            block = f.read(_READ_BLOCK)
            if not block:
                break
            size += len(block)
            h.update(block)
    return size, h.hexdigest()


def ingest(root_path: str | Path, version_tag: str) -> CorpusManifest:
    """Snapshot every regular file under ``root_path`` into a manifest.

    Symlinks are skipped (files and directories alike); empty directories
    contribute nothing. Raises :class:`EmptyCorpusError` when no regular file
    is found, and lets I/O errors propagate with the offending path attached.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root is not a directory: {root}")
    entries = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            if p.is_symlink() or not p.is_file():
                continue
            size, digest = _digest_file(p)
            rel = p.relative_to(root).as_posix()
            entries.append(ManifestEntry(path=rel, size=size, digest=digest))
    if not entries:
        raise EmptyCorpusError(f"no regular files under {root}")
    return make_manifest(entries, version_tag)


def open_corpus(root_path: str | Path, version_tag: str) -> Corpus:
    root = Path(root_path)
    return Corpus(root=root, manifest=ingest(root, version_tag))


def mutate(data: bytes, spec: MutationSpec) -> bytes:
    """Apply one seeded modification pattern to ``data``.

    HEAD_MODIFY rewrites the first ceil(f*n) bytes with stream bytes,
    TAIL_DELETE drops the last ceil(f*n), MID_INSERT inserts ceil(f*n) stream
    bytes at a seeded offset, RANDOM_EDIT xor-flips ceil(f*n) bytes at seeded
    distinct offsets (each flipped byte is guaranteed to differ).
    """
    if spec.pattern is not MutationPattern.MID_INSERT and len(data) == 0:
        raise ParameterError(f"{spec.pattern.value} requires non-empty input")
    n = len(data)
    m = math.ceil(spec.edit_fraction * n)
    if spec.pattern is MutationPattern.HEAD_MODIFY:
        return random_bytes(mix64(spec.seed ^ _SUB_FILL), m) + data[m:]
    if spec.pattern is MutationPattern.TAIL_DELETE:
        return data[: n - m]
    if spec.pattern is MutationPattern.MID_INSERT:
        offset = stream_word(mix64(spec.seed ^ _SUB_OFFSETS), 0) % (n + 1)
        fill = random_bytes(mix64(spec.seed ^ _SUB_FILL), m)
        return data[:offset] + fill + data[offset:]
    # RANDOM_EDIT
    if m == 0:
        return data
    offsets = sample_distinct(n, m, mix64(spec.seed ^ _SUB_OFFSETS))
    raw = random_bytes(mix64(spec.seed ^ _SUB_VALUES), m)
    # xor values in [1, 255] so every selected byte actually changes
    xors = (np.frombuffer(raw, dtype=np.uint8).astype(np.uint16) % 255 + 1).astype(
        np.uint8
    )
    out = np.frombuffer(data, dtype=np.uint8).copy()
    out[offsets] ^= xors
    return out.tobytes()


def _file_seed(spec_seed: int, rel_path: str) -> int:
    tag = int.from_bytes(
        hashlib.sha256(rel_path.encode("utf-8")).digest()[:8], "little"
    )
    return mix64(spec_seed ^ tag)


def derived_version_tag(base_tag: str, spec: MutationSpec) -> str:
    return f"{base_tag}+{spec.pattern.value}-{spec.edit_fraction:g}-{spec.seed}"


def generate_versions(
    base: Corpus, specs: list[MutationSpec], out_dir: str | Path
) -> list[Corpus]:
    """Materialize one mutated copy of ``base`` per spec under ``out_dir``.

    Each file is mutated independently (its stream seed mixes the spec seed
    with a digest of the relative path) and the derived tree is re-ingested
    so manifest digests always match the bytes on disk.
    """
    out_root = Path(out_dir)
    derived = []
    for spec in specs:
        tag = derived_version_tag(base.manifest.version_tag, spec)
        dest = out_root / tag
        for entry in base.manifest.entries:
            data = base.read_entry(entry)
            mutated = mutate(data, replace(spec, seed=_file_seed(spec.seed, entry.path)))
            target = dest / entry.path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(mutated)
        derived.append(Corpus(root=dest, manifest=ingest(dest, tag)))
    return derived


def manifest_to_json(manifest: CorpusManifest) -> str:
    doc = {
        "corpus_id": manifest.corpus_id,
        "version_tag": manifest.version_tag,
        "total_bytes": manifest.total_bytes,
        "entries": [
            {"path": e.path, "size": e.size, "digest": e.digest}
            for e in manifest.entries
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def manifest_from_json(text: str) -> CorpusManifest:
    doc = json.loads(text)
    entries = tuple(
        ManifestEntry(path=e["path"], size=e["size"], digest=e["digest"])
        for e in doc["entries"]
    )
    return CorpusManifest(
        corpus_id=doc["corpus_id"],
        version_tag=doc["version_tag"],
        total_bytes=doc["total_bytes"],
        entries=entries,
    )


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    Path(path).write_text(manifest_to_json(manifest), encoding="utf-8")


def load_manifest(path: str | Path) -> CorpusManifest:
    return manifest_from_json(Path(path).read_text(encoding="utf-8"))
