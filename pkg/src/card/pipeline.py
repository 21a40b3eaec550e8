"""End-to-end runs: chunk, extract features, train/predict, match, delta,
account bytes, and render reports.

A run processes corpus versions in order. Every chunk first passes an exact
identity check; survivors go through the configured detector, and similar
chunks are stored as decode-verified patches against their base. Stored
bytes are unique chunk bytes plus patch bytes plus a fixed per-chunk
metadata charge, and the compression ratio is reported both with and
without that charge.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .chunking import RABIN_WINDOW, Chunk, ChunkingConfig, chunk_stream
from .context_model import (
    ContextModel,
    ModelConfig,
    TrainResult,
    build_samples,
    load_model,
    predict,
    save_model,
    train,
)
from .corpus import Corpus
from .delta import delta_decode, delta_encode, patch_to_bytes
from .errors import CorruptionError, ParameterError
from .features import (
    FeatureConfig,
    HashFamily,
    Scheme,
    finesse_superfeature,
    initial_feature,
    ntransform_superfeature,
)
from .index import (
    Decision,
    DedupeAction,
    MatchResult,
    SuperFeatureIndex,
    VectorIndex,
    dedupe_decide,
    unique_result,
)
from .rng import DEFAULT_SEED

PHASES = ("chunking", "feature", "train", "lookup", "delta")


class Detector(enum.Enum):
    CARD = "card"
    FINESSE = "finesse"
    NTRANSFORM = "ntransform"
    NONE = "none"


@dataclass
class RunConfig:
    detector: Detector = Detector.NONE
    corpora: tuple[Corpus, ...] = ()
    chunking: ChunkingConfig = field(default_factory=lambda: ChunkingConfig(16 * 1024))
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig | None = None
    threshold: float = 0.7
    ntransform_count: int = 12
    sf_group_count: int = 3
    finesse_subchunks: int = 12
    finesse_dims: int = 3
    rabin_window: int = RABIN_WINDOW
    sf_seed: int = DEFAULT_SEED
    model_path: Path | None = None
    train_first: bool = False
    verify_patches: bool = True
    verify_stream: bool = False
    store_dir: Path | None = None
    deterministic: bool = False
    metadata_per_chunk: int = 64


@dataclass
class DedupReport:
    detector: str
    avg_chunk_size: int
    dimension: int
    bytes_before: int
    bytes_after: int
    unique_data_bytes: int
    patch_bytes: int
    metadata_bytes: int
    chunk_count: int
    duplicate_count: int
    similar_count: int
    unique_count: int
    phase_timings: dict[str, float] = field(default_factory=dict)

    @property
    def dcr(self) -> float:
        return compute_dcr(self.bytes_before, self.bytes_after)

    @property
    def dcr_no_metadata(self) -> float:
        return compute_dcr(self.bytes_before, self.bytes_after - self.metadata_bytes)

    @property
    def total_time_s(self) -> float:
        return sum(self.phase_timings.get(p, 0.0) for p in PHASES)

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "avg_chunk_size": self.avg_chunk_size,
            "dimension": self.dimension,
            "bytes_before": self.bytes_before,
            "bytes_after": self.bytes_after,
            "unique_data_bytes": self.unique_data_bytes,
            "patch_bytes": self.patch_bytes,
            "metadata_bytes": self.metadata_bytes,
            "chunk_count": self.chunk_count,
            "duplicate_count": self.duplicate_count,
            "similar_count": self.similar_count,
            "unique_count": self.unique_count,
            "dcr": self.dcr,
            "dcr_no_metadata": self.dcr_no_metadata,
            "total_time_s": self.total_time_s,
            "phase_timings": dict(self.phase_timings),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DedupReport":
        return cls(
            detector=doc["detector"],
            avg_chunk_size=int(doc["avg_chunk_size"]),
            dimension=int(doc["dimension"]),
            bytes_before=int(doc["bytes_before"]),
            bytes_after=int(doc["bytes_after"]),
            unique_data_bytes=int(doc["unique_data_bytes"]),
            patch_bytes=int(doc["patch_bytes"]),
            metadata_bytes=int(doc["metadata_bytes"]),
            chunk_count=int(doc["chunk_count"]),
            duplicate_count=int(doc["duplicate_count"]),
            similar_count=int(doc["similar_count"]),
            unique_count=int(doc["unique_count"]),
            phase_timings={k: float(v) for k, v in doc["phase_timings"].items()},
        )


def compute_dcr(bytes_before: int, bytes_after: int) -> float:
    if bytes_after <= 0:
        raise ParameterError(f"bytes_after must be positive, got {bytes_after}")
    return bytes_before / bytes_after


def format_relative_delta(baseline: float, variant: float) -> str:
    """Relative change of a variant against a baseline, e.g. ``+0.13%``."""
    if baseline == 0:
        raise ParameterError("baseline must be non-zero")
    pct = round((variant - baseline) / baseline * 100.0, 2)
    if pct == 0:
        return "0.00%"
    return f"{pct:+.2f}%"


class _PhaseTimer:
    def __init__(self) -> None:
        self.seconds = {p: 0.0 for p in PHASES}

    class _Span:
        def __init__(self, timer: "_PhaseTimer", phase: str) -> None:
            self.timer = timer
            self.phase = phase

        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            self.timer.seconds[self.phase] += time.perf_counter() - self.start
            return False

    def phase(self, name: str) -> "_PhaseTimer._Span":
        return self._Span(self, name)


def _too_short(exc_fn: Callable[[], object]) -> object | None:
    try:
        return exc_fn()
    except ParameterError:
        return None


class _DetectorState:
    """Per-run feature extraction and index wiring for one detector."""

    def __init__(self, cfg: RunConfig, model: ContextModel | None):
        self.cfg = cfg
        self.model = model
        if cfg.detector is Detector.CARD:
            if model is None:
                raise ParameterError("card detector requires a trained model")
            self.family = HashFamily(cfg.features.hash_family_seed, cfg.features.dim_m)
            self.vindex = VectorIndex(model.cfg.dim_d, cfg.threshold)
        elif cfg.detector is Detector.FINESSE:
            self.sfindex = SuperFeatureIndex(Scheme.FINESSE, cfg.finesse_dims)
        elif cfg.detector is Detector.NTRANSFORM:
            self.sfindex = SuperFeatureIndex(Scheme.NTRANSFORM, cfg.sf_group_count)

    def extract(self, chunk: Chunk):
        """Detector feature of one chunk, or None when it is too short."""
        cfg = self.cfg
        if cfg.detector is Detector.CARD:
            feat = _too_short(lambda: initial_feature(chunk, cfg.features, self.family))
            if feat is None:
                return None
            return predict(self.model, feat)
        if cfg.detector is Detector.FINESSE:
            return _too_short(
                lambda: finesse_superfeature(
                    chunk,
                    k_subchunks=cfg.finesse_subchunks,
                    dims=cfg.finesse_dims,
                    window=cfg.rabin_window,
                    seed=cfg.sf_seed,
                )
            )
        if cfg.detector is Detector.NTRANSFORM:
            return _too_short(
                lambda: ntransform_superfeature(
                    chunk,
                    n_transforms=cfg.ntransform_count,
                    window=cfg.rabin_window,
                    group_count=cfg.sf_group_count,
                    seed=cfg.sf_seed,
                )
            )
        return None

    def lookup(self, gid: int, feature) -> MatchResult:
        if feature is None or self.cfg.detector is Detector.NONE:
            return unique_result(gid)
        if self.cfg.detector is Detector.CARD:
            return self.vindex.nearest(feature, gid)
        return self.sfindex.firstfit(feature, gid)

    def insert(self, gid: int, feature) -> None:
        if feature is None or self.cfg.detector is Detector.NONE:
            return
        if self.cfg.detector is Detector.CARD:
            self.vindex.insert(gid, feature)
        else:
            self.sfindex.insert(gid, feature)


def _train_on_first_version(
    cfg: RunConfig, chunks: list[Chunk], timer: _PhaseTimer
) -> tuple[ContextModel, list[float]]:
    assert cfg.model is not None
    family = HashFamily(cfg.features.hash_family_seed, cfg.features.dim_m)
    with timer.phase("feature"):
        feats = []
        for c in chunks:
            f = _too_short(lambda: initial_feature(c, cfg.features, family))
            if f is not None:
                feats.append(f)
    with timer.phase("train"):
        samples = build_samples(
            feats, cfg.model.context_k, drop_boundary=cfg.model.drop_boundary
        )
        result = train(samples, cfg.model, deterministic=cfg.deterministic)
    if cfg.model_path is not None:
        save_model(result.model, cfg.model_path)
    return result.model, result.epoch_losses


def run_train(cfg: RunConfig) -> TrainResult:
    """Chunk the first corpus, train the context model, save it if asked."""
    if not cfg.corpora:
        raise ParameterError("run_train requires at least one corpus")
    if cfg.model is None:
        raise ParameterError("run_train requires a model config")
    timer = _PhaseTimer()
    with timer.phase("chunking"):
        chunks = chunk_stream(cfg.corpora[0].stream(), cfg.chunking)
    model, losses = _train_on_first_version(cfg, chunks, timer)
    return TrainResult(model=model, epoch_losses=losses)


def run_dedupe(cfg: RunConfig) -> DedupReport:
    """Process all corpora in order and account every stored byte."""
    if not cfg.corpora:
        raise ParameterError("run_dedupe requires at least one corpus")
    if cfg.detector is Detector.CARD:
        if cfg.model is None:
            raise ParameterError("card detector requires a model config")
        if cfg.model_path is None and not cfg.train_first:
            raise ParameterError(
                "card detector requires a trained model path or train_first"
            )
    timer = _PhaseTimer()

    streams: list[bytes] = []
    version_chunks: list[list[Chunk]] = []
    for corpus in cfg.corpora:
        with timer.phase("chunking"):
            data = corpus.stream()
            streams.append(data)
            version_chunks.append(chunk_stream(data, cfg.chunking))

    model: ContextModel | None = None
    if cfg.detector is Detector.CARD:
        if cfg.train_first:
            model, _ = _train_on_first_version(cfg, version_chunks[0], timer)
        else:
            model = load_model(cfg.model_path)

    state = _DetectorState(cfg, model)
    seen: dict[bytes, int] = {}
    contents: dict[int, bytes] = {}
    records: list[tuple] = []  # (kind, ...) per global chunk id
    unique_data = 0
    patch_bytes_total = 0
    counts = {DedupeAction.DUPLICATE: 0, DedupeAction.DELTA: 0, DedupeAction.STORE: 0}
    gid = 0

    for chunks in version_chunks:
        with timer.phase("feature"):
            feats = [state.extract(c) for c in chunks]
        for chunk, feat in zip(chunks, feats):
            with timer.phase("lookup"):
                if chunk.identity_digest in seen:
                    match = MatchResult(
                        gid, seen[chunk.identity_digest], 1.0, Decision.DUPLICATE
                    )
                else:
                    match = state.lookup(gid, feat)
                action, base_id = dedupe_decide(seen, chunk.identity_digest, match)
            if action is DedupeAction.DUPLICATE:
                records.append(("dup", base_id))
            elif action is DedupeAction.DELTA:
                with timer.phase("delta"):
                    patch = delta_encode(chunk.content, contents[base_id])
                    if cfg.verify_patches:
                        decoded = delta_decode(patch, contents[base_id])
                        if decoded != chunk.content:
                            raise CorruptionError(
                                f"patch for chunk {gid} failed decode verification"
                            )
                patch_bytes_total += patch.encoded_size
                records.append(("delta", base_id, patch))
            else:
                unique_data += chunk.length
                records.append(("raw", chunk.content))
            counts[action] += 1
            contents[gid] = chunk.content
            if chunk.identity_digest not in seen:
                seen[chunk.identity_digest] = gid
                with timer.phase("lookup"):
                    state.insert(gid, feat)
            gid += 1

    if cfg.verify_stream:
        _verify_lossless(streams, version_chunks, records)
    if cfg.store_dir is not None:
        _materialize(cfg.store_dir, records)

    chunk_count = gid
    metadata = cfg.metadata_per_chunk * chunk_count
    report = DedupReport(
        detector=cfg.detector.value,
        avg_chunk_size=cfg.chunking.avg_size,
        dimension=cfg.features.dim_m,
        bytes_before=sum(len(s) for s in streams),
        bytes_after=unique_data + patch_bytes_total + metadata,
        unique_data_bytes=unique_data,
        patch_bytes=patch_bytes_total,
        metadata_bytes=metadata,
        chunk_count=chunk_count,
        duplicate_count=counts[DedupeAction.DUPLICATE],
        similar_count=counts[DedupeAction.DELTA],
        unique_count=counts[DedupeAction.STORE],
        phase_timings={p: 0.0 for p in PHASES}
        if cfg.deterministic
        else dict(timer.seconds),
    )
    return report


def _verify_lossless(
    streams: list[bytes], version_chunks: list[list[Chunk]], records: list[tuple]
) -> None:
    """Rebuild every chunk from its stored form and compare to the originals."""
    rebuilt: dict[int, bytes] = {}
    for gid, rec in enumerate(records):
        kind = rec[0]
        if kind == "raw":
            rebuilt[gid] = rec[1]
        elif kind == "dup":
            rebuilt[gid] = rebuilt[rec[1]]
        else:
            rebuilt[gid] = delta_decode(rec[2], rebuilt[rec[1]])
    gid = 0
    for data, chunks in zip(streams, version_chunks):
        parts = []
        for _ in chunks:
            parts.append(rebuilt[gid])
            gid += 1
        if b"".join(parts) != data:
            raise CorruptionError("reconstructed stream does not match the original")


def _materialize(store_dir: Path, records: list[tuple]) -> None:
    store = Path(store_dir)
    (store / "chunks").mkdir(parents=True, exist_ok=True)
    (store / "patches").mkdir(parents=True, exist_ok=True)
    for gid, rec in enumerate(records):
        if rec[0] == "raw":
            (store / "chunks" / f"{gid:08d}.raw").write_bytes(rec[1])
        elif rec[0] == "delta":
            (store / "patches" / f"{gid:08d}.patch").write_bytes(
                patch_to_bytes(rec[2])
            )


# --- reporting -------------------------------------------------------------

_TABLE_COLUMNS = ("detector", "avg_chunk_size", "dimension", "dcr", "total_time_s")
_CSV_COLUMNS = _TABLE_COLUMNS + (
    "dcr_no_metadata",
    "bytes_before",
    "bytes_after",
    "unique_data_bytes",
    "patch_bytes",
    "metadata_bytes",
    "chunk_count",
    "duplicate_count",
    "similar_count",
    "unique_count",
) + tuple(f"time_{p}_s" for p in PHASES)


def _row_values(report: DedupReport) -> dict[str, object]:
    row = {
        "detector": report.detector,
        "avg_chunk_size": report.avg_chunk_size,
        "dimension": report.dimension,
        "dcr": report.dcr,
        "total_time_s": report.total_time_s,
        "dcr_no_metadata": report.dcr_no_metadata,
        "bytes_before": report.bytes_before,
        "bytes_after": report.bytes_after,
        "unique_data_bytes": report.unique_data_bytes,
        "patch_bytes": report.patch_bytes,
        "metadata_bytes": report.metadata_bytes,
        "chunk_count": report.chunk_count,
        "duplicate_count": report.duplicate_count,
        "similar_count": report.similar_count,
        "unique_count": report.unique_count,
    }
    for p in PHASES:
        row[f"time_{p}_s"] = report.phase_timings.get(p, 0.0)
    return row


def report_render(reports: Sequence[DedupReport], format: str = "table") -> str:
    """Render reports as an aligned table, full-precision CSV, or JSON."""
    if format == "table":
        rows = [
            (
                r.detector,
                str(r.avg_chunk_size),
                str(r.dimension),
                f"{r.dcr:.2f}",
                f"{r.total_time_s:.2f}",
            )
            for r in reports
        ]
        widths = [
            max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
            for i, h in enumerate(_TABLE_COLUMNS)
        ]
        lines = ["  ".join(h.ljust(w) for h, w in zip(_TABLE_COLUMNS, widths))]
        for row in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for r in reports:
            row = _row_values(r)
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in (row[c] for c in _CSV_COLUMNS)]
            )
        return buf.getvalue()
    if format == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    raise ParameterError(f"unknown report format: {format}")


def parse_report_csv(text: str) -> list[DedupReport]:
    """Inverse of csv rendering; reconstructs the full report objects."""
    reader = csv.DictReader(io.StringIO(text))
    reports = []
    for row in reader:
        timings = {p: float(row[f"time_{p}_s"]) for p in PHASES}
        reports.append(
            DedupReport(
                detector=row["detector"],
                avg_chunk_size=int(row["avg_chunk_size"]),
                dimension=int(row["dimension"]),
                bytes_before=int(row["bytes_before"]),
                bytes_after=int(row["bytes_after"]),
                unique_data_bytes=int(row["unique_data_bytes"]),
                patch_bytes=int(row["patch_bytes"]),
                metadata_bytes=int(row["metadata_bytes"]),
                chunk_count=int(row["chunk_count"]),
                duplicate_count=int(row["duplicate_count"]),
                similar_count=int(row["similar_count"]),
                unique_count=int(row["unique_count"]),
                phase_timings=timings,
            )
        )
    return reports


def reports_to_json(reports: Sequence[DedupReport]) -> str:
    return report_render(reports, "json")


def reports_from_json(text: str) -> list[DedupReport]:
    docs = json.loads(text)
    if isinstance(docs, dict):
        docs = [docs]
    return [DedupReport.from_dict(d) for d in docs]


class SweepAxis(enum.Enum):
    CHUNK_SIZE = "chunk_size"
    DIMENSION = "dimension"


def _apply_axis(cfg: RunConfig, axis: SweepAxis, value: int) -> RunConfig:
    sub = replace(cfg)
    if axis is SweepAxis.CHUNK_SIZE:
        sub.chunking = ChunkingConfig(avg_size=value, gear_seed=cfg.chunking.gear_seed)
    else:
        sub.features = replace(cfg.features, dim_m=value)
        if cfg.model is not None:
            sub.model = replace(cfg.model, dim_m=value, dim_d=value)
    return sub


def sweep(
    cfg: RunConfig,
    axis: SweepAxis,
    values: Sequence[int],
    repeats: int = 3,
    warmup: bool = True,
) -> list[DedupReport]:
    """One full run per axis value; the median-total-time repeat is reported."""
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    reports = []
    for value in values:
        sub = _apply_axis(cfg, axis, value)
        if warmup:
            run_dedupe(sub)
        runs = [run_dedupe(sub) for _ in range(repeats)]
        runs.sort(key=lambda r: r.total_time_s)
        reports.append(runs[(len(runs) - 1) // 2])
    return reports
