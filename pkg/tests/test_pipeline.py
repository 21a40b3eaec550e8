from pathlib import Path

import pytest

from card.chunking import ChunkingConfig, chunk_stream
from card.context_model import ModelConfig
from card.corpus import (
    Corpus,
    MutationPattern,
    MutationSpec,
    generate_versions,
    open_corpus,
)
from card.errors import EmptySampleError, ParameterError
from card.features import FeatureConfig
from card.pipeline import (
    DedupReport,
    Detector,
    RunConfig,
    SweepAxis,
    compute_dcr,
    format_relative_delta,
    parse_report_csv,
    report_render,
    reports_from_json,
    reports_to_json,
    run_dedupe,
    run_train,
    sweep,
)
from card.rng import mix64, random_bytes


def write_corpus(root: Path, files: dict[str, bytes]) -> Corpus:
    for rel, data in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
    return open_corpus(root, root.name)


@pytest.fixture
def small_versions(tmp_path):
    base = write_corpus(
        tmp_path / "v0",
        {f"f{i}.bin": random_bytes(mix64(500 + i), 300_000) for i in range(3)},
    )
    specs = [MutationSpec(MutationPattern.RANDOM_EDIT, 0.01, s) for s in (1, 2)]
    return tuple([base] + generate_versions(base, specs, tmp_path / "der"))


def base_config(versions, detector=Detector.NONE, **kw):
    defaults = dict(
        detector=detector,
        corpora=versions,
        chunking=ChunkingConfig(4096),
        features=FeatureConfig(),
        verify_stream=True,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


class TestRunDedupe:
    def test_exact_copy_appended_doubles_dcr(self, tmp_path):
        corpus = write_corpus(tmp_path / "c", {"a.bin": random_bytes(7, 400_000)})
        cfg = base_config((corpus, corpus))
        report = run_dedupe(cfg)
        copy_chunks = report.chunk_count // 2
        assert report.duplicate_count >= copy_chunks
        assert report.dcr >= 1.9

    def test_none_detector_on_incompressible_corpus(self, tmp_path):
        corpus = write_corpus(tmp_path / "c", {"a.bin": random_bytes(8, 500_000)})
        report = run_dedupe(base_config((corpus,)))
        assert 0.95 <= report.dcr <= 1.0
        assert report.similar_count == 0
        assert report.unique_count == report.chunk_count

    def test_accounting_identity_against_store_dir(self, small_versions, tmp_path):
        store = tmp_path / "store"
        cfg = base_config(
            small_versions, detector=Detector.NTRANSFORM, store_dir=store
        )
        report = run_dedupe(cfg)
        on_disk = sum(p.stat().st_size for p in store.rglob("*") if p.is_file())
        assert report.bytes_after == on_disk + report.metadata_bytes
        assert (
            report.bytes_after
            == report.unique_data_bytes + report.patch_bytes + report.metadata_bytes
        )
        assert (
            report.duplicate_count + report.similar_count + report.unique_count
            == report.chunk_count
        )

    def test_detector_isolation_matches_digest_oracle(self, small_versions):
        report = run_dedupe(base_config(small_versions))
        # independent digest-set pass over the same chunking
        seen = set()
        dup = uniq = 0
        stored = 0
        for corpus in small_versions:
            for chunk in chunk_stream(corpus.stream(), ChunkingConfig(4096)):
                if chunk.identity_digest in seen:
                    dup += 1
                else:
                    seen.add(chunk.identity_digest)
                    uniq += 1
                    stored += chunk.length
        assert report.duplicate_count == dup
        assert report.unique_count == uniq
        assert report.unique_data_bytes == stored

    def test_card_requires_model_source(self, small_versions):
        cfg = base_config(small_versions, detector=Detector.CARD, model=ModelConfig())
        with pytest.raises(ParameterError):
            run_dedupe(cfg)

    def test_card_end_to_end_with_train_first(self, small_versions, tmp_path):
        cfg = base_config(
            small_versions,
            detector=Detector.CARD,
            model=ModelConfig(epochs=8),
            train_first=True,
            model_path=tmp_path / "m.bin",
        )
        report = run_dedupe(cfg)
        assert (tmp_path / "m.bin").exists()
        assert report.chunk_count > 0
        none_report = run_dedupe(base_config(small_versions))
        assert report.dcr >= none_report.dcr

    def test_deterministic_runs_produce_identical_reports(self, small_versions, tmp_path):
        def go(i):
            cfg = base_config(
                small_versions,
                detector=Detector.CARD,
                model=ModelConfig(epochs=4),
                train_first=True,
                model_path=tmp_path / f"m{i}.bin",
                deterministic=True,
            )
            return run_dedupe(cfg)

        r1, r2 = go(1), go(2)
        assert reports_to_json([r1]) == reports_to_json([r2])
        assert (tmp_path / "m1.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()
        assert all(v == 0.0 for v in r1.phase_timings.values())


class TestRunTrain:
    def test_single_chunk_corpus_is_empty_sample_error(self, tmp_path):
        corpus = write_corpus(tmp_path / "c", {"a.bin": random_bytes(1, 2000)})
        cfg = RunConfig(
            detector=Detector.CARD,
            corpora=(corpus,),
            chunking=ChunkingConfig(4096),
            features=FeatureConfig(),
            model=ModelConfig(epochs=2),
        )
        with pytest.raises(EmptySampleError):
            run_train(cfg)

    def test_deterministic_model_bytes(self, small_versions, tmp_path):
        for i in (1, 2):
            cfg = RunConfig(
                detector=Detector.CARD,
                corpora=small_versions[:1],
                chunking=ChunkingConfig(4096),
                features=FeatureConfig(),
                model=ModelConfig(epochs=3),
                model_path=tmp_path / f"m{i}.bin",
                deterministic=True,
            )
            run_train(cfg)
        assert (tmp_path / "m1.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()

    def test_loss_decreases_on_versioned_corpus(self, small_versions):
        cfg = RunConfig(
            detector=Detector.CARD,
            corpora=small_versions,
            chunking=ChunkingConfig(4096),
            features=FeatureConfig(),
            model=ModelConfig(epochs=10),
        )
        result = run_train(cfg)
        assert result.epoch_losses[-1] < result.epoch_losses[0]


class TestDcrAndFormatting:
    def test_dcr_examples(self):
        assert compute_dcr(100, 100) == 1.0
        assert compute_dcr(200, 100) == 2.0
        with pytest.raises(ParameterError):
            compute_dcr(10, 0)

    def test_relative_delta_formatting(self):
        assert format_relative_delta(7.73, 7.74) == "+0.13%"
        assert format_relative_delta(3.29, 3.28) == "-0.30%"
        assert format_relative_delta(3.69, 3.69) == "0.00%"


def make_report(seed=0):
    return DedupReport(
        detector="finesse",
        avg_chunk_size=16384,
        dimension=50,
        bytes_before=1000000 + seed,
        bytes_after=129283 + seed,
        unique_data_bytes=100000,
        patch_bytes=19283,
        metadata_bytes=10000 + seed,
        chunk_count=160,
        duplicate_count=40,
        similar_count=30,
        unique_count=90,
        phase_timings={
            "chunking": 0.125 + seed,
            "feature": 1.5,
            "train": 0.0,
            "lookup": 0.25,
            "delta": 0.0625,
        },
    )


class TestReportRender:
    def test_empty_list_header_only(self):
        out = report_render([], "table")
        assert out.splitlines() == [
            "detector  avg_chunk_size  dimension  dcr  total_time_s"
        ]

    def test_table_dcr_two_decimals(self):
        out = report_render([make_report()], "table")
        row = out.splitlines()[1].split()
        assert row[0] == "finesse"
        assert row[3] == "7.73"  # 1000000 / 129283 = 7.7350...

    def test_csv_roundtrip(self):
        reports = [make_report(i) for i in range(3)]
        text = report_render(reports, "csv")
        assert parse_report_csv(text) == reports

    def test_json_roundtrip(self):
        reports = [make_report(i) for i in range(2)]
        assert reports_from_json(reports_to_json(reports)) == reports

    def test_unknown_format(self):
        with pytest.raises(ParameterError):
            report_render([], "xml")


class TestSweep:
    def test_empty_values(self, small_versions):
        assert sweep(base_config(small_versions), SweepAxis.CHUNK_SIZE, []) == []

    def test_chunk_size_axis_sets_config(self, small_versions):
        reports = sweep(
            base_config(small_versions),
            SweepAxis.CHUNK_SIZE,
            [4096, 16384],
            repeats=1,
            warmup=False,
        )
        assert [r.avg_chunk_size for r in reports] == [4096, 16384]
        assert all(r.detector == "none" for r in reports)

    def test_dimension_axis_sets_feature_dim(self, small_versions, tmp_path):
        cfg = base_config(
            small_versions,
            detector=Detector.CARD,
            model=ModelConfig(epochs=2),
            train_first=True,
        )
        reports = sweep(cfg, SweepAxis.DIMENSION, [40, 50], repeats=1, warmup=False)
        assert [r.dimension for r in reports] == [40, 50]
