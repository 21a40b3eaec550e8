"""Command-line interface for the deduplication engine.

Exit codes: 0 success, 1 usage or input error, 2 data corruption,
3 training failure. CARD_SEED in the environment overrides every default
seed knob.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .chunking import ChunkingConfig, chunk_inventory, chunk_stream
from .context_model import ModelConfig
from .corpus import Corpus, MutationPattern, MutationSpec
from .delta import delta_decode, delta_encode, patch_from_bytes, patch_to_bytes
from .errors import (
    CardError,
    CorruptionError,
    CorruptPatchError,
    BaseMismatchError,
    EmptySampleError,
    ModelFormatError,
    ParameterError,
    TrainingDivergedError,
)
from .features import FeatureConfig
from .pipeline import (
    Detector,
    RunConfig,
    SweepAxis,
    report_render,
    reports_from_json,
    reports_to_json,
    run_dedupe,
    run_train,
    sweep,
)
from .rng import DEFAULT_SEED

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CORRUPTION = 2
EXIT_TRAINING = 3


def default_seed() -> int:
    env = os.environ.get("CARD_SEED")
    return int(env, 0) if env else DEFAULT_SEED


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; we want 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_chunking_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--avg-size", type=int, default=16 * 1024, help="average chunk size (power of two)")
    p.add_argument("--min-size", type=int, default=0)
    p.add_argument("--max-size", type=int, default=0)
    p.add_argument("--gear-seed", type=int, default=None)


def _chunking_config(args) -> ChunkingConfig:
    seed = args.gear_seed if args.gear_seed is not None else default_seed()
    return ChunkingConfig(
        avg_size=args.avg_size,
        min_size=args.min_size,
        max_size=args.max_size,
        gear_seed=seed,
    )


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=50, help="feature dimension M")
    p.add_argument("--subchunks", type=int, default=32, help="sub-chunks per chunk")
    p.add_argument("--shingle-order", type=int, default=2)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden-dim", type=int, default=0, help="hidden dimension D (default: --dim)")
    p.add_argument("--context-k", type=int, default=2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)


def _model_config(args) -> ModelConfig:
    seed = args.seed if args.seed is not None else default_seed()
    return ModelConfig(
        dim_m=args.dim,
        dim_d=args.hidden_dim or args.dim,
        context_k=args.context_k,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        rng_seed=seed,
    )


def _feature_config(args) -> FeatureConfig:
    return FeatureConfig(
        k_subchunks=args.subchunks,
        shingle_order=args.shingle_order,
        dim_m=args.dim,
        hash_family_seed=default_seed(),
    )


def _open_corpora(paths: list[str]) -> tuple[Corpus, ...]:
    return tuple(
        corpus_mod.open_corpus(p, version_tag=Path(p).name) for p in paths
    )


def _parse_mutation(text: str) -> MutationSpec:
    try:
        pattern, fraction, seed = text.split(":")
        return MutationSpec(
            pattern=MutationPattern(pattern),
            edit_fraction=float(fraction),
            seed=int(seed, 0),
        )
    except (ValueError, KeyError) as exc:
        raise ParameterError(
            f"mutation spec must be pattern:fraction:seed, got {text!r}"
        ) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="card", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    corpus_p = sub.add_parser("corpus", help="ingest trees, mutate files, derive versions")
    corpus_sub = corpus_p.add_subparsers(dest="corpus_command", required=True)

    ing = corpus_sub.add_parser("ingest")
    ing.add_argument("--root", required=True)
    ing.add_argument("--tag", required=True)
    ing.add_argument("--out", help="manifest JSON path (default: stdout)")

    mut = corpus_sub.add_parser("mutate")
    mut.add_argument("--input", required=True)
    mut.add_argument("--output", required=True)
    mut.add_argument("--pattern", required=True, choices=[p.value for p in MutationPattern])
    mut.add_argument("--edit-fraction", type=float, required=True)
    mut.add_argument("--seed", type=int, default=None)

    ver = corpus_sub.add_parser("versions")
    ver.add_argument("--root", required=True)
    ver.add_argument("--tag", required=True)
    ver.add_argument("--out-dir", required=True)
    ver.add_argument("--spec", action="append", required=True, metavar="PATTERN:FRACTION:SEED")

    chunk_p = sub.add_parser("chunk", help="print the chunk inventory of a file or corpus")
    src = chunk_p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--corpus")
    _add_chunking_flags(chunk_p)
    chunk_p.add_argument("--out", help="inventory path (default: stdout)")

    train_p = sub.add_parser("train", help="train the chunk-context model")
    train_p.add_argument("--corpus", required=True)
    train_p.add_argument("--model", required=True, help="output model path")
    _add_chunking_flags(train_p)
    _add_feature_flags(train_p)
    _add_model_flags(train_p)
    train_p.add_argument("--deterministic", action="store_true")

    dedupe_p = sub.add_parser("dedupe", help="run deduplication over ordered corpora")
    dedupe_p.add_argument("--detector", required=True, choices=[d.value for d in Detector])
    dedupe_p.add_argument("--corpus", action="append", required=True)
    dedupe_p.add_argument("--model", help="trained model path (card)")
    dedupe_p.add_argument("--train-first", action="store_true")
    dedupe_p.add_argument("--threshold", type=float, default=0.7)
    _add_chunking_flags(dedupe_p)
    _add_feature_flags(dedupe_p)
    _add_model_flags(dedupe_p)
    dedupe_p.add_argument("--report", help="report JSON path (default: stdout)")
    dedupe_p.add_argument("--no-verify", action="store_true", help="skip patch decode verification")
    dedupe_p.add_argument("--verify-stream", action="store_true", help="rebuild and compare every stream")
    dedupe_p.add_argument("--store-dir", help="materialize stored chunks and patches here")
    dedupe_p.add_argument("--deterministic", action="store_true")

    bench_p = sub.add_parser("bench", help="sweep one axis and report per-value runs")
    bench_p.add_argument("--sweep", required=True, choices=[a.value for a in SweepAxis])
    bench_p.add_argument("--values", required=True, help="comma-separated integers")
    bench_p.add_argument("--detector", required=True, choices=[d.value for d in Detector])
    bench_p.add_argument("--corpus", action="append", required=True)
    bench_p.add_argument("--model", help="trained model path (card)")
    bench_p.add_argument("--train-first", action="store_true")
    bench_p.add_argument("--threshold", type=float, default=0.7)
    _add_chunking_flags(bench_p)
    _add_feature_flags(bench_p)
    _add_model_flags(bench_p)
    bench_p.add_argument("--repeats", type=int, default=3)
    bench_p.add_argument("--no-warmup", action="store_true")
    bench_p.add_argument("--report", help="report JSON path (default: stdout)")
    bench_p.add_argument("--deterministic", action="store_true")

    report_p = sub.add_parser("report", help="render saved report JSON")
    report_p.add_argument("--format", required=True, choices=["table", "csv", "json"])
    report_p.add_argument("--input", action="append", required=True)

    delta_p = sub.add_parser("delta", help="encode or decode a patch")
    delta_sub = delta_p.add_subparsers(dest="delta_command", required=True)
    enc = delta_sub.add_parser("encode")
    enc.add_argument("--target", required=True)
    enc.add_argument("--base", required=True)
    enc.add_argument("--out", required=True)
    dec = delta_sub.add_parser("decode")
    dec.add_argument("--patch", required=True)
    dec.add_argument("--base", required=True)
    dec.add_argument("--out", required=True)

    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _run_config(args, need_model: bool) -> RunConfig:
    detector = Detector(args.detector)
    model_cfg = _model_config(args) if (need_model and detector is Detector.CARD) else None
    return RunConfig(
        detector=detector,
        corpora=_open_corpora(args.corpus),
        chunking=_chunking_config(args),
        features=_feature_config(args),
        model=model_cfg,
        threshold=args.threshold,
        model_path=Path(args.model) if args.model else None,
        train_first=args.train_first,
        verify_patches=not getattr(args, "no_verify", False),
        verify_stream=getattr(args, "verify_stream", False),
        store_dir=Path(args.store_dir) if getattr(args, "store_dir", None) else None,
        deterministic=args.deterministic,
    )


def _cmd_corpus(args) -> int:
    if args.corpus_command == "ingest":
        manifest = corpus_mod.ingest(args.root, args.tag)
        _emit(corpus_mod.manifest_to_json(manifest), args.out)
    elif args.corpus_command == "mutate":
        seed = args.seed if args.seed is not None else default_seed()
        spec = MutationSpec(
            pattern=MutationPattern(args.pattern),
            edit_fraction=args.edit_fraction,
            seed=seed,
        )
        data = Path(args.input).read_bytes()
        Path(args.output).write_bytes(corpus_mod.mutate(data, spec))
    else:
        base = corpus_mod.open_corpus(args.root, args.tag)
        specs = [_parse_mutation(s) for s in args.spec]
        derived = corpus_mod.generate_versions(base, specs, args.out_dir)
        for c in derived:
            path = Path(args.out_dir) / f"{c.manifest.version_tag}.manifest.json"
            corpus_mod.save_manifest(c.manifest, path)
            print(path)
    return EXIT_OK


def _cmd_chunk(args) -> int:
    if args.input:
        data = Path(args.input).read_bytes()
    else:
        data = corpus_mod.open_corpus(args.corpus, Path(args.corpus).name).stream()
    chunks = chunk_stream(data, _chunking_config(args))
    _emit(chunk_inventory(chunks), args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = RunConfig(
        detector=Detector.CARD,
        corpora=_open_corpora([args.corpus]),
        chunking=_chunking_config(args),
        features=_feature_config(args),
        model=_model_config(args),
        model_path=Path(args.model),
        train_first=True,
        deterministic=args.deterministic,
    )
    result = run_train(cfg)
    for epoch, loss in enumerate(result.epoch_losses, start=1):
        print(f"epoch {epoch}/{len(result.epoch_losses)} loss={loss:.6e}")
    print(f"model saved to {args.model}")
    return EXIT_OK


def _cmd_dedupe(args) -> int:
    cfg = _run_config(args, need_model=True)
    report = run_dedupe(cfg)
    _emit(reports_to_json([report]), args.report)
    if args.report:
        print(report_render([report], "table"), end="")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _run_config(args, need_model=True)
    values = [int(v) for v in args.values.split(",") if v]
    reports = sweep(
        cfg,
        SweepAxis(args.sweep),
        values,
        repeats=args.repeats,
        warmup=not args.no_warmup,
    )
    _emit(reports_to_json(reports), args.report)
    if args.report:
        print(report_render(reports, "table"), end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    reports = []
    for path in args.input:
        reports.extend(reports_from_json(Path(path).read_text(encoding="utf-8")))
    sys.stdout.write(report_render(reports, args.format))
    return EXIT_OK


def _cmd_delta(args) -> int:
    if args.delta_command == "encode":
        target = Path(args.target).read_bytes()
        base = Path(args.base).read_bytes()
        patch = delta_encode(target, base)
        Path(args.out).write_bytes(patch_to_bytes(patch))
    else:
        patch = patch_from_bytes(Path(args.patch).read_bytes())
        base = Path(args.base).read_bytes()
        Path(args.out).write_bytes(delta_decode(patch, base))
    return EXIT_OK


_COMMANDS = {
    "corpus": _cmd_corpus,
    "chunk": _cmd_chunk,
    "train": _cmd_train,
    "dedupe": _cmd_dedupe,
    "bench": _cmd_bench,
    "report": _cmd_report,
    "delta": _cmd_delta,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CorruptionError, CorruptPatchError, BaseMismatchError, ModelFormatError) as exc:
        print(f"card: corruption: {exc}", file=sys.stderr)
        return EXIT_CORRUPTION
    except (TrainingDivergedError, EmptySampleError) as exc:
        print(f"card: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (CardError, OSError) as exc:
        print(f"card: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
