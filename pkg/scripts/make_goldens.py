#!/usr/bin/env python3
"""Regenerate the golden byte-layout fixtures under tests/golden/.

The fixtures pin the model file, patch file, and manifest formats; run this
only when a format change is intended, and review the diff.
"""

from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from card.context_model import ContextModel, ModelConfig, save_model
from card.corpus import ingest, manifest_to_json
from card.delta import delta_encode, patch_to_bytes
from card.rng import random_bytes, stream_words

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"


def golden_model(path: Path) -> None:
    cfg = ModelConfig(dim_m=3, dim_d=2, context_k=1, epochs=1, rng_seed=404)
    w_words = stream_words(404, 6)
    u_words = stream_words(405, 6)
    W = (w_words.astype(np.float64) / float(1 << 64)).reshape(3, 2)
    U = (u_words.astype(np.float64) / float(1 << 64)).reshape(2, 3)
    save_model(ContextModel(W=W, U=U, cfg=cfg), path)


def golden_patch(path: Path) -> None:
    base = random_bytes(2024, 2048)
    target = base[:512] + random_bytes(2025, 96) + base[512:1800] + base[1900:]
    path.write_bytes(patch_to_bytes(delta_encode(target, base)))


def golden_manifest(path: Path, scratch: Path) -> None:
    tree = scratch / "golden-tree"
    (tree / "nested").mkdir(parents=True, exist_ok=True)
    (tree / "alpha.bin").write_bytes(random_bytes(7, 1000))
    (tree / "nested" / "beta.bin").write_bytes(random_bytes(8, 512))
    path.write_text(manifest_to_json(ingest(tree, "golden-v1")), encoding="utf-8")


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    golden_model(GOLDEN / "model.bin")
    golden_patch(GOLDEN / "patch.bin")
    import tempfile

    with tempfile.TemporaryDirectory() as scratch:
        golden_manifest(GOLDEN / "manifest.json", Path(scratch))
    for p in sorted(GOLDEN.iterdir()):
        print(f"{p.name}: {p.stat().st_size} bytes")


if __name__ == "__main__":
    main()
