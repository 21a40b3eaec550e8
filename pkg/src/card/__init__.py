"""Chunk-context aware resemblance detection and delta-compression benchmark."""

from .chunking import (
    Chunk,
    ChunkingConfig,
    RabinWindow,
    chunk_stream,
    rolling_fingerprints,
    split_subchunks,
)
from .context_model import (
    ContextModel,
    ModelConfig,
    TrainingSample,
    build_samples,
    forward,
    load_model,
    predict,
    save_model,
    train,
)
from .corpus import (
    Corpus,
    CorpusManifest,
    MutationPattern,
    MutationSpec,
    generate_versions,
    ingest,
    mutate,
    open_corpus,
)
from .delta import DeltaPatch, delta_decode, delta_encode, patch_overhead
from .features import (
    FeatureConfig,
    HashFamily,
    InitialFeature,
    Scheme,
    SuperFeature,
    finesse_superfeature,
    initial_feature,
    lsh_digest,
    ntransform_superfeature,
)
from .index import (
    Decision,
    DedupeAction,
    MatchResult,
    SuperFeatureIndex,
    VectorIndex,
    dedupe_decide,
)
from .pipeline import (
    DedupReport,
    Detector,
    RunConfig,
    SweepAxis,
    compute_dcr,
    report_render,
    run_dedupe,
    run_train,
    sweep,
)

__version__ = "0.1.0"
