"""Chunk-context model: a two-matrix linear network trained by mini-batch SGD.

The hidden vector of a chunk is W applied to the average of its 2K
surrounding initial features; the output maps back through U scaled by
1/(2K). Prediction inverts the output map with a ridge-regularized
pseudo-inverse of U, returning 2K * U_pinv * v for a new initial feature.
Training minimizes mean squared error between the output and the target
chunk's initial feature (the targets are continuous vectors, so a
regression loss replaces any categorical objective).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptySampleError,
    ModelFormatError,
    ParameterError,
    ShapeError,
    TrainingDivergedError,
)
from .rng import DEFAULT_SEED, mix64, shuffled_indices, stream_words

MODEL_MAGIC = b"CARDMDL1"


@dataclass(frozen=True)
class ModelConfig:
    dim_m: int = 50
    dim_d: int = 50
    context_k: int = 2
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 64
    rng_seed: int = DEFAULT_SEED
    ridge_epsilon: float = 1e-8
    pinv_rcond: float = 0.2  # drop singular directions below this fraction of the largest
    drop_boundary: bool = False  # drop chunks lacking full context instead of zero-padding

    def __post_init__(self) -> None:
        if self.dim_m < 1 or self.dim_d < 1:
            raise ParameterError("dim_m and dim_d must be >= 1")
        if self.context_k < 1:
            raise ParameterError("context_k must be >= 1")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.ridge_epsilon < 0:
            raise ParameterError("ridge_epsilon must be >= 0")
        if not 0.0 <= self.pinv_rcond < 1.0:
            raise ParameterError("pinv_rcond must be in [0, 1)")


@dataclass(frozen=True)
class TrainingSample:
    context: np.ndarray  # (2K, M) surrounding initial features, zero-padded
    target: np.ndarray  # (M,) the chunk's own initial feature


def _ridge_pinv(U: np.ndarray, epsilon: float, rcond: float = 0.0) -> np.ndarray:
    """(M, D) regularized pseudo-inverse of the (D, M) output matrix.

    Singular directions map through s / (s^2 + epsilon); directions below
    ``rcond`` times the largest singular value are dropped entirely (an
    ill-conditioned U would otherwise amplify them past every well-expressed
    direction). For a well-conditioned U nothing is truncated and the result
    matches the plain ridge inverse.
    """
    left, s, right_t = np.linalg.svd(U, full_matrices=False)
    inv = np.where(s >= rcond * s[0], s / (s * s + epsilon), 0.0)
    return (right_t.T * inv) @ left.T


@dataclass
class ContextModel:
    W: np.ndarray  # (M, D): feature space -> hidden space
    U: np.ndarray  # (D, M): hidden space -> feature space
    cfg: ModelConfig
    U_pinv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        if self.W.shape != (self.cfg.dim_m, self.cfg.dim_d):
            raise ShapeError(f"W shape {self.W.shape} != (M, D)")
        if self.U.shape != (self.cfg.dim_d, self.cfg.dim_m):
            raise ShapeError(f"U shape {self.U.shape} != (D, M)")
        if self.U_pinv is None:
            self.U_pinv = _ridge_pinv(
                self.U, self.cfg.ridge_epsilon, self.cfg.pinv_rcond
            )


def _vector_of(feature) -> np.ndarray:
    return np.asarray(getattr(feature, "vector", feature), dtype=np.float64)


def build_samples(
    features: Sequence, context_k: int, drop_boundary: bool = False
) -> list[TrainingSample]:
    """One sample per chunk from stream-ordered initial features.

    Missing neighbors at the stream boundaries are zero vectors and the
    averaging denominator stays 2K; with ``drop_boundary`` those chunks are
    omitted instead.
    """
    if context_k < 1:
        raise ParameterError("context_k must be >= 1")
    vecs = [_vector_of(f) for f in features]
    n = len(vecs)
    if n < 2:
        raise EmptySampleError(f"need at least 2 chunks for context, got {n}")
    m = vecs[0].shape[0]
    zero = np.zeros(m)
    samples = []
    lo, hi = (context_k, n - context_k) if drop_boundary else (0, n)
    for i in range(lo, hi):
        ctx = [
            vecs[j] if 0 <= j < n else zero
            for j in (*range(i - context_k, i), *range(i + 1, i + context_k + 1))
        ]
        samples.append(TrainingSample(context=np.stack(ctx), target=vecs[i]))
    if not samples:
        raise EmptySampleError("drop_boundary removed every sample")
    return samples


def forward(model: ContextModel, sample: TrainingSample) -> tuple[np.ndarray, np.ndarray]:
    """(hidden, output) of one sample under the current weights."""
    two_k = 2 * model.cfg.context_k
    ctx = np.asarray(sample.context, dtype=np.float64)
    if ctx.shape != (two_k, model.cfg.dim_m):
        raise ShapeError(f"context shape {ctx.shape} != ({two_k}, {model.cfg.dim_m})")
    x = ctx.sum(axis=0) / two_k
    hidden = x @ model.W
    output = (hidden @ model.U) / two_k
    return hidden, output


def batch_loss_and_grads(
    W: np.ndarray, U: np.ndarray, X: np.ndarray, T: np.ndarray, two_k: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Elementwise-MSE loss over a batch and its analytic W/U gradients.

    X rows are context sums already divided by 2K; T rows are targets.
    """
    with np.errstate(over="ignore"):  # divergence shows up as inf loss
        H = X @ W
        Y = (H @ U) / two_k
        R = Y - T
        loss = float((R * R).mean())
        dY = R * (2.0 / R.size)
        dU = (H.T @ dY) / two_k
        dW = X.T @ (dY @ U.T) / two_k
    return loss, dW, dU


def _sequential_loss_and_grads(
    W: np.ndarray, U: np.ndarray, X: np.ndarray, T: np.ndarray, two_k: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Per-sample accumulation; same math as the batch form, fixed order."""
    b, m = X.shape
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    total = 0.0
    for i in range(b):
        x, t = X[i], T[i]
        h = x @ W
        r = (h @ U) / two_k - t
        total += float((r * r).mean())
        dy = r * (2.0 / (b * m))
        dU += np.outer(h, dy) / two_k
        dW += np.outer(x, (dy @ U.T) / two_k)
    return total / b, dW, dU


def init_weights(cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform(-1/sqrt(D), 1/sqrt(D)) initialization of W and U."""
    m, d = cfg.dim_m, cfg.dim_d
    words = stream_words(cfg.rng_seed, 2 * m * d)
    u01 = words.astype(np.float64) / float(1 << 64)
    scale = 1.0 / np.sqrt(d)
    flat = (2.0 * u01 - 1.0) * scale
    return flat[: m * d].reshape(m, d), flat[m * d :].reshape(d, m)


@dataclass(frozen=True)
class TrainResult:
    model: ContextModel
    epoch_losses: list[float]


def train(
    samples: Sequence[TrainingSample], cfg: ModelConfig, deterministic: bool = False
) -> TrainResult:
    """Mini-batch SGD over (context -> target) pairs.

    ``deterministic`` accumulates gradients sample-by-sample in a fixed
    order so repeated runs are bit-identical regardless of BLAS batching.
    """
    if not samples:
        raise EmptySampleError("training requires at least one sample")
    two_k = 2 * cfg.context_k
    for s in samples:
        if s.context.shape != (two_k, cfg.dim_m) or s.target.shape != (cfg.dim_m,):
            raise ShapeError("sample dimensions do not match the model config")
    X = np.stack([s.context.sum(axis=0) for s in samples]) / two_k
    T = np.stack([s.target for s in samples]).astype(np.float64)
    W, U = init_weights(cfg)
    n = len(samples)
    losses = []
    grads = _sequential_loss_and_grads if deterministic else batch_loss_and_grads
    for epoch in range(cfg.epochs):
        order = shuffled_indices(n, mix64(cfg.rng_seed ^ (epoch + 1)))
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, dW, dU = grads(W, U, X[idx], T[idx], two_k)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch + 1, loss)
            W -= cfg.learning_rate * dW
            U -= cfg.learning_rate * dU
            total += loss * len(idx)
        losses.append(total / n)
    return TrainResult(model=ContextModel(W=W, U=U, cfg=cfg), epoch_losses=losses)


def predict(model: ContextModel, feature) -> np.ndarray:
    """Context-aware vector of an initial feature: 2K * U_pinv applied to it."""
    v = _vector_of(feature)
    if v.shape != (model.cfg.dim_m,):
        raise ShapeError(f"feature dimension {v.shape} != ({model.cfg.dim_m},)")
    return (2 * model.cfg.context_k) * (v @ model.U_pinv)


def save_model(model: ContextModel, path: str | Path) -> None:
    """magic, little-endian int32 M/D/K, W row-major f64, U row-major f64,
    then a 64-bit blake2b checksum of everything after the magic."""
    cfg = model.cfg
    payload = struct.pack("<iii", cfg.dim_m, cfg.dim_d, cfg.context_k)
    payload += model.W.astype("<f8").tobytes()
    payload += model.U.astype("<f8").tobytes()
    checksum = hashlib.blake2b(payload, digest_size=8).digest()
    Path(path).write_bytes(MODEL_MAGIC + payload + checksum)


def load_model(path: str | Path) -> ContextModel:
    data = Path(path).read_bytes()
    if len(data) < len(MODEL_MAGIC) or data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError("bad magic", 0)
    header_end = len(MODEL_MAGIC) + 12
    if len(data) < header_end + 8:
        raise ModelFormatError("truncated header", len(data))
    m, d, k = struct.unpack("<iii", data[len(MODEL_MAGIC) : header_end])
    if m < 1 or d < 1 or k < 1:
        raise ModelFormatError(f"invalid dimensions {(m, d, k)}", len(MODEL_MAGIC))
    expected = header_end + 2 * m * d * 8 + 8
    if len(data) != expected:
        raise ModelFormatError(
            f"payload size {len(data)} != expected {expected} for dims {(m, d, k)}",
            header_end,
        )
    payload = data[len(MODEL_MAGIC) : -8]
    checksum = hashlib.blake2b(payload, digest_size=8).digest()
    if checksum != data[-8:]:
        raise ModelFormatError("checksum mismatch", len(data) - 8)
    w_end = header_end + m * d * 8
    W = np.frombuffer(data[header_end:w_end], dtype="<f8").reshape(m, d)
    U = np.frombuffer(data[w_end:-8], dtype="<f8").reshape(d, m)
    cfg = ModelConfig(dim_m=m, dim_d=d, context_k=k)
    return ContextModel(W=W.copy(), U=U.copy(), cfg=cfg)
