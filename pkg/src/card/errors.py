"""Exception types shared across the deduplication engine."""

from __future__ import annotations


class CardError(Exception):
    """Base class for all engine errors."""


class ParameterError(CardError, ValueError):
    """A caller-supplied parameter violates an operation's contract."""


class ShapeError(CardError, ValueError):
    """Vector or matrix dimensions do not agree with the configuration."""


class EmptyCorpusError(CardError):
    """A corpus root contains no regular files."""


class EmptySampleError(CardError):
    """Too few chunks to form any context training sample."""


class TrainingDivergedError(CardError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


class ModelFormatError(CardError):
    """Model file is malformed; ``offset`` points at the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class CorruptPatchError(CardError):
    """Patch bytes or instructions are inconsistent with the supplied base."""


class BaseMismatchError(CardError):
    """Patch was encoded against a different base chunk."""


class CorruptionError(CardError):
    """A pipeline decode-verification failed; the run must abort."""
