"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`TttmError` so callers
(and the CLI exit-code mapping) can distinguish data problems from bugs.
"""
from __future__ import annotations

__all__ = [
    "TttmError",
    "ParseError",
    "DuplicateKeyError",
    "SchemaError",
    "ShapeError",
    "SensorNotFoundError",
    "InsufficientDataError",
    "RegularizationRequiredError",
    "NoReferenceClusterError",
    "TrainingDivergedError",
    "EmptyResultError",
    "NumericError",
    "SpecValidationError",
]


class TttmError(Exception):
    """Base class for all library errors."""


class ParseError(TttmError):
    """A file could not be parsed; carries the offending location."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)


class DuplicateKeyError(ParseError):
    """Two rows claim the same (tool, sensor, timestamp) cell."""


class SchemaError(TttmError):
    """Structurally valid file with semantically inconsistent content."""


class ShapeError(TttmError):
    """Array arguments with incompatible shapes or orderings."""


class SensorNotFoundError(TttmError):
    """Requested sensor id absent from every tool in the fleet."""


class InsufficientDataError(TttmError):
    """Too few points for the requested statistic or model."""


class RegularizationRequiredError(TttmError):
    """Normal equations singular; a positive ridge penalty is required."""


class NoReferenceClusterError(TttmError):
    """Clustering produced only noise, so no reference centroid exists."""


class NumericError(TttmError):
    """Non-finite values where finite ones are required."""


class TrainingDivergedError(NumericError):
    """Training loss became non-finite; carries the epoch and last loss."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")


class EmptyResultError(TttmError):
    """A pipeline stage removed everything there was to analyze."""


class SpecValidationError(TttmError):
    """A synthetic-fleet specification contradicts itself."""
