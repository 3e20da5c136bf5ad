"""Typed error hierarchy.

Every failure mode surfaces as one of three families so the CLI can map
exceptions to exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class AuxclError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(AuxclError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class DataError(AuxclError):
    """Invalid on-disk data or violated data invariants."""

    exit_code = 3


class NumericalError(AuxclError):
    """Numerical failure during computation or training."""

    exit_code = 4


# -- numerics ---------------------------------------------------------------

class NearZeroNorm(NumericalError):
    """Vector norm below the 1e-6 normalization threshold."""


class ShapeMismatch(NumericalError):
    """Operand shapes do not agree."""


class IndexOutOfRange(NumericalError):
    """Hard class target outside the logit range."""


class NonFiniteLoss(NumericalError):
    """A loss or gradient evaluation produced NaN or Inf."""


# -- embedding store --------------------------------------------------------

class IoError(DataError):
    """Filesystem failure while reading or writing a bundle."""


class InvariantViolation(DataError):
    """Bundle or manifest invariants violated before write or after read."""


class BadVersion(DataError):
    """Unsupported bundle format version."""


class SizeMismatch(DataError):
    """Payload byte size disagrees with the manifest."""


class LabelOutOfRange(DataError):
    """A label falls outside [0, number of classes)."""


class NonFiniteEntry(DataError):
    """A stored embedding contains NaN or Inf."""


class InfeasibleSeparation(DataError):
    """Synthetic class-mean repulsion failed to reach the requested floor."""


# -- pipeline stages --------------------------------------------------------

class EmptyPool(DataError):
    """Auxiliary retrieval produced no samples."""


class MissingSnapshot(DataError):
    """Distillation requested but no prototype snapshot exists."""


class DuplicateTask(DataError):
    """Replay entries for this task were already merged."""


class EmptyMemory(DataError):
    """Replay batch requested from an empty memory."""


class EmptySplit(DataError):
    """Evaluation requested on an empty test split."""
