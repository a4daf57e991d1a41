"""Exception hierarchy shared across the package.

Every error type carries an ``exit_code`` so the CLI can map failure
categories to distinct process exit statuses.
"""


class TomodiffError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class MissingInputError(TomodiffError):
    """A required input file does not exist."""

    exit_code = 3


class ConfigError(TomodiffError):
    """A config file is malformed or holds invalid values."""

    exit_code = 4


class ParseError(TomodiffError):
    """An input file has malformed content (names the offending row)."""

    exit_code = 5


class ValidationError(TomodiffError):
    """Input values violate a documented precondition or invariant."""

    exit_code = 5


class RangeError(TomodiffError):
    """A step index or split request falls outside the valid range."""

    exit_code = 5


class UndefinedMetricError(TomodiffError):
    """A relative-error metric has a zero denominator."""

    exit_code = 5


class ShapeError(TomodiffError):
    """Array dimensions disagree between two inputs."""

    exit_code = 6


class TopologyError(TomodiffError):
    """The network graph cannot route a requested origin-destination pair."""

    exit_code = 7


class CheckpointIntegrityError(TomodiffError):
    """A checkpoint file is corrupt, truncated, or fails its checksums."""

    exit_code = 8


class UnsupportedVersionError(CheckpointIntegrityError):
    """A checkpoint declares a format version this build does not read."""

    exit_code = 8


class TrainingError(TomodiffError):
    """Training diverged (non-finite loss)."""

    exit_code = 9


class OptimizationError(TomodiffError):
    """Estimation hit a non-finite gradient or objective."""

    exit_code = 9
