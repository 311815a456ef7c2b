"""Exception types shared across the package."""


class TrackcastError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TrackcastError, ValueError):
    """A configuration value is invalid or an unknown key was supplied."""


class ShapeError(TrackcastError, ValueError):
    """Array arguments have incompatible or unexpected shapes."""


class NumericError(TrackcastError, ValueError):
    """Non-finite values where finite ones are required."""


class DataError(TrackcastError, ValueError):
    """A data record violates its schema or an invariant."""


class RangeError(TrackcastError, ValueError):
    """An index or window falls outside its valid range."""


class TrainingError(TrackcastError, RuntimeError):
    """The training loop hit a non-recoverable condition (e.g. NaN loss)."""


class SamplingError(TrackcastError, RuntimeError):
    """A sampling chain broke down; carries the diffusion step it died at."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UnreachableError(TrackcastError, RuntimeError):
    """No path exists between the requested endpoints."""


class VersionError(TrackcastError, ValueError):
    """A file declares a format version this code does not understand."""
