"""Exception hierarchy shared across the pipeline."""


class VsumError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VsumError):
    """A file does not follow its declared binary/JSON layout."""


class DataError(VsumError):
    """A file decoded fine but carries invalid values (NaN/Inf, negatives)."""


class IoError(VsumError):
    """Reading or writing a file failed at the OS level."""


class ConsistencyError(VsumError):
    """Cross-field or cross-file invariants are violated."""


class ConfigError(VsumError):
    """A run configuration is malformed or self-contradictory."""


class DegenerateVectorError(VsumError):
    """A feature vector with zero norm where a direction is required."""


class DegenerateInputError(VsumError):
    """Input on which a statistic is undefined (e.g. constant scores)."""


class CoverageError(VsumError):
    """Sliding windows leave part of the token sequence uncovered."""


class NumericsError(VsumError):
    """Non-finite values appeared where finite arithmetic is required."""


class UsageError(VsumError):
    """An API was called in an unsupported way (e.g. backward without cache)."""
