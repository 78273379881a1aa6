"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
data problems (unreadable inputs, malformed bitstreams) exit 3, numeric
failures (non-finite losses, diverging training) exit 4.
"""


class SfmaError(Exception):
    """Base class for all package errors."""


class ConfigError(SfmaError):
    """Invalid configuration value or inconsistent option combination."""


class DimensionError(ConfigError):
    """Tensor shape incompatible with the requested operation."""


class DataError(SfmaError):
    """Unreadable or malformed input data."""


class StreamError(DataError):
    """Corrupt or truncated bitstream."""


class NumericError(SfmaError):
    """Non-finite or otherwise unusable numeric state."""


class CoderError(SfmaError):
    """Malformed entropy-coder table or internal coder contract violation."""
