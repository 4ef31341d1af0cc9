"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value; message names the offending field."""


class ShapeError(ValueError):
    """Array shape mismatch between operands."""


class NumericError(FloatingPointError):
    """Non-finite value encountered during computation."""


class FormatError(ValueError):
    """File does not conform to the expected binary format."""


class CorruptionError(FormatError):
    """File is truncated or otherwise internally inconsistent."""
