"""Shared exception types."""


class SpeerError(Exception):
    """Base class for all pipeline errors."""


class DataFormatError(SpeerError):
    """A file or record does not match its documented schema."""


class ConfigError(SpeerError):
    """Invalid pipeline configuration (bad value or unknown key)."""


class InvariantViolation(SpeerError):
    """An internal contract was broken (e.g. a plugin returned bad output)."""
