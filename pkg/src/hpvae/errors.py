"""Shared exception types for the data/config pipeline."""


class FormatError(ValueError):
    """An input file does not match its declared format."""


class DataError(ValueError):
    """Data preconditions violated (empty after filtering, too few items, ...)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
