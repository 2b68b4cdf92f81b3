"""Shared exception taxonomy; the CLI maps these onto exit codes."""


class ConfigError(Exception):
    """Bad shapes, unknown names or keys, malformed configuration."""


class DataError(Exception):
    """Malformed or inconsistent data: catalogs, logs, feature values."""


class UsageError(Exception):
    """API misuse: backward without a graph, empty batches, etc."""
