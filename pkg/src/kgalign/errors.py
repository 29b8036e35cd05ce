"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class KgAlignError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(KgAlignError):
    """Invalid configuration: bad value, unknown key, shape mismatch at build time."""


class DataError(KgAlignError):
    """Malformed or inconsistent input data (triple files, embedding tables)."""


class NumericalError(KgAlignError):
    """Non-finite values where finite math is required (NaN loss, bad gradients)."""
