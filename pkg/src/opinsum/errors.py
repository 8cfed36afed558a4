"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numerical failures exit 3.
"""


class OpinsumError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(OpinsumError):
    """Bad configuration: unknown keys, unparseable files, invalid values."""


class DataError(OpinsumError):
    """Bad or inconsistent input data (corpora, pairs, vocab mismatches)."""


class NumericalError(OpinsumError):
    """Non-finite losses or gradients, failed numerical checks."""
