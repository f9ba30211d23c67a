"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class DataError(ValueError):
    """Malformed or inconsistent input data (scene files, predictions)."""


class NumericError(RuntimeError):
    """Non-finite value encountered where the pipeline cannot continue."""
