"""Exception hierarchy shared across the package.

Each class carries the CLI exit code used when it escapes a command.
"""


class LVNetError(Exception):
    exit_code = 1


class UsageError(LVNetError):
    exit_code = 1


class ConfigError(LVNetError, ValueError):
    exit_code = 2


class DataIOError(LVNetError, OSError):
    exit_code = 3


class NumericError(LVNetError, FloatingPointError):
    exit_code = 4


class TrainingError(NumericError):
    pass


class ValidationError(ConfigError):
    """Input data violates a documented range or type contract."""
