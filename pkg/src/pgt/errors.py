"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the command-line layer
can translate failures without knowing where they were raised.
"""


class PGTError(Exception):
    exit_code = 1


class ConfigError(PGTError, ValueError):
    exit_code = 2


class ShapeError(PGTError, ValueError):
    """Operand shapes are incompatible with the requested operation."""

    exit_code = 2


class DimensionError(ShapeError):
    pass


class ConditioningError(ShapeError):
    """A prompt tensor does not match the token dimension it conditions."""


class ContractError(PGTError, ValueError):
    exit_code = 2


class TaskLookupError(PGTError, KeyError):
    exit_code = 2

    def __str__(self):
        return Exception.__str__(self)


class SelectorError(ConfigError):
    pass


class RegistryError(PGTError, ValueError):
    exit_code = 2


class UndefinedMetricError(PGTError, ValueError):
    exit_code = 3


class DataError(PGTError):
    exit_code = 3


class LoadError(DataError):
    pass


class NumericAbort(PGTError, FloatingPointError):
    exit_code = 4
