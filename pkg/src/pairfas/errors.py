"""Exception hierarchy.

Each family carries the process exit code the CLI maps it to.
"""


class PairFASError(Exception):
    exit_code = 1


class ConfigError(PairFASError):
    exit_code = 2


class DataIntegrityError(PairFASError):
    exit_code = 3


class ParseError(DataIntegrityError):
    pass


class ValidationError(DataIntegrityError):
    pass


class NumericalError(PairFASError):
    exit_code = 4


class DimensionError(NumericalError, ValueError):
    pass


class DomainError(NumericalError, ValueError):
    pass


class EvaluationError(NumericalError):
    pass


class TrainingError(NumericalError):
    pass
