"""Exception hierarchy.

Every exception carries the process exit code the command line maps it to:
2 for configuration/usage problems, 3 for bad or insufficient data and
4 for numerical failures.
"""


class ProbgridError(Exception):
    exit_code = 1


class ConfigError(ProbgridError):
    exit_code = 2


class UsageError(ConfigError):
    pass


class DomainError(ProbgridError, ValueError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 2


class DataError(ProbgridError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, source=None):
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.source = source


class DuplicateRecordError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class LatticeMismatchError(DataError):
    pass


class MissingStageError(DataError):
    """An upstream pipeline stage has not been run (or its outputs are gone)."""

    def __init__(self, stage, detail=""):
        msg = f"missing outputs of stage '{stage}'; run `probgrid {stage}` first"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.stage = stage


class NumericalError(ProbgridError):
    exit_code = 4


class ConditioningError(NumericalError):
    def __init__(self, message, min_eigenvalue=None):
        if min_eigenvalue is not None:
            message = f"{message} (minimum eigenvalue estimate {min_eigenvalue:.3e})"
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ModelError(NumericalError):
    pass
