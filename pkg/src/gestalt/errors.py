"""Exception and warning classes.

Every error carries a stable ``code`` string so the CLI can report it and
pick an exit status without string matching on messages.
"""

from __future__ import annotations


class GestaltError(Exception):
    """Base class for all library errors."""

    code = "E_GENERIC"
    #: CLI exit status; 2 marks a usage-level problem, 1 a computation failure.
    exit_status = 1


class DomainError(GestaltError, ValueError):
    code = "E_DOMAIN"


class NotFoundError(GestaltError, KeyError):
    code = "E_NOT_FOUND"
    exit_status = 2

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DegenerateVarianceError(GestaltError, ValueError):
    code = "E_DEGENERATE_VARIANCE"


class SingularityError(GestaltError, ValueError):
    code = "E_SINGULAR"


class InsufficientDataError(GestaltError, ValueError):
    code = "E_INSUFFICIENT_DATA"


class AmbiguityError(GestaltError, ValueError):
    code = "E_AMBIGUOUS"

    def __init__(self, message: str, brackets=()):
        super().__init__(message)
        self.brackets = list(brackets)


class UnsupportedOperationError(GestaltError):
    code = "E_UNSUPPORTED"


class LoadError(GestaltError, ValueError):
    code = "E_LOAD"


class SchemaError(GestaltError, ValueError):
    code = "E_SCHEMA"


class ReweightError(GestaltError, ValueError):
    code = "E_REWEIGHT"


class DegenerateTestError(GestaltError, ValueError):
    code = "E_DEGENERATE_TEST"


class CollapseError(GestaltError, RuntimeError):
    code = "E_COLLAPSE"


class FoldError(GestaltError, RuntimeError):
    code = "E_FOLD"

    def __init__(self, fold: int, model: str, cause: Exception):
        super().__init__(f"fold {fold}: model {model!r} failed to fit: {cause}")
        self.fold = fold
        self.model = model
        self.cause = cause


class ConfigError(GestaltError, ValueError):
    code = "E_CONFIG"
    exit_status = 2


class DegenerateVarianceWarning(UserWarning):
    pass


class ImbalanceWarning(UserWarning):
    pass
