"""Exception types shared across the package."""


class InnstabError(Exception):
    """Base class for all package errors."""


class ShapeError(InnstabError, ValueError):
    """Array shapes do not compose."""


class ContractError(InnstabError, ValueError):
    """A documented precondition on argument values was violated."""


class ConfigError(InnstabError, ValueError):
    """Invalid or inconsistent configuration."""


class UsageError(InnstabError, RuntimeError):
    """An API was called out of order (e.g. backward without a trace)."""


class NumericalError(InnstabError, ArithmeticError):
    """Non-finite values appeared during optimisation.

    ``state`` optionally carries the last good iterate or parameter set so
    callers can dump or resume from it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DegenerateSampleError(InnstabError, ValueError):
    """Correlation is undefined because an argument has zero variance."""
