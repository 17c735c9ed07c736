"""Exception hierarchy shared by the solvers and the command line."""


class FwdNashError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(FwdNashError, ValueError):
    """A parameter violates the admissible type space."""


class DimensionMismatch(FwdNashError, ValueError):
    """A strategy vector does not have the expected length."""


class PreconditionError(FwdNashError, ValueError):
    """An operation was called on inputs outside its special case."""


class DegenerateEquilibrium(FwdNashError, ArithmeticError):
    """The n-player aggregate psi_sigma equals one: no constant equilibrium."""


class NoConstantEquilibrium(FwdNashError, ArithmeticError):
    """The mean-field aggregate psi_sigma equals one: no constant MF-equilibrium."""


class NoConvergence(FwdNashError, RuntimeError):
    """Best-response iteration did not reach the tolerance.

    The last iterate and the iteration log are attached so callers can
    inspect the failure.
    """

    def __init__(self, message, strategies=None, log=None):
        super().__init__(message)
        self.strategies = strategies
        self.log = log if log is not None else []


class ParseError(FwdNashError, ValueError):
    """A configuration file could not be parsed or failed schema checks."""


class IllConditionedWarning(UserWarning):
    """psi_sigma is close to one; 1/(1-psi_sigma) amplifies input error."""
