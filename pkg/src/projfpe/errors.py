"""Exception hierarchy shared by every module."""


class ProjFPEError(Exception):
    """Base class for all package errors."""


class UsageError(ProjFPEError, ValueError):
    """Malformed input (shape mismatch, bad argument)."""


class ConfigError(UsageError):
    """Experiment configuration failed validation."""


class NumericalError(ProjFPEError, ArithmeticError):
    """Base class for failures detected during computation."""


class DomainError(NumericalError):
    """Natural parameters outside the normalizability domain."""


class TailError(NumericalError):
    """Integrand not negligible at the truncated grid boundary."""


class SingularFisher(NumericalError):
    """Fisher matrix (or another SPD system) is numerically singular."""


class NonConvergence(NumericalError):
    """Iterative solver did not reach its tolerance."""


class ConditionFViolation(NumericalError):
    """E_theta[alpha^2] is not finite under quadrature."""


class SimulationError(NumericalError):
    """Too many paths exploded in the SDE simulation."""


class StepFailure(NumericalError):
    """A time-stepping run aborted; carries the partial result."""

    def __init__(self, message, time, partial=None, cause=None):
        super().__init__(message)
        self.time = time
        self.partial = partial
        self.cause = cause
