"""Projection of Fokker-Planck dynamics onto exponential families under the Fisher metric."""

from .errors import (ConditionFViolation, ConfigError, DomainError, NonConvergence,
                     NumericalError, ProjFPEError, SimulationError, SingularFisher,
                     StepFailure, TailError, UsageError)

__version__ = "0.1.0"

__all__ = [
    "ConditionFViolation", "ConfigError", "DomainError", "NonConvergence", "NumericalError",
    "ProjFPEError", "SimulationError", "SingularFisher", "StepFailure", "TailError", "UsageError",
]
