"""Exception types shared across the package.

Each error class maps to one CLI exit code so that numerical resolution
limits are never confused with unmet mathematical hypotheses.
"""


class LabError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(LabError, ValueError):
    """Invalid arguments, configuration or preconditions (exit code 1)."""

    exit_code = 1


class ScaleError(UsageError):
    """A scale sequence violates the lacunarity requirement."""


class HypothesisError(LabError):
    """A mathematical hypothesis required by an operation is not met (exit 2)."""

    exit_code = 2


class ResolutionError(LabError):
    """The grid is too coarse to represent the requested scale (exit 3)."""

    exit_code = 3


class BudgetExhausted(LabError):
    """A sampling budget ran out before a hit was found."""

    exit_code = 2


class ScalesExhausted(ResolutionError):
    """A scale list ran out before an iterative construction terminated.

    ``trace`` carries the diagnostic record (for example the energy trace).
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
