"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigurationError` (and its subclasses) to exit code 1
and :class:`AnalysisError` (and its subclasses) to exit code 2.
"""


class AFCError(Exception):
    """Base class for every error raised by afcsim."""


class ConfigurationError(AFCError):
    """Grids, pulses or scenario settings are inconsistent."""


class ConstraintError(ConfigurationError):
    """A physical construction constraint is violated (comb vs pit, splitting, probe window)."""


class DomainError(AFCError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AnalysisError(AFCError):
    """Data cannot support the requested analysis."""


class FitError(AnalysisError):
    """A least-squares fit failed; ``best`` holds the last iterate (or None)."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
