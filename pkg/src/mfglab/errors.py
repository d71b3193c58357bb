"""Exception types shared by all mfglab modules.

The command line maps these onto exit codes, so solvers should raise the
most specific type that applies rather than bare ValueError.
"""


class MfgError(Exception):
    """Base class for all errors raised by mfglab."""


class ConfigurationError(MfgError):
    """Invalid or inconsistent run parameters (bad grids, mismatched shapes,
    unknown config keys).  CLI exit code 2."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        # optional list of individual problem strings, reported all at once
        self.problems = list(problems) if problems else [message]


class DomainError(MfgError):
    """Arguments outside the mathematical domain of an operation
    (empty measures, t outside [0, T], nonpositive data where positive is
    required).  CLI exit code 2."""


class ConvergenceError(MfgError):
    """A fixed-point or iterative solve failed to reach tolerance.
    Carries the residual history so the failure can be diagnosed.
    CLI exit code 3."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = (
            [] if residual_history is None else list(residual_history))


class AssumptionError(MfgError):
    """Model data violates a standing assumption needed for well-posedness
    (for instance a mean-field coupling strong enough to destroy weak
    monotonicity).  CLI exit code 4."""
