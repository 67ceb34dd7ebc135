"""Exception hierarchy shared by the solvers and the CLI."""


class ThresholdError(Exception):
    """Base class for all package errors."""

    code = "error"


class DomainError(ThresholdError, ValueError):
    code = "domain"


class ConvergenceError(ThresholdError, ArithmeticError):
    """Raised when an iterative method fails to meet its tolerance.

    ``bracket`` carries the last (lo, hi) interval when one exists.
    """

    code = "convergence"

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class BracketError(ConvergenceError):
    code = "bracket"


class DivergenceError(ConvergenceError):
    code = "divergence"


class ResolutionError(ThresholdError):
    code = "resolution"


class ReliabilityError(ThresholdError):
    """Monte-Carlo estimate too censored to be trusted."""

    code = "reliability"

    def __init__(self, message, censored_fraction=None):
        super().__init__(message)
        self.censored_fraction = censored_fraction


class EmptyPathError(DomainError):
    code = "empty-path"
