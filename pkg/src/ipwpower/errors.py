"""Exception types raised across the package."""

from numpy.linalg import LinAlgError


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(RuntimeError):
    """An iterative routine stopped before meeting its tolerance.

    The best available estimate and its error bound are kept on the
    instance so callers can decide whether to use them anyway.
    """

    def __init__(self, message, estimate=None, error=None, trace=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error
        self.trace = trace


class InfeasibleOverlapError(ValueError):
    """The requested overlap is below what is attainable at the given r."""

    def __init__(self, message, r, phi, phi_min):
        super().__init__(message)
        self.r = r
        self.phi = phi
        self.phi_min = phi_min


class InconsistencyError(ValueError):
    """Inputs that cannot describe a single joint distribution."""


class BoundViolationError(ValueError):
    """A correlation exceeds the R-squared bound supplied with it."""


class RankDeficiencyError(LinAlgError):
    """A moment matrix that must be inverted is singular."""


class EstimationError(RuntimeError):
    """A weighting estimate could not be formed (e.g. an empty arm)."""
