"""Latent outcome model ``Y(z) = a_z W + eps_z`` from observed-arm summaries."""

import math
from dataclasses import dataclass

from .errors import BoundViolationError, DomainError, InconsistencyError


@dataclass(frozen=True)
class RSquaredBound:
    """R-squared of the outcome-on-covariates regression; bounds ``rho**2``."""

    r2: float

    def __post_init__(self):
        if not (math.isfinite(self.r2) and 0.0 <= self.r2 < 1.0):
            raise DomainError(f"R-squared bound must lie in [0, 1), got {self.r2}")


@dataclass(frozen=True)
class OutcomeSummary:
    """Observed outcome summaries per arm.

    ``e*`` are arm means, ``s*_2`` arm variances and ``rho*`` the within-arm
    correlations between the outcome and the propensity linear predictor.
    """

    e1: float
    e0: float
    s1_2: float
    s0_2: float
    rho1: float
    rho0: float

    def __post_init__(self):
        for name in ("s1_2", "s0_2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise DomainError(f"{name} must be finite and > 0, got {value}")
        for name in ("rho1", "rho0"):
            value = getattr(self, name)
            if not -1.0 < value < 1.0:
                raise DomainError(f"{name} must lie in (-1, 1), got {value}")

    @classmethod
    def pooled(cls, s2, rho, e1=0.0, e0=0.0):
        """Common variance and correlation in both arms."""
        return cls(e1=e1, e0=e0, s1_2=s2, s0_2=s2, rho1=rho, rho0=rho)

    @classmethod
    def binary(cls, mean_y, rho, e1=None, e0=None):
        """Binary outcome treated through the linear model, ``S**2 = p (1 - p)``."""
        if not 0.0 < mean_y < 1.0:
            raise DomainError(f"binary outcome mean must lie in (0, 1), got {mean_y}")
        s2 = mean_y * (1.0 - mean_y)
        return cls.pooled(s2, rho, mean_y if e1 is None else e1, mean_y if e0 is None else e0)

    def s2(self, z):
        return self.s1_2 if z == 1 else self.s0_2

    def rho(self, z):
        return self.rho1 if z == 1 else self.rho0

    def mean(self, z):
        return self.e1 if z == 1 else self.e0


@dataclass(frozen=True)
class OutcomeModel:
    """Slopes on ``W`` and residual law ``eps_z ~ N(mu_z, sigma_z2)`` per arm."""

    a1: float
    a0: float
    mu1: float
    mu0: float
    sigma1_2: float
    sigma0_2: float

    def slope(self, z):
        return self.a1 if z == 1 else self.a0

    def resid_mean(self, z):
        return self.mu1 if z == 1 else self.mu0

    def resid_var(self, z):
        return self.sigma1_2 if z == 1 else self.sigma0_2


def rho_bound_check(rho2, bound):
    """True when ``rho2`` does not exceed the R-squared bound."""
    if not 0.0 <= rho2 < 1.0:
        raise DomainError(f"rho2 must lie in [0, 1), got {rho2}")
    return rho2 <= bound.r2


def solve_outcome_model(s, ps, bound=None):
    """Solve ``(a_z, mu_z, sigma_z2)`` from observed summaries.

    ``a_z = rho_z * sqrt(S_z2 / V[W | Z=z])`` so that the arm variance
    decomposes as ``a_z**2 V[W | Z=z] + sigma_z2 = S_z2``.

    Raises
    ------
    InconsistencyError
        If an arm has ``V[W | Z=z] = 0`` but a non-zero correlation.
    BoundViolationError
        If ``rho_z**2`` exceeds ``bound.r2``.
    """
    params = {}
    for z in (0, 1):
        rho = s.rho(z)
        if bound is not None and rho * rho > bound.r2:
            raise BoundViolationError(
                f"rho{z}^2 = {rho * rho:.4g} exceeds the R-squared bound {bound.r2:.4g}"
            )
        cond_var = ps.cond_var[z]
        if cond_var <= 0.0:
            if rho != 0.0:
                raise InconsistencyError(
                    f"arm {z}: W is constant given Z, so it cannot correlate with Y (rho={rho})"
                )
            a = 0.0
        else:
            a = rho * math.sqrt(s.s2(z) / cond_var)
        params[z] = (a, s.mean(z) - a * ps.cond_mean[z], (1.0 - rho * rho) * s.s2(z))
    return OutcomeModel(
        a1=params[1][0],
        a0=params[0][0],
        mu1=params[1][1],
        mu0=params[0][1],
        sigma1_2=params[1][2],
        sigma0_2=params[0][2],
    )
