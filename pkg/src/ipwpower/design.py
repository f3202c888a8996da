"""Sample size and power for weighting-estimator designs.

All effect sizes are standardised, ``tau_std = tau / S`` with ``S**2`` the
pooled outcome variance, and variances are in units of ``S**2``.
"""

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Optional

from scipy.special import ndtr, ndtri

from .errors import (
    BoundViolationError,
    ConvergenceError,
    DomainError,
    InconsistencyError,
    InfeasibleOverlapError,
)
from .outcome import RSquaredBound, rho_bound_check
from .propensity import OverlapSpec, propensity_law
from .variance import (
    Estimand,
    TiltingFunction,
    VarianceBreakdown,
    WateDenominator,
    ate_variance_std,
    wate_variance_std,
)


class Sidedness(str, enum.Enum):
    ONE = "one"
    TWO = "two"


@dataclass(frozen=True)
class DesignInputs:
    """Inputs of a design calculation.

    Parameters
    ----------
    alpha : float
        Type-I error in (0, 0.5).
    beta : float
        Target power in (0.5, 1).
    tau_std : float
        Standardised effect size, > 0.
    overlap : OverlapSpec
    rho2 : float
        Squared within-arm correlation of the outcome with the propensity
        linear predictor, in [0, 1).
    sidedness, estimand
        Two-sided ATE by default.
    r2_bound : RSquaredBound, optional
        Upper bound on ``rho2``.
    v0_override : float, optional
        Standardised variance of the estimator under estimated scores.  When
        given, the sample size uses the two-variance form.
    wate_denominator : WateDenominator
        Normalisation of the ATT/ATO variance; irrelevant for the ATE.
    """

    alpha: float
    beta: float
    tau_std: float
    overlap: OverlapSpec
    rho2: float = 0.0
    sidedness: Sidedness = Sidedness.TWO
    estimand: Estimand = Estimand.ATE
    r2_bound: Optional[RSquaredBound] = None
    v0_override: Optional[float] = None
    wate_denominator: WateDenominator = WateDenominator.SECOND_MOMENT

    def __post_init__(self):
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))
        object.__setattr__(self, "estimand", Estimand(self.estimand))
        object.__setattr__(self, "wate_denominator", WateDenominator(self.wate_denominator))
        if not (math.isfinite(self.alpha) and 0.0 < self.alpha < 0.5):
            raise DomainError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not (math.isfinite(self.beta) and 0.5 < self.beta < 1.0):
            raise DomainError(f"beta must lie in (0.5, 1), got {self.beta}")
        if not (math.isfinite(self.tau_std) and self.tau_std > 0.0):
            raise DomainError(f"tau_std must be finite and > 0, got {self.tau_std}")
        if not (math.isfinite(self.rho2) and 0.0 <= self.rho2 < 1.0):
            raise DomainError(f"rho2 must lie in [0, 1), got {self.rho2}")
        if self.v0_override is not None and not (math.isfinite(self.v0_override) and self.v0_override > 0.0):
            raise DomainError(f"v0_override must be finite and > 0, got {self.v0_override}")
        if self.r2_bound is not None and not rho_bound_check(self.rho2, self.r2_bound):
            raise BoundViolationError(
                f"rho2 = {self.rho2} exceeds the R-squared bound {self.r2_bound.r2}"
            )

    @property
    def z_alpha(self):
        tail = self.alpha / 2.0 if self.sidedness is Sidedness.TWO else self.alpha
        return float(ndtri(1.0 - tail))

    @property
    def z_beta(self):
        return float(ndtri(self.beta))


@dataclass(frozen=True)
class DesignTrace:
    """Intermediate quantities of the propensity chain."""

    a: float
    b: float
    mu_e: float
    sigma_e2: float
    cond_mean: tuple
    cond_var: tuple
    r_implied: float


@dataclass(frozen=True)
class DesignResult:
    n: int
    power: float
    variance: VarianceBreakdown
    trace: DesignTrace


def design_variance(d):
    """Standardised variance and propensity trace for a design."""
    beta_law, ps = propensity_law(d.overlap.r, d.overlap.phi)
    if d.estimand is Estimand.ATE:
        vb = ate_variance_std(ps, d.rho2)
    else:
        vb = wate_variance_std(TiltingFunction(d.estimand), ps, d.rho2, denominator=d.wate_denominator)
    trace = DesignTrace(
        a=beta_law.a,
        b=beta_law.b,
        mu_e=ps.mu_e,
        sigma_e2=ps.sigma_e2,
        cond_mean=ps.cond_mean,
        cond_var=ps.cond_var,
        r_implied=ps.r,
    )
    return vb, trace


def _power(d, v, n):
    v0 = v if d.v0_override is None else d.v0_override
    return float(ndtr(-(d.z_alpha * math.sqrt(v) - d.tau_std * math.sqrt(n)) / math.sqrt(v0)))


def _size(d, v):
    if d.v0_override is None:
        raw = v * (d.z_alpha + d.z_beta) ** 2 / d.tau_std ** 2
    else:
        raw = (d.z_alpha * math.sqrt(v) + d.z_beta * math.sqrt(d.v0_override)) ** 2 / d.tau_std ** 2
    return max(math.ceil(raw), 2)


def sample_size(d):
    """Smallest ``n`` with analytic power at least ``d.beta``.

    ``n = ceil(V (z_q + z_beta)**2 / tau_std**2)``, or
    ``ceil((z_q sqrt(V) + z_beta sqrt(V0))**2 / tau_std**2)`` when
    ``v0_override`` is set.
    """
    vb, trace = design_variance(d)
    n = _size(d, vb.v_total)
    return DesignResult(n=n, power=_power(d, vb.v_total, n), variance=vb, trace=trace)


def power_at(d, n):
    """Analytic power ``1 - Phi((z_q sqrt(V) - tau_std sqrt(n)) / sqrt(V0))``."""
    if isinstance(n, bool) or int(n) != n or n < 2:
        raise DomainError(f"n must be an integer >= 2, got {n}")
    vb, _ = design_variance(d)
    return _power(d, vb.v_total, int(n))


def ztest_size(alpha, beta, r, tau_std, sidedness=Sidedness.TWO):
    """Two-sample z-test size ``ceil((z_q + z_beta)**2 / (r (1 - r) tau_std**2))``."""
    if not 0.0 < r < 1.0:
        raise DomainError(f"r must lie in (0, 1), got {r}")
    d = DesignInputs(alpha=alpha, beta=beta, tau_std=tau_std, overlap=OverlapSpec(r, 1.0), sidedness=sidedness)
    return _size(d, 1.0 / (r * (1.0 - r)))


@dataclass(frozen=True)
class GridCell:
    phi: float
    rho2: float
    result: Optional[DesignResult] = None
    error: Optional[str] = None


_CELL_ERRORS = (
    DomainError,
    InfeasibleOverlapError,
    BoundViolationError,
    InconsistencyError,
    ConvergenceError,
)


def sensitivity_grid(base, phis, rho2s):
    """Evaluate :func:`sample_size` on every ``(phi, rho2)`` pair.

    Rows are sorted by ``phi`` descending, then ``rho2`` ascending.  A cell
    that fails keeps its error message and the rest of the grid proceeds.
    """
    phis = [float(p) for p in phis]
    rho2s = [float(v) for v in rho2s]
    if not phis or not rho2s:
        raise DomainError("phi and rho2 grids must be non-empty")
    cells = []
    for phi in sorted(phis, reverse=True):
        for rho2 in sorted(rho2s):
            try:
                d = dataclasses.replace(base, overlap=OverlapSpec(base.overlap.r, phi), rho2=rho2)
                cells.append(GridCell(phi=phi, rho2=rho2, result=sample_size(d)))
            except _CELL_ERRORS as exc:
                cells.append(GridCell(phi=phi, rho2=rho2, error=f"{type(exc).__name__}: {exc}"))
    return cells
