"""From (treatment proportion, overlap) to a propensity-score law.

A Beta(a, b) propensity law is pinned down by ``r = a / (a + b)`` and the
Bhattacharyya overlap ``phi`` between the arm-conditional score
densities.  Writing ``a = k r`` and ``b = k (1 - r)`` leaves a single
unknown ``k``; ``phi(k)`` is increasing on ``k > max(1/(2r), 1/(2(1-r)))``
so it is found by bisection.  The Beta law is then mapped to the
logit-normal law ``expit(W)``, ``W ~ N(mu_e, sigma_e2)``, whose digamma /
trigamma moments match, and the arm-conditional mean and variance of
``W`` are obtained by quadrature.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, DomainError, InfeasibleOverlapError
from .quadrature import DEFAULT_SETTINGS, GaussianWeight, logistic_tilted_moment
from .specialfn import digamma, log_gamma_half_ratio, trigamma

#: Overlaps at or above ``1 - DEGENERATE_GAP`` are treated as randomized.
DEGENERATE_GAP = 1e-9
K_CAP = 1e12


@dataclass(frozen=True)
class OverlapSpec:
    """User-level treatment structure: proportion treated and overlap."""

    r: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and 0.0 < self.r < 1.0):
            raise DomainError(f"r must lie in (0, 1), got {self.r}")
        if not (math.isfinite(self.phi) and 0.0 < self.phi <= 1.0):
            raise DomainError(f"phi must lie in (0, 1], got {self.phi}")

    @property
    def degenerate(self):
        return self.phi >= 1.0 - DEGENERATE_GAP


@dataclass(frozen=True)
class BetaPropensity:
    """Beta(a, b) law of the propensity score.

    ``degenerate=True`` marks the ``k -> inf`` limit of
    ``Beta(k r, k (1 - r))``, a point mass at ``r``.  In that case ``a`` and
    ``b`` hold ``r`` and ``1 - r`` so that ``a / (a + b)`` is still ``r``.
    """

    a: float
    b: float
    degenerate: bool = False

    def __post_init__(self):
        if not (self.a > 0.0 and self.b > 0.0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise DomainError(f"Beta parameters must be finite and > 0, got ({self.a}, {self.b})")

    @classmethod
    def point_mass(cls, r):
        return cls(a=r, b=1.0 - r, degenerate=True)

    @property
    def r(self):
        return self.a / (self.a + self.b)

    @property
    def k(self):
        return math.inf if self.degenerate else self.a + self.b


@dataclass(frozen=True)
class LogitNormalPropensity:
    """Logit-normal propensity law with per-arm moments of ``W``.

    ``cond_mean[z]`` and ``cond_var[z]`` are ``E[W | Z=z]`` and
    ``V[W | Z=z]``; index 0 is control, index 1 is treated.  ``r`` is the
    treated fraction implied by the law itself, ``E[expit(W)]``.
    """

    mu_e: float
    sigma_e2: float
    cond_mean: tuple
    cond_var: tuple
    r: float

    @property
    def degenerate(self):
        return self.sigma_e2 == 0.0

    @property
    def weight(self):
        return GaussianWeight(self.mu_e, self.sigma_e2)


def _phi_of_k(k, r):
    return math.exp(log_gamma_half_ratio(k * r) + log_gamma_half_ratio(k * (1.0 - r)))


def overlap_from_beta(p):
    """Bhattacharyya overlap of the arm-conditional densities of Beta(a, b).

    Closed form ``Gamma(a+1/2) Gamma(b+1/2) / (sqrt(ab) Gamma(a) Gamma(b))``,
    evaluated in log space.
    """
    if p.degenerate:
        return 1.0
    return math.exp(log_gamma_half_ratio(p.a) + log_gamma_half_ratio(p.b))


def min_overlap(r):
    """Smallest overlap reachable inside the region where ``phi(k)`` is monotone."""
    k_lo = max(0.5 / r, 0.5 / (1.0 - r)) * (1.0 + 1e-12)
    return _phi_of_k(k_lo, r)


def solve_beta(spec, tol=1e-10):
    """Solve for the Beta law with proportion ``spec.r`` and overlap ``spec.phi``.

    Parameters
    ----------
    spec : OverlapSpec
    tol : float
        Absolute tolerance on the attained overlap; at most ``1e-4``.

    Returns
    -------
    BetaPropensity
        ``(k r, k (1 - r))``; flagged degenerate when ``phi`` is 1 to within
        ``DEGENERATE_GAP``.

    Raises
    ------
    InfeasibleOverlapError
        If ``phi`` is below :func:`min_overlap` at this ``r`` or would need
        ``k`` beyond ``K_CAP``.
    """
    if not 0.0 < tol <= 1e-4:
        raise DomainError(f"tol must lie in (0, 1e-4], got {tol}")
    r, phi = spec.r, spec.phi
    if spec.degenerate:
        return BetaPropensity.point_mass(r)

    k_lo = max(0.5 / r, 0.5 / (1.0 - r)) * (1.0 + 1e-12)
    phi_lo = _phi_of_k(k_lo, r)
    if phi < phi_lo:
        raise InfeasibleOverlapError(
            f"phi={phi} is below the minimum attainable overlap {phi_lo:.6f} at r={r}",
            r=r,
            phi=phi,
            phi_min=phi_lo,
        )
    if phi - phi_lo <= tol:
        return BetaPropensity(k_lo * r, k_lo * (1.0 - r))

    k_hi = 2.0 * k_lo
    while _phi_of_k(k_hi, r) < phi:
        k_lo = k_hi
        k_hi *= 2.0
        if k_hi > K_CAP:
            raise InfeasibleOverlapError(
                f"phi={phi} needs k > {K_CAP:g}; treat it as 1 instead",
                r=r,
                phi=phi,
                phi_min=phi_lo,
            )

    for _ in range(400):
        k_mid = 0.5 * (k_lo + k_hi)
        gap = _phi_of_k(k_mid, r) - phi
        if abs(gap) <= tol:
            return BetaPropensity(k_mid * r, k_mid * (1.0 - r))
        if gap < 0.0:
            k_lo = k_mid
        else:
            k_hi = k_mid
        if k_hi - k_lo <= 4.0 * math.ulp(k_hi):
            break
    k_mid = 0.5 * (k_lo + k_hi)
    if abs(_phi_of_k(k_mid, r) - phi) <= tol:
        return BetaPropensity(k_mid * r, k_mid * (1.0 - r))
    raise ConvergenceError("bisection on k stalled", estimate=k_mid)


def beta_to_logitnormal(p, q=DEFAULT_SETTINGS):
    """Moment-matched logit-normal law for a Beta(a, b) propensity.

    ``mu_e = psi(a) - psi(b)`` and ``sigma_e2 = psi'(a) + psi'(b)``; the
    per-arm moments of ``W`` come from ratios of tilted Gaussian moments.
    """
    if p.degenerate:
        logit_r = math.log(p.r) - math.log1p(-p.r)
        return LogitNormalPropensity(
            mu_e=logit_r,
            sigma_e2=0.0,
            cond_mean=(logit_r, logit_r),
            cond_var=(0.0, 0.0),
            r=p.r,
        )
    mu = digamma(p.a) - digamma(p.b)
    sigma2 = trigamma(p.a) + trigamma(p.b)
    w = GaussianWeight(mu, sigma2)
    means = []
    variances = []
    mass1 = None
    for z in (0, 1):
        # Moments are taken about mu_e to avoid cancellation in the variance.
        m0 = logistic_tilted_moment(0, z, w, q)
        m1 = logistic_tilted_moment(1, z, w, q, center=mu)
        m2 = logistic_tilted_moment(2, z, w, q, center=mu)
        shift = m1 / m0
        means.append(mu + shift)
        variances.append(max(m2 / m0 - shift * shift, 0.0))
        if z == 1:
            mass1 = m0
    return LogitNormalPropensity(
        mu_e=mu,
        sigma_e2=sigma2,
        cond_mean=tuple(means),
        cond_var=tuple(variances),
        r=mass1,
    )


@lru_cache(maxsize=512)
def propensity_law(r, phi, tol=1e-10):
    """Cached ``(BetaPropensity, LogitNormalPropensity)`` for ``(r, phi)``."""
    beta = solve_beta(OverlapSpec(r, phi), tol)
    return beta, beta_to_logitnormal(beta)


def overlap_from_scores(scores, r):
    """Plug-in overlap from fitted propensity scores.

    ``mean(sqrt(e (1 - e))) / sqrt(r (1 - r))``, i.e. the overlap integral
    taken against the empirical distribution of the scores.
    """
    e = np.asarray(scores, dtype=float).ravel()
    if e.size == 0:
        raise DomainError("scores must be non-empty")
    if not np.all((e > 0.0) & (e < 1.0)):
        raise DomainError("scores must lie strictly inside (0, 1)")
    if not 0.0 < r < 1.0:
        raise DomainError(f"r must lie in (0, 1), got {r}")
    return float(np.mean(np.sqrt(e * (1.0 - e))) / math.sqrt(r * (1.0 - r)))
