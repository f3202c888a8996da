"""Asymptotic variance of Hajek weighting estimators.

``ate_variance_std`` is the closed form for the ATE in units of the pooled
outcome variance; ``ate_variance_raw`` is the same quantity before
standardisation.  ``wate_variance`` handles general tilting functions
(ATE, ATT, ATO) by one-dimensional quadrature.  ``hajek_sandwich_variance``
is the empirical M-estimation counterpart used on simulated data.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, EstimationError, InconsistencyError, RankDeficiencyError
from .quadrature import QuadratureSettings, gaussian_expectation

#: Quadrature settings for variance integrals.  The ``1/expit`` factors tilt
#: the Gaussian by up to ``sigma_e2``, so the truncation is wider than default.
VARIANCE_SETTINGS = QuadratureSettings(truncation_radius=12.0)


class Estimand(str, enum.Enum):
    ATE = "ate"
    ATT = "att"
    ATO = "ato"


class WateDenominator(str, enum.Enum):
    """Normalisation of the WATE variance.

    ``SQUARED_MEAN`` divides by ``E[h]**2``, which is what the M-estimation
    sandwich gives.  ``SECOND_MOMENT`` divides by ``E[h**2]``; it
    reproduces the published ATT/ATO design tables.  Both agree for the ATE.
    """

    SQUARED_MEAN = "squared_mean"
    SECOND_MOMENT = "second_moment"


@dataclass(frozen=True)
class TiltingFunction:
    """Tilting function ``h`` of the target population.

    ``h = 1`` (ATE), ``h = e`` (ATT) or ``h = e (1 - e)`` (ATO), where
    ``e = expit(W)`` is the propensity score.
    """

    kind: Estimand = Estimand.ATE

    def __post_init__(self):
        object.__setattr__(self, "kind", Estimand(self.kind))

    def h_of_e(self, e):
        e = np.asarray(e, dtype=float)
        if self.kind is Estimand.ATE:
            return np.ones_like(e)
        if self.kind is Estimand.ATT:
            return e
        return e * (1.0 - e)

    def h_of_w(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind is Estimand.ATE:
            return np.ones_like(w)
        if self.kind is Estimand.ATT:
            return expit(w)
        return expit(w) * expit(-w)

    def weights(self, e):
        """Arm weights ``(h/e, h/(1-e))``."""
        e = np.asarray(e, dtype=float)
        if self.kind is Estimand.ATE:
            return 1.0 / e, 1.0 / (1.0 - e)
        if self.kind is Estimand.ATT:
            return np.ones_like(e), e / (1.0 - e)
        return 1.0 - e, e.copy()

    def weight_slopes(self, e):
        """Derivatives of the arm weights with respect to the logit of ``e``."""
        e = np.asarray(e, dtype=float)
        if self.kind is Estimand.ATE:
            return -(1.0 - e) / e, e / (1.0 - e)
        if self.kind is Estimand.ATT:
            return np.zeros_like(e), e / (1.0 - e)
        g = e * (1.0 - e)
        return -g, g


@dataclass(frozen=True)
class VarianceBreakdown:
    """Standardised variance ``v_total = v_sh + rho2 * v_adj``."""

    v_total: float
    v_sh: float
    v_adj: float
    rho2: float = 0.0


def _check_rho2(rho2):
    if not (math.isfinite(rho2) and 0.0 <= rho2 < 1.0):
        raise DomainError(f"rho2 must lie in [0, 1), got {rho2}")


def ate_variance_std(ps, rho2):
    """Closed-form standardised ATE variance for a logit-normal propensity law.

    With ``t1 = exp(-mu_e + sigma_e2/2)``, ``t0 = exp(mu_e + sigma_e2/2)``
    and ``c = sigma_e2 (sigma_e2 + 1)``::

        V = rho2 (s/v1 + s/v0) + 2 (1 - rho2)
            + (rho2 c / v1 + 1 - rho2) t1 + (rho2 c / v0 + 1 - rho2) t0

    where ``s = sigma_e2`` and ``vz = V[W | Z=z]``.  A point-mass law
    (``sigma_e2 = 0``) takes the continuous limit, ``2 + t1 + t0``.
    """
    _check_rho2(rho2)
    mu, s2 = ps.mu_e, ps.sigma_e2
    t1 = math.exp(-mu + 0.5 * s2)
    t0 = math.exp(mu + 0.5 * s2)
    v_sh = 2.0 + t1 + t0
    if ps.degenerate:
        return VarianceBreakdown(v_total=v_sh, v_sh=v_sh, v_adj=0.0, rho2=rho2)
    v1, v0 = ps.cond_var[1], ps.cond_var[0]
    if v1 <= 0.0 or v0 <= 0.0:
        if rho2 > 0.0:
            raise InconsistencyError("zero conditional variance of W with sigma_e2 > 0 and rho2 > 0")
        return VarianceBreakdown(v_total=v_sh, v_sh=v_sh, v_adj=0.0, rho2=rho2)
    c = s2 * (s2 + 1.0)
    v_adj = s2 / v1 + s2 / v0 - 2.0 + (c / v1 - 1.0) * t1 + (c / v0 - 1.0) * t0
    return VarianceBreakdown(v_total=v_sh + rho2 * v_adj, v_sh=v_sh, v_adj=v_adj, rho2=rho2)


def ate_variance_raw(m, ps):
    """ATE variance in squared outcome units for a solved outcome model."""
    mu, s2 = ps.mu_e, ps.sigma_e2
    t1 = math.exp(-mu + 0.5 * s2)
    t0 = math.exp(mu + 0.5 * s2)
    c = s2 * (s2 + 1.0)
    return (
        (m.a1 ** 2 + m.a0 ** 2) * s2
        + (m.sigma1_2 + m.sigma0_2)
        + (m.a1 ** 2 * c + m.sigma1_2) * t1
        + (m.a0 ** 2 * c + m.sigma0_2) * t0
    )


def _expect(f, ps, q):
    if ps.degenerate:
        return float(np.asarray(f(np.array([ps.mu_e])), dtype=float).ravel()[0])
    return gaussian_expectation(f, ps.weight, q)


def wate_components(h, ps, q=VARIANCE_SETTINGS):
    """Gaussian integrals that make up the WATE variance.

    Returns a dict with ``mean_h = E[h]``, ``mean_h2 = E[h**2]``,
    ``center = E[h W] / E[h]`` and, per arm ``z``,
    ``slope[z] = E[(W - center)**2 h**2 / P(Z=z | W)]`` and
    ``resid[z] = E[h**2 / P(Z=z | W)]``.
    """
    mean_h = _expect(h.h_of_w, ps, q)
    mean_h2 = _expect(lambda w: h.h_of_w(w) ** 2, ps, q)
    center = _expect(lambda w: h.h_of_w(w) * w, ps, q) / mean_h

    def inv_prob(z):
        # 1 / expit(+/-w) = 1 + exp(-/+w)
        return (lambda w: 1.0 + np.exp(-w)) if z == 1 else (lambda w: 1.0 + np.exp(w))

    slope = {}
    resid = {}
    for z in (0, 1):
        inv = inv_prob(z)
        resid[z] = _expect(lambda w, inv=inv: h.h_of_w(w) ** 2 * inv(w), ps, q)
        slope[z] = _expect(lambda w, inv=inv: (w - center) ** 2 * h.h_of_w(w) ** 2 * inv(w), ps, q)
    return {"mean_h": mean_h, "mean_h2": mean_h2, "center": center, "slope": slope, "resid": resid}


def _denominator(comp, denominator):
    denominator = WateDenominator(denominator)
    if denominator is WateDenominator.SQUARED_MEAN:
        return comp["mean_h"] ** 2
    return comp["mean_h2"]


def wate_variance(h, m, ps, q=VARIANCE_SETTINGS, denominator=WateDenominator.SQUARED_MEAN):
    """WATE variance in squared outcome units.

    ``sum_z [a_z**2 slope[z] + sigma_z2 resid[z]] / D`` with ``D`` chosen by
    ``denominator`` (see :class:`WateDenominator`).
    """
    comp = wate_components(h, ps, q)
    num = 0.0
    for z in (0, 1):
        num += m.slope(z) ** 2 * comp["slope"][z] + m.resid_var(z) * comp["resid"][z]
    return num / _denominator(comp, denominator)


def wate_variance_std(h, ps, rho2, q=VARIANCE_SETTINGS, denominator=WateDenominator.SECOND_MOMENT):
    """Standardised WATE variance under pooled inputs (``S**2 = 1``).

    Linear in ``rho2``; returned as a :class:`VarianceBreakdown`.  A
    point-mass propensity law has ``v_adj = 0``.
    """
    _check_rho2(rho2)
    comp = wate_components(h, ps, q)
    den = _denominator(comp, denominator)
    v_sh = (comp["resid"][0] + comp["resid"][1]) / den
    if ps.degenerate:
        return VarianceBreakdown(v_total=v_sh, v_sh=v_sh, v_adj=0.0, rho2=rho2)
    adj = 0.0
    for z in (0, 1):
        cv = ps.cond_var[z]
        if cv <= 0.0:
            if rho2 > 0.0:
                raise InconsistencyError("zero conditional variance of W with rho2 > 0")
            continue
        adj += comp["slope"][z] / cv - comp["resid"][z]
    v_adj = adj / den
    return VarianceBreakdown(v_total=v_sh + rho2 * v_adj, v_sh=v_sh, v_adj=v_adj, rho2=rho2)


def hajek_point(y, z, e, h):
    """Hajek weighting estimate and the two arm means ``(tau, xi1, xi0)``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    w1, w0 = h.weights(e)
    d1 = np.sum(z * w1)
    d0 = np.sum((1.0 - z) * w0)
    if not (d1 > 0.0 and d0 > 0.0):
        raise EstimationError("an arm is empty or carries zero total weight")
    xi1 = float(np.sum(z * w1 * y) / d1)
    xi0 = float(np.sum((1.0 - z) * w0 * y) / d0)
    return xi1 - xi0, xi1, xi0


def hajek_sandwich_variance(y, z, e, h, covariates=None):
    """Empirical sandwich variance of the Hajek estimate (variance of tau-hat).

    Parameters
    ----------
    y, z, e : array_like
        Outcomes, treatment indicators and propensity scores.
    h : TiltingFunction
    covariates : array_like, optional
        Covariates of a logistic propensity model fitted by maximum
        likelihood, with ``e = expit(b0 + X b)``.  If omitted the scores
        are taken as known and the variance is ``(b11/a11**2 + b22/a22**2)/n``.

    Notes
    -----
    With estimated scores the stacked estimating equations are the two
    weighted arm-mean equations and the logistic score ``Xt (Z - e)``.
    The influence direction is ``d = (1/a11, -1/a22, -g)`` with
    ``g = (a13/a11 - a23/a22) a33^{-1}`` and the result is ``d B d' / n``.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    e = np.asarray(e, dtype=float)
    n = y.size
    _, xi1, xi0 = hajek_point(y, z, e, h)
    w1, w0 = h.weights(e)
    r1 = z * w1 * (y - xi1)
    r0 = (1.0 - z) * w0 * (y - xi0)
    a11 = float(np.mean(z * w1))
    a22 = float(np.mean((1.0 - z) * w0))
    if covariates is None:
        b11 = float(np.mean(r1 * r1))
        b22 = float(np.mean(r0 * r0))
        return (b11 / a11 ** 2 + b22 / a22 ** 2) / n

    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    xt = np.column_stack([np.ones(n), x])
    p = xt.shape[1]
    if n < p + 2:
        raise DomainError(f"need at least {p + 2} rows for {p} propensity parameters, got {n}")
    s1, s0 = h.weight_slopes(e)
    a13 = -np.mean((z * (y - xi1) * s1)[:, None] * xt, axis=0)
    a23 = -np.mean(((1.0 - z) * (y - xi0) * s0)[:, None] * xt, axis=0)
    a33 = (xt * (e * (1.0 - e))[:, None]).T @ xt / n
    try:
        g = np.linalg.solve(a33, a13 / a11 - a23 / a22)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            f"propensity information matrix is singular for the {n}x{p} design (intercept + covariates)"
        ) from exc
    if not np.all(np.isfinite(g)) or np.linalg.cond(a33) > 1e14:
        raise RankDeficiencyError(
            f"propensity information matrix is numerically singular for the {n}x{p} design"
        )
    # a33 is symmetric, so g is also the row vector (a13/a11 - a23/a22) a33^{-1}.
    infl = r1 / a11 - r0 / a22 - (xt * (z - e)[:, None]) @ g
    return float(np.mean(infl * infl)) / n
