"""Gaussian-weighted integrals over the real line.

All integrals have the form ``E[f(W)]`` with ``W ~ N(mu, sigma2)``.  The
real line is truncated to ``mu +/- R*sigma`` and integrated with a
vectorised adaptive Simpson rule: every panel whose two half-panel
estimate disagrees with the whole-panel estimate by more than its share
of the tolerance is halved, and accepted panels are Richardson
extrapolated.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DomainError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianWeight:
    """Normal law ``N(mu, sigma2)`` used as the integration weight."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma2)):
            raise DomainError("Gaussian weight parameters must be finite")
        if self.sigma2 <= 0.0:
            raise DomainError(f"sigma2 must be > 0, got {self.sigma2}")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)


@dataclass(frozen=True)
class QuadratureSettings:
    """Tolerances and truncation for :func:`gaussian_expectation`.

    ``truncation_radius`` is measured in standard deviations of the weight.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_subdivisions: int = 200_000
    truncation_radius: float = 8.0
    initial_panels: int = 16

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {value}")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be a positive integer")
        if not self.truncation_radius >= 8.0:
            raise DomainError("truncation_radius must be >= 8")
        if self.initial_panels < 1:
            raise DomainError("initial_panels must be a positive integer")


DEFAULT_SETTINGS = QuadratureSettings()


def _as_values(f, x):
    return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)


def adaptive_simpson(g, lo, hi, abs_tol, rel_tol, max_subdivisions, initial_panels=16):
    """Integrate a vectorised function ``g`` over ``[lo, hi]``.

    Returns ``(value, error_estimate)``.  Raises :class:`ConvergenceError`
    once more than ``max_subdivisions`` panel splits would be needed.
    """
    width = hi - lo
    edges = np.linspace(lo, hi, initial_panels + 1)
    a = edges[:-1]
    b = edges[1:]
    m = 0.5 * (a + b)
    fa = _as_values(g, a)
    fb = _as_values(g, b)
    fm = _as_values(g, m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    accepted = 0.0
    accepted_err = 0.0
    splits = 0
    while a.size:
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = _as_values(g, lm)
        frm = _as_values(g, rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        diff = (left + right - whole) / 15.0

        estimate = accepted + float(np.sum(left + right + diff))
        tol = max(abs_tol, rel_tol * abs(estimate))
        share = tol * (b - a) / width
        ok = np.abs(diff) <= share
        # Panels that cannot be halved further in floating point are accepted.
        ok |= (m <= a) | (b <= m)

        accepted += float(np.sum(left[ok] + right[ok] + diff[ok]))
        accepted_err += float(np.sum(np.abs(diff[ok])))

        bad = ~ok
        n_bad = int(np.count_nonzero(bad))
        if not n_bad:
            break
        splits += n_bad
        if splits > max_subdivisions:
            pending = float(np.sum(left[bad] + right[bad] + diff[bad]))
            raise ConvergenceError(
                f"adaptive Simpson exceeded {max_subdivisions} subdivisions",
                estimate=accepted + pending,
                error=accepted_err + float(np.sum(np.abs(diff[bad]))),
            )
        a, m, b = a[bad], m[bad], b[bad]
        fa, fm, fb = fa[bad], fm[bad], fb[bad]
        lm, rm, flm, frm = lm[bad], rm[bad], flm[bad], frm[bad]
        left, right = left[bad], right[bad]
        a, m, b, fa, fm, fb, whole = (
            np.concatenate([a, m]),
            np.concatenate([lm, rm]),
            np.concatenate([m, b]),
            np.concatenate([fa, fm]),
            np.concatenate([flm, frm]),
            np.concatenate([fm, fb]),
            np.concatenate([left, right]),
        )
    return accepted, accepted_err


def gaussian_expectation(f, w, s=DEFAULT_SETTINGS):
    """Approximate ``E[f(W)]`` for ``W ~ N(w.mu, w.sigma2)``.

    Parameters
    ----------
    f : callable
        Vectorised real function; receives a 1-d ``ndarray`` of abscissae.
    w : GaussianWeight
    s : QuadratureSettings

    Returns
    -------
    float
    """
    mu, sigma = w.mu, w.sigma
    radius = s.truncation_radius

    def g(t):
        return _as_values(f, mu + sigma * t) * np.exp(-0.5 * t * t) * _INV_SQRT_2PI

    value, _ = adaptive_simpson(
        g, -radius, radius, s.abs_tol, s.rel_tol, s.max_subdivisions, s.initial_panels
    )
    return value


def logistic_tilted_moment(m, z, w, s=DEFAULT_SETTINGS, center=0.0):
    """Arm-``z`` tilted moment ``E[(W - center)**m * expit(+/-W)]``.

    The sign inside ``expit`` is ``+`` for the treated arm (``z = 1``) and
    ``-`` for the control arm, so the moment is the Gaussian integral of
    ``x**m`` against the probability of landing in arm ``z``.
    """
    if m not in (0, 1, 2):
        raise DomainError(f"moment order must be 0, 1 or 2, got {m}")
    if z not in (0, 1):
        raise DomainError(f"arm must be 0 or 1, got {z}")
    sign = 1.0 if z == 1 else -1.0
    if m == 0:
        return gaussian_expectation(lambda x: expit(sign * x), w, s)
    return gaussian_expectation(lambda x: (x - center) ** m * expit(sign * x), w, s)
