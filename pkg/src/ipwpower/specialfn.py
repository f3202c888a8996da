"""Log-gamma, digamma and trigamma for positive real arguments.

Arguments are shifted upward with the recurrences until they exceed
``_SHIFT_TO`` and then evaluated with the Stirling / asymptotic series.
``log_gamma`` additionally uses a Taylor expansion around its two roots
(x = 1 and x = 2) so that the relative error stays small there.
"""

import math

from .errors import DomainError

_SHIFT_TO = 10.0

# B_2, B_4, ..., B_20
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)

_EULER_GAMMA = 0.57721566490153286061
_HALF_LOG_2PI = 0.91893853320467274178


def _zeta(s):
    # Euler-Maclaurin with N = 12; adequate to ~1e-18 for integer s >= 2.
    n_terms = 12
    total = math.fsum(n ** -s for n in range(1, n_terms))
    total += n_terms ** (1 - s) / (s - 1) + 0.5 * n_terms ** -s
    rising = s
    power = n_terms ** (-s - 1)
    for j, b in enumerate(_BERNOULLI[:6], start=1):
        total += b / math.factorial(2 * j) * rising * power
        rising *= (s + 2 * j - 1) * (s + 2 * j)
        power /= n_terms * n_terms
    return total


# Coefficients of log Gamma(1 + e) = -gamma*e + sum_{k>=2} c_k e^k.
_LGAMMA1P_COEFS = tuple((-1) ** k * _zeta(k) / k for k in range(2, 40))
_ROOT_RADIUS = 0.25


def _check(x):
    if not isinstance(x, (int, float)) or isinstance(x, bool):
        x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"argument must be finite and > 0, got {x!r}")
    return float(x)


def _lgamma1p(eps):
    acc = 0.0
    for c in reversed(_LGAMMA1P_COEFS):
        acc = acc * eps + c
    return eps * (eps * acc - _EULER_GAMMA)


def _stirling(x):
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    term = inv
    for k, b in enumerate(_BERNOULLI, start=1):
        series += b / (2 * k * (2 * k - 1)) * term
        term *= inv2
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + series


def log_gamma(x):
    """Natural logarithm of the gamma function for ``x > 0``.

    Raises
    ------
    DomainError
        If ``x`` is not finite or not strictly positive.
    """
    x = _check(x)
    if abs(x - 1.0) <= _ROOT_RADIUS:
        return _lgamma1p(x - 1.0)
    if abs(x - 2.0) <= _ROOT_RADIUS:
        eps = x - 2.0
        return _lgamma1p(eps) + math.log1p(eps)
    if x >= _SHIFT_TO:
        return _stirling(x)
    prod = 1.0
    y = x
    while y < _SHIFT_TO:
        prod *= y
        y += 1.0
    return _stirling(y) - math.log(prod)


def digamma(x):
    """Digamma function psi(x) = d/dx log Gamma(x) for ``x > 0``."""
    x = _check(x)
    shift = 0.0
    while x < _SHIFT_TO:
        shift += 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    term = inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        series += b / (2 * k) * term
        term *= inv2
    return math.log(x) - 0.5 / x - series - shift


def _split(a):
    t = 134217729.0 * a  # 2**27 + 1
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _inv_square(x):
    # 1/x**2 as an unevaluated sum hi + lo, accurate well beyond one ulp.
    s, se = _two_prod(x, x)
    r = 1.0 / s
    p, pe = _two_prod(r, s)
    resid = (1.0 - p) - pe - r * se
    return r, r * resid


def trigamma(x):
    """Trigamma function psi'(x) for ``x > 0``."""
    x = _check(x)
    if x < 1.0:
        # The leading 1/x**2 dominates; add the remainder before rounding it.
        hi, lo = _inv_square(x)
        return hi + (lo + trigamma(x + 1.0))
    shift = 0.0
    while x < _SHIFT_TO:
        shift += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    term = inv2 * inv
    for b in _BERNOULLI:
        series += b * term
        term *= inv2
    return shift + inv + 0.5 * inv2 + series


def log_gamma_half_ratio(x):
    """``log(Gamma(x + 1/2) / (sqrt(x) * Gamma(x)))`` for ``x > 0``.

    Computed from its own asymptotic series for large ``x``, where the
    difference of two log-gamma values would cancel catastrophically.
    """
    x = _check(x)
    shift = 0.0
    while x < _SHIFT_TO:
        shift += 0.5 * math.log1p(1.0 / x) - math.log1p(0.5 / x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    total = 0.0
    term = inv
    for k, b in enumerate(_BERNOULLI, start=1):
        total += (2.0 ** (1 - 2 * k) - 2.0) * b / (2 * k * (2 * k - 1)) * term
        term *= inv2
    return total + shift
