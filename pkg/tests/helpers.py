"""Shared oracles for the test suite."""

import math

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from ipwpower.propensity import LogitNormalPropensity


def logitnormal_by_scipy(mu, s2):
    """Logit-normal law with arm moments from scipy quadrature."""
    s = math.sqrt(s2)
    dens = stats.norm(mu, s).pdf
    lo, hi = mu - 14 * s, mu + 14 * s
    means, variances = [], []
    mass1 = None
    for sign in (-1.0, 1.0):
        mass = integrate.quad(lambda w: expit(sign * w) * dens(w), lo, hi, epsabs=1e-14, limit=200)[0]
        m1 = integrate.quad(lambda w: w * expit(sign * w) * dens(w), lo, hi, epsabs=1e-14, limit=200)[0] / mass
        m2 = integrate.quad(lambda w: (w - m1) ** 2 * expit(sign * w) * dens(w), lo, hi, epsabs=1e-14, limit=200)[0] / mass
        means.append(m1)
        variances.append(m2)
        if sign > 0:
            mass1 = mass
    return LogitNormalPropensity(mu, s2, tuple(means), tuple(variances), mass1)


def eq3_integrand_mean(m, ps, h=None, rng=None, draws=10_000_000, chunk=2_000_000):
    """Monte Carlo of E[(Y(1)-xi1)^2 h^2/e + (Y(0)-xi0)^2 h^2/(1-e)] under the latent model.

    Returns (estimate, standard error).  ``h=None`` means h = 1.
    """
    total = 0.0
    total_sq = 0.0
    xi1 = m.a1 * ps.mu_e + m.mu1
    xi0 = m.a0 * ps.mu_e + m.mu0
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        w = rng.normal(ps.mu_e, math.sqrt(ps.sigma_e2), k)
        y1 = m.a1 * w + rng.normal(m.mu1, math.sqrt(m.sigma1_2), k)
        y0 = m.a0 * w + rng.normal(m.mu0, math.sqrt(m.sigma0_2), k)
        v = (y1 - xi1) ** 2 * (1 + np.exp(-w)) + (y0 - xi0) ** 2 * (1 + np.exp(w))
        total += v.sum()
        total_sq += (v * v).sum()
        done += k
    mean = total / draws
    var = total_sq / draws - mean * mean
    return mean, math.sqrt(var / draws)


def generic_sandwich(y, z, xt, alpha_hat, h, eps=1e-6):
    """Var(tau-hat) from the full stacked system A^{-1} B A^{-T} / n.

    Parameters are (xi1, xi0, alpha); A is the numerical Jacobian of the
    mean estimating function, so nothing here reuses the closed-form blocks.
    """
    n = y.size

    def psi(theta):
        xi1, xi0, alpha = theta[0], theta[1], theta[2:]
        e = expit(xt @ alpha)
        w1, w0 = h.weights(e)
        return np.column_stack([z * w1 * (y - xi1), (1 - z) * w0 * (y - xi0), xt * (z - e)[:, None]])

    e = expit(xt @ alpha_hat)
    w1, w0 = h.weights(e)
    xi1 = np.sum(z * w1 * y) / np.sum(z * w1)
    xi0 = np.sum((1 - z) * w0 * y) / np.sum((1 - z) * w0)
    theta = np.concatenate([[xi1, xi0], alpha_hat])
    p = theta.size
    a = np.empty((p, p))
    for j in range(p):
        step = np.zeros(p)
        step[j] = eps
        a[:, j] = -(psi(theta + step).mean(axis=0) - psi(theta - step).mean(axis=0)) / (2 * eps)
    phi = psi(theta)
    b = phi.T @ phi / n
    ainv = np.linalg.inv(a)
    cov = ainv @ b @ ainv.T / n
    c = np.zeros(p)
    c[0], c[1] = 1.0, -1.0
    return float(c @ cov @ c)
