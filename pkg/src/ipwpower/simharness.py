"""Synthetic superpopulation, logistic fits and the empirical power loop.

The superpopulation has ten covariates of mixed type, a logistic treatment
model whose slope vector is scaled by ``kappa`` (larger ``kappa`` means
worse overlap) and Gaussian potential outcomes with a homogeneous effect.
Per-replicate random streams are derived from ``(seed, replicate)`` so
results do not depend on the number of worker threads.
"""

import csv
import enum
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit, ndtri

from .errors import ConvergenceError, DomainError, EstimationError, RankDeficiencyError
from .propensity import overlap_from_scores
from .variance import TiltingFunction, hajek_point, hajek_sandwich_variance

BETA = np.array([1.0, 1.0, -1.0, 0.0, -2.0, 1.0, 0.5, 0.0, 0.0, 0.0])
GAMMA = np.array([1.0, 1.0, -1.0, -1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 1.0])

#: Intercepts giving ``E[Z] = 0.5`` at the tabulated confounding strengths.
BETA0_TABLE = {0.0: 0.0, 0.25: -0.248, 0.5: -0.489, 0.75: -0.722, 0.9: -0.860, 1.0: -0.951}

N_COVARIATES = 10
SCORE_CLAMP = 1e-12


class OutcomeKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class SampleMode(str, enum.Enum):
    """Subsampling protocol of the power loop."""

    WITHOUT_REPLACEMENT = "without_replacement"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class SimulationConfig:
    """Superpopulation and replication settings.

    ``beta0=None`` takes the tabulated intercept for ``kappa`` when there is
    one and otherwise solves for ``E[Z] = 0.5`` on a pilot sample.
    """

    n_pop: int = 1_000_000
    kappa: float = 1.0
    beta0: Optional[float] = None
    tau: float = 1.0
    noise_sd: float = 4.0
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS
    binary_threshold: float = -2.0
    b_reps: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outcome_kind", OutcomeKind(self.outcome_kind))
        if int(self.n_pop) != self.n_pop or self.n_pop < 1000:
            raise DomainError(f"n_pop must be an integer >= 1000, got {self.n_pop}")
        if int(self.b_reps) != self.b_reps or self.b_reps < 1:
            raise DomainError(f"b_reps must be a positive integer, got {self.b_reps}")
        if not (math.isfinite(self.kappa) and self.kappa >= 0.0):
            raise DomainError(f"kappa must be finite and >= 0, got {self.kappa}")
        if not (math.isfinite(self.noise_sd) and self.noise_sd > 0.0):
            raise DomainError(f"noise_sd must be finite and > 0, got {self.noise_sd}")
        if not math.isfinite(self.tau):
            raise DomainError("tau must be finite")
        if not 0 <= int(self.seed) < 2 ** 64 or int(self.seed) != self.seed:
            raise DomainError(f"seed must be an integer in [0, 2**64), got {self.seed}")

    @property
    def intercept(self):
        if self.beta0 is not None:
            return float(self.beta0)
        for kappa, b0 in BETA0_TABLE.items():
            if abs(self.kappa - kappa) < 1e-12:
                return b0
        return solve_beta0(self.kappa, seed=self.seed)


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    iterations: int
    grad_norm: float
    separated: bool


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, treatment, outcomes and propensity scores.

    ``y1`` and ``y0`` are the potential outcomes (known only in simulation);
    ``fitted_linear`` is the fitted logit of the score.
    """

    covariates: np.ndarray
    z: np.ndarray
    y: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    true_scores: np.ndarray
    fitted_scores: Optional[np.ndarray] = None
    fitted_linear: Optional[np.ndarray] = None
    fit: Optional[LogisticFit] = field(default=None, compare=False)

    @property
    def n(self):
        return self.z.size

    def scores(self, use_fitted):
        if not use_fitted:
            return self.true_scores
        if self.fitted_scores is None:
            raise EstimationError("dataset has no fitted scores; call fit_logistic first")
        return self.fitted_scores

    def take(self, idx):
        """Rows ``idx`` as a new dataset (fitted quantities are dropped)."""
        return Dataset(
            covariates=self.covariates[idx],
            z=self.z[idx],
            y=self.y[idx],
            y1=self.y1[idx],
            y0=self.y0[idx],
            true_scores=self.true_scores[idx],
        )


def _draw_covariates(rng, n):
    x = np.empty((n, N_COVARIATES))
    for j, p in enumerate((0.2, 0.4, 0.6, 0.8)):
        x[:, j] = rng.random(n) < p
    x[:, 4] = rng.random(n)
    for j, lam in zip((5, 6, 7), (1.0, 2.0, 3.0)):
        x[:, j] = rng.poisson(lam, n)
    x[:, 8] = rng.gamma(2.0, 1.0 / 3.0, n)  # shape 2, rate 3
    x[:, 9] = rng.beta(2.0, 3.0, n)
    return x


def solve_beta0(kappa, r=0.5, pilot=1_000_000, seed=0, tol=1e-6):
    """Intercept giving ``mean(expit(beta0 + kappa X beta)) = r`` on a pilot draw."""
    if not 0.0 < r < 1.0:
        raise DomainError(f"r must lie in (0, 1), got {r}")
    lin = kappa * (_draw_covariates(np.random.default_rng([seed, 2 ** 32]), pilot) @ BETA)
    lo, hi = -50.0, 50.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if np.mean(expit(mid + lin)) < r:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate(cfg):
    """Draw the superpopulation; identical seeds give identical arrays."""
    rng = np.random.default_rng(cfg.seed)
    n = int(cfg.n_pop)
    x = _draw_covariates(rng, n)
    lin = cfg.intercept + cfg.kappa * (x @ BETA)
    e = expit(lin)
    z = (rng.random(n) < e).astype(float)
    base = x @ GAMMA
    y1 = base + cfg.tau + cfg.noise_sd * rng.standard_normal(n)
    y0 = base + cfg.noise_sd * rng.standard_normal(n)
    if cfg.outcome_kind is OutcomeKind.BINARY:
        y1 = (y1 > cfg.binary_threshold).astype(float)
        y0 = (y0 > cfg.binary_threshold).astype(float)
    y = np.where(z == 1.0, y1, y0)
    return Dataset(covariates=x, z=z, y=y, y1=y1, y0=y0, true_scores=e)


def _design(x):
    return np.column_stack([np.ones(x.shape[0]), x])


def _irls(xt, z, tol, max_iter):
    n, p = xt.shape
    if np.linalg.matrix_rank(xt) < p:
        raise RankDeficiencyError(f"logistic design matrix ({n}x{p} with intercept) is rank deficient")
    coef = np.zeros(p)
    coef[0] = math.log((z.mean() + 0.5 / n) / (1.0 - z.mean() + 0.5 / n))
    trace = []

    def deviance(c):
        eta = xt @ c
        return float(np.sum(np.logaddexp(0.0, eta) - z * eta))

    dev = deviance(coef)
    for it in range(1, max_iter + 1):
        e = expit(xt @ coef)
        grad = xt.T @ (z - e) / n
        grad_norm = float(np.linalg.norm(grad))
        trace.append((it - 1, grad_norm, dev))
        if grad_norm <= tol:
            return coef, it - 1, grad_norm
        info = (xt * (e * (1.0 - e))[:, None]).T @ xt / n
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("logistic information matrix is singular") from exc
        # Halve the Newton step until the deviance does not increase.
        for _ in range(30):
            new = coef + step
            new_dev = deviance(new)
            if new_dev <= dev + 1e-12 * abs(dev):
                break
            step *= 0.5
        coef, dev = new, new_dev
    e = expit(xt @ coef)
    grad_norm = float(np.linalg.norm(xt.T @ (z - e) / n))
    trace.append((max_iter, grad_norm, dev))
    if grad_norm <= tol:
        return coef, max_iter, grad_norm
    raise ConvergenceError(
        f"logistic IRLS did not reach gradient norm {tol:g} in {max_iter} iterations",
        estimate=coef,
        error=grad_norm,
        trace=trace,
    )


def _fit_scores(x, z, tol, max_iter):
    xt = _design(x)
    coef, iterations, grad_norm = _irls(xt, z, tol, max_iter)
    lin = xt @ coef
    raw = expit(lin)
    scores = np.clip(raw, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    separated = bool(np.any(scores != raw))
    return lin, scores, LogisticFit(coef=coef, iterations=iterations, grad_norm=grad_norm, separated=separated)


def fit_logistic(data, tol=1e-10, max_iter=50):
    """Fit ``Z ~ expit(b0 + X b)`` by Newton / IRLS.

    ``tol`` bounds the Euclidean norm of the mean score vector.  Scores
    closer than ``1e-12`` to 0 or 1 indicate separation; they are clamped
    and a warning is issued.
    """
    lin, scores, fit = _fit_scores(data.covariates, data.z, tol, max_iter)
    if fit.separated:
        warnings.warn("quasi-separation in logistic fit; scores clamped to [1e-12, 1 - 1e-12]", RuntimeWarning)
    return replace(data, fitted_scores=scores, fitted_linear=lin, fit=fit)


def hajek(data, h=TiltingFunction(), use_fitted=False):
    """Hajek weighting estimate with true or fitted scores."""
    tau, _, _ = hajek_point(data.y, data.z, data.scores(use_fitted), h)
    return tau


@dataclass(frozen=True)
class SummaryExtract:
    r: float
    phi_hat: float
    e1: float
    e0: float
    s1_2: float
    s0_2: float
    rho1: float
    rho0: float
    s2_pooled: float
    rho2_pooled: float
    r2: float


def _corr(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        raise EstimationError("correlation undefined for a constant vector")
    return float(a @ b) / den


def extract_summaries(data):
    """Design inputs estimated from a dataset with a fitted propensity model.

    Pooled ``rho2`` is the squared correlation of the outcome with the
    fitted logit over the pooled sample; ``r2`` is the R-squared of the
    arm-centred outcome regressed on the covariates.
    """
    if data.fitted_linear is None:
        raise EstimationError("dataset has no fitted linear predictor; call fit_logistic first")
    z = data.z == 1.0
    y, w = data.y, data.fitted_linear
    arms = {}
    yc = np.empty_like(y)
    for label, mask in ((1, z), (0, ~z)):
        if mask.sum() < 2:
            raise EstimationError(f"arm {label} has fewer than two units")
        ya = y[mask]
        var = float(np.var(ya, ddof=1))
        if var == 0.0:
            raise EstimationError(f"outcome is constant in arm {label}")
        arms[label] = (float(ya.mean()), var, _corr(ya, w[mask]))
        yc[mask] = ya - ya.mean()
    r = float(data.z.mean())
    xt = _design(data.covariates)
    coef, *_ = np.linalg.lstsq(xt, yc, rcond=None)
    resid = yc - xt @ coef
    r2 = 1.0 - float(resid @ resid) / float(yc @ yc)
    return SummaryExtract(
        r=r,
        phi_hat=overlap_from_scores(data.fitted_scores, r),
        e1=arms[1][0],
        e0=arms[0][0],
        s1_2=arms[1][1],
        s0_2=arms[0][1],
        rho1=arms[1][2],
        rho0=arms[0][2],
        s2_pooled=0.5 * (arms[1][1] + arms[0][1]),
        rho2_pooled=_corr(y, w) ** 2,
        r2=r2,
    )


@dataclass(frozen=True)
class PowerResult:
    power: float
    mc_se: float
    n: int
    b_reps: int
    failures: int
    mode: SampleMode
    use_fitted: bool
    max_weight: float

    def record(self, phi, rho2):
        """JSON-ready record ``{phi, rho2, n, power, mc_se, mode}``."""
        return {
            "phi": phi,
            "rho2": rho2,
            "n": self.n,
            "power": self.power,
            "mc_se": self.mc_se,
            "mode": self.mode.value,
        }


def thread_count():
    """Worker threads for the power loop, capped by ``PSPOWER_THREADS``."""
    cap = os.environ.get("PSPOWER_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise DomainError(f"PSPOWER_THREADS must be an integer, got {cap!r}") from exc
    return n


_REPLICATE_ERRORS = (EstimationError, ConvergenceError, RankDeficiencyError, DomainError)


def _replicate(pop, n, rep, seed, h, use_fitted, z_crit, mode, tol, max_iter, fixed_variance):
    rng = np.random.default_rng([seed, rep])
    if mode is SampleMode.BOOTSTRAP:
        idx = rng.integers(0, pop.n, n)
    else:
        idx = rng.choice(pop.n, n, replace=False)
    x, z, y = pop.covariates[idx], pop.z[idx], pop.y[idx]
    try:
        if use_fitted:
            _, e, _ = _fit_scores(x, z, tol, max_iter)
        else:
            e = pop.true_scores[idx]
        tau, _, _ = hajek_point(y, z, e, h)
        if fixed_variance is not None:
            var = fixed_variance
        else:
            var = hajek_sandwich_variance(y, z, e, h, covariates=x if use_fitted else None)
    except _REPLICATE_ERRORS:
        return None
    if not var > 0.0:
        return None
    return abs(tau) / math.sqrt(var) > z_crit


def empirical_power(
    pop,
    n,
    b_reps,
    h=TiltingFunction(),
    use_fitted=False,
    alpha=0.05,
    mode=SampleMode.WITHOUT_REPLACEMENT,
    seed=0,
    threads=None,
    tol=1e-8,
    max_iter=50,
    fixed_variance=None,
):
    """Rejection rate of the two-sided Wald test over ``b_reps`` subsamples.

    Each replicate draws ``n`` rows, computes the Hajek estimate (refitting
    the logistic model when ``use_fitted``) and rejects when
    ``|tau| / se > z_{1 - alpha/2}``.  The standard error is the sandwich
    estimate of the replicate, or ``sqrt(fixed_variance)`` when a fixed
    variance of the estimator is supplied (the design-based test).
    Replicates whose estimate fails are counted in ``failures`` and
    excluded.
    """
    mode = SampleMode(mode)
    if int(n) != n or n < 2:
        raise DomainError(f"n must be an integer >= 2, got {n}")
    if mode is SampleMode.WITHOUT_REPLACEMENT and n > pop.n:
        raise DomainError(f"n = {n} exceeds the population size {pop.n}")
    if int(b_reps) != b_reps or b_reps < 1:
        raise DomainError(f"b_reps must be a positive integer, got {b_reps}")
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 0.5), got {alpha}")
    if fixed_variance is not None and not (math.isfinite(fixed_variance) and fixed_variance > 0.0):
        raise DomainError(f"fixed_variance must be finite and > 0, got {fixed_variance}")
    z_crit = float(ndtri(1.0 - alpha / 2.0))
    n, b_reps = int(n), int(b_reps)
    workers = thread_count() if threads is None else max(1, int(threads))

    def run(rep):
        return _replicate(pop, n, rep, seed, h, use_fitted, z_crit, mode, tol, max_iter, fixed_variance)

    if workers == 1:
        outcomes = [run(rep) for rep in range(b_reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(b_reps)))
    done = [o for o in outcomes if o is not None]
    failures = b_reps - len(done)
    if not done:
        raise EstimationError(f"all {b_reps} replicates failed")
    power = sum(done) / len(done)
    # Weight diagnostic on the population scores; no trimming is applied.
    w1, w0 = h.weights(pop.fitted_scores if use_fitted and pop.fitted_scores is not None else pop.true_scores)
    max_weight = float(max(np.max(w1[pop.z == 1.0], initial=0.0), np.max(w0[pop.z == 0.0], initial=0.0)))
    return PowerResult(
        power=power,
        mc_se=math.sqrt(power * (1.0 - power) / len(done)),
        n=n,
        b_reps=b_reps,
        failures=failures,
        mode=mode,
        use_fitted=use_fitted,
        max_weight=max_weight,
    )


def normality_diagnostic(values):
    """Correlation of sorted values with normal quantiles at ``(i - 3/8) / (n + 1/4)``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size < 30:
        raise DomainError(f"need at least 30 values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise DomainError("values must be finite")
    if v[0] == v[-1]:
        raise EstimationError("quantile correlation undefined for constant input")
    n = v.size
    q = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    return _corr(v, q)


_BASE_COLUMNS = [f"x{j}" for j in range(1, N_COVARIATES + 1)] + ["z", "y", "y1", "y0", "e_true"]


def write_dataset_csv(data, path):
    """Write ``x1..x10,z,y,y1,y0,e_true[,e_hat,w_hat]`` with a header row."""
    cols = [data.covariates, data.z[:, None], data.y[:, None], data.y1[:, None], data.y0[:, None], data.true_scores[:, None]]
    header = list(_BASE_COLUMNS)
    if data.fitted_scores is not None:
        cols += [data.fitted_scores[:, None], data.fitted_linear[:, None]]
        header += ["e_hat", "w_hat"]
    np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_dataset_csv(path):
    """Inverse of :func:`write_dataset_csv`."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if header[: len(_BASE_COLUMNS)] != _BASE_COLUMNS or header[len(_BASE_COLUMNS):] not in ([], ["e_hat", "w_hat"]):
        raise DomainError(f"unexpected dataset header in {path}: {header}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    k = N_COVARIATES
    data = Dataset(
        covariates=arr[:, :k].copy(),
        z=arr[:, k].copy(),
        y=arr[:, k + 1].copy(),
        y1=arr[:, k + 2].copy(),
        y0=arr[:, k + 3].copy(),
        true_scores=arr[:, k + 4].copy(),
    )
    if len(header) > len(_BASE_COLUMNS):
        data = replace(data, fitted_scores=arr[:, k + 5].copy(), fitted_linear=arr[:, k + 6].copy())
    return data
