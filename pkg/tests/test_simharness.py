import dataclasses
import json
import math
import os
import warnings

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from ipwpower.design import DesignInputs, design_variance, ztest_size
from ipwpower.errors import ConvergenceError, DomainError, EstimationError, RankDeficiencyError
from ipwpower.propensity import OverlapSpec, overlap_from_beta, overlap_from_scores, propensity_law
from ipwpower.simharness import (
    BETA,
    BETA0_TABLE,
    Dataset,
    OutcomeKind,
    SampleMode,
    SimulationConfig,
    empirical_power,
    extract_summaries,
    fit_logistic,
    generate,
    hajek,
    normality_diagnostic,
    read_dataset_csv,
    solve_beta0,
    thread_count,
    write_dataset_csv,
)
from ipwpower.variance import Estimand, TiltingFunction, hajek_sandwich_variance

SEED = 11


@pytest.fixture(scope="module")
def pop1():
    return fit_logistic(generate(SimulationConfig(n_pop=1_000_000, kappa=1.0, seed=SEED)))


@pytest.fixture(scope="module")
def pop0():
    return fit_logistic(generate(SimulationConfig(n_pop=1_000_000, kappa=0.0, seed=SEED)))


@pytest.fixture(scope="module")
def pop75():
    return fit_logistic(generate(SimulationConfig(n_pop=1_000_000, kappa=0.75, seed=SEED)))


@pytest.fixture(scope="module")
def pop1_binary():
    cfg = SimulationConfig(n_pop=1_000_000, kappa=1.0, seed=SEED, outcome_kind=OutcomeKind.BINARY)
    return fit_logistic(generate(cfg))


@pytest.fixture(scope="module")
def small():
    return fit_logistic(generate(SimulationConfig(n_pop=5000, kappa=0.5, seed=3)))


def design_fixed_variance(pop, n):
    """Design variance of the Hajek ATE at ``n`` from the population summaries."""
    s = extract_summaries(pop)
    d = DesignInputs(alpha=0.05, beta=0.8, tau_std=1.0, overlap=OverlapSpec(s.r, s.phi_hat), rho2=s.rho2_pooled)
    vb, _ = design_variance(d)
    return vb.v_total * s.s2_pooled / n


# --- configuration -----------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        {"n_pop": 999},
        {"n_pop": 1500.5},
        {"b_reps": 0},
        {"kappa": -0.1},
        {"kappa": math.inf},
        {"noise_sd": 0.0},
        {"tau": math.nan},
        {"seed": -1},
        {"seed": 2 ** 64},
    ],
)
def test_config_rejects_invalid(kw):
    with pytest.raises(DomainError):
        SimulationConfig(**kw)


@pytest.mark.parametrize("kappa,b0", sorted(BETA0_TABLE.items()))
def test_tabulated_intercepts(kappa, b0):
    assert SimulationConfig(kappa=kappa).intercept == b0


def test_explicit_intercept_wins():
    assert SimulationConfig(kappa=1.0, beta0=0.3).intercept == 0.3


@pytest.mark.parametrize("kappa", [0.5, 1.0])
def test_solved_intercept_near_table(kappa):
    assert solve_beta0(kappa) == pytest.approx(BETA0_TABLE[kappa], abs=0.005)


def test_solved_intercept_hits_target_share():
    b0 = solve_beta0(0.6, r=0.3, pilot=200_000, seed=5)
    pop = generate(SimulationConfig(n_pop=200_000, kappa=0.6, beta0=b0, seed=5))
    assert pop.true_scores.mean() == pytest.approx(0.3, abs=0.003)


# --- generate ------------------------------------------------------------------


def test_randomized_limit_uncorrelated(pop0):
    n = pop0.n
    for j in range(pop0.covariates.shape[1]):
        c = np.corrcoef(pop0.z, pop0.covariates[:, j])[0, 1]
        assert abs(c) <= 3.0 / math.sqrt(n)


def test_treated_share(pop1):
    assert pop1.z.mean() == pytest.approx(0.50, abs=0.002)


def test_overlap_from_true_scores(pop1):
    assert overlap_from_scores(pop1.true_scores, 0.5) == pytest.approx(0.81, abs=0.01)


def test_observed_outcome_consistency(pop1):
    np.testing.assert_array_equal(pop1.y, np.where(pop1.z == 1.0, pop1.y1, pop1.y0))
    assert np.all((pop1.true_scores > 0) & (pop1.true_scores < 1))
    assert np.all((pop1.fitted_scores > 0) & (pop1.fitted_scores < 1))


def test_covariate_marginals(pop0):
    x = pop0.covariates
    np.testing.assert_allclose(x[:, :4].mean(axis=0), [0.2, 0.4, 0.6, 0.8], atol=0.005)
    assert set(np.unique(x[:, :4])) == {0.0, 1.0}
    assert x[:, 4].min() >= 0 and x[:, 4].max() <= 1
    np.testing.assert_allclose(x[:, 5:8].mean(axis=0), [1.0, 2.0, 3.0], atol=0.02)
    assert x[:, 8].mean() == pytest.approx(2.0 / 3.0, abs=0.01)
    assert x[:, 9].mean() == pytest.approx(0.4, abs=0.005)


def test_propensity_uses_generating_law():
    cfg = SimulationConfig(n_pop=1000, kappa=0.5, seed=2)
    pop = generate(cfg)
    np.testing.assert_allclose(pop.true_scores, expit(cfg.intercept + 0.5 * pop.covariates @ BETA), rtol=1e-14)


def test_generate_is_deterministic():
    cfg = SimulationConfig(n_pop=3000, kappa=0.9, seed=42)
    a, b = generate(cfg), generate(cfg)
    for name in ("covariates", "z", "y", "y1", "y0", "true_scores"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = generate(dataclasses.replace(cfg, seed=43))
    assert not np.array_equal(a.y, c.y)


def test_binary_outcomes(pop1_binary):
    cont = generate(SimulationConfig(n_pop=1_000_000, kappa=1.0, seed=SEED))
    np.testing.assert_array_equal(pop1_binary.y1, (cont.y1 > -2.0).astype(float))
    np.testing.assert_array_equal(pop1_binary.y0, (cont.y0 > -2.0).astype(float))
    assert set(np.unique(pop1_binary.y)) == {0.0, 1.0}


def test_take_drops_fit(small):
    sub = small.take(np.arange(10))
    assert sub.n == 10 and sub.fitted_scores is None
    with pytest.raises(EstimationError):
        sub.scores(True)


# --- fit_logistic --------------------------------------------------------------


def _coef_se(pop):
    xt = np.column_stack([np.ones(pop.n), pop.covariates])
    e = pop.fitted_scores
    info = (xt * (e * (1 - e))[:, None]).T @ xt
    return np.sqrt(np.diag(np.linalg.inv(info)))


def test_fit_null_coefficients(pop0):
    coef = pop0.fit.coef
    se = _coef_se(pop0)
    assert np.all(np.abs(coef[1:]) <= 3 * se[1:])


def test_fit_recovers_generating_values(pop1):
    truth = np.concatenate([[BETA0_TABLE[1.0]], BETA])
    assert np.all(np.abs(pop1.fit.coef - truth) <= 3 * _coef_se(pop1))


@pytest.mark.parametrize("name", ["pop0", "pop1", "small"])
def test_score_mean_matches_treated_share(name, request):
    pop = request.getfixturevalue(name)
    assert abs(pop.fitted_scores.mean() - pop.z.mean()) <= 1e-8
    assert pop.fit.grad_norm <= 1e-10
    np.testing.assert_allclose(pop.fitted_scores, expit(pop.fitted_linear), rtol=1e-12)


def test_fit_separation_warns_and_clamps(small):
    z = (small.covariates[:, 4] > 0.5).astype(float)
    sep = dataclasses.replace(small.take(np.arange(small.n)), z=z, y=np.where(z == 1, small.y1, small.y0))
    with pytest.warns(RuntimeWarning, match="separation"):
        fit = fit_logistic(sep)
    assert fit.fit.separated
    assert fit.fitted_scores.min() >= 1e-12 and fit.fitted_scores.max() <= 1 - 1e-12


def test_fit_nonconvergence_has_trace(small):
    with pytest.raises(ConvergenceError) as info:
        fit_logistic(small, max_iter=1)
    assert len(info.value.trace) == 2
    assert info.value.error > 1e-10
    assert info.value.estimate.shape == (11,)


def test_fit_rank_deficient(small):
    x = small.covariates.copy()
    x[:, 9] = 2.0 * x[:, 8]
    with pytest.raises(RankDeficiencyError):
        fit_logistic(dataclasses.replace(small, covariates=x))


def test_fit_no_warning_on_regular_data(small):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_logistic(small)


# --- hajek ---------------------------------------------------------------------


def test_constant_scores_give_difference_in_means(small):
    pop = dataclasses.replace(small, true_scores=np.full(small.n, 0.37))
    diff = small.y[small.z == 1].mean() - small.y[small.z == 0].mean()
    for kind in Estimand:
        assert hajek(pop, TiltingFunction(kind)) == pytest.approx(diff, rel=1e-12)


@pytest.mark.parametrize("c", [-3.0, 0.5, 7.25])
@pytest.mark.parametrize("kind", list(Estimand))
@pytest.mark.parametrize("fitted", [False, True])
def test_hajek_shift_and_scale(small, c, kind, fitted):
    h = TiltingFunction(kind)
    base = hajek(small, h, fitted)
    shifted = dataclasses.replace(small, y=small.y + c)
    scaled = dataclasses.replace(small, y=small.y * c)
    assert hajek(shifted, h, fitted) == pytest.approx(base, abs=1e-10)
    assert hajek(scaled, h, fitted) == pytest.approx(c * base, rel=1e-10)


def test_hajek_empty_arm(small):
    pop = dataclasses.replace(small, z=np.ones(small.n))
    with pytest.raises(EstimationError):
        hajek(pop)


@pytest.mark.parametrize("kind", list(Estimand))
def test_hajek_within_three_se(pop1, kind):
    h = TiltingFunction(kind)
    tau = hajek(pop1, h)
    se = math.sqrt(hajek_sandwich_variance(pop1.y, pop1.z, pop1.true_scores, h))
    assert abs(tau - 1.0) <= 3 * se


@pytest.mark.xfail(strict=True, reason="one standard error (0.014) exceeds the 0.01 band; this draw lands 0.015 away")
def test_hajek_ate_unit_effect(pop1):
    assert hajek(pop1) == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("kind", [Estimand.ATT, Estimand.ATO])
def test_hajek_weighted_unit_effect(pop1, kind):
    assert hajek(pop1, TiltingFunction(kind)) == pytest.approx(1.0, abs=0.02)


def test_hajek_fitted_scores_close(pop1):
    assert hajek(pop1, use_fitted=True) == pytest.approx(hajek(pop1), abs=0.01)


# --- extract_summaries ----------------------------------------------------------


def test_summaries_strong_confounding(pop1):
    s = extract_summaries(pop1)
    assert s.r == pytest.approx(0.5, abs=0.002)
    assert s.phi_hat == pytest.approx(0.81, abs=0.01)
    # The variance has sampling s.e. near 0.03 at this size.
    assert s.s2_pooled == pytest.approx(19.81, abs=0.1)
    assert round(s.rho2_pooled, 2) == 0.02
    assert round(s.r2, 2) == 0.19
    assert round(s.rho1 ** 2, 2) == 0.04
    assert round(s.rho0 ** 2, 2) == 0.02
    assert s.rho1 < 0 and s.rho0 < 0


def test_summaries_arm_moments(pop1):
    s = extract_summaries(pop1)
    t = pop1.z == 1
    assert s.e1 == pytest.approx(pop1.y[t].mean(), rel=1e-12)
    assert s.s0_2 == pytest.approx(np.var(pop1.y[~t], ddof=1), rel=1e-12)
    assert s.s2_pooled == pytest.approx(0.5 * (s.s1_2 + s.s0_2), rel=1e-12)
    assert s.e1 == pytest.approx(-2.19, abs=0.05)
    assert s.e0 == pytest.approx(-2.27, abs=0.05)


def test_summaries_randomized(pop0):
    s = extract_summaries(pop0)
    assert s.rho1 ** 2 <= 0.03 and s.rho0 ** 2 <= 0.03
    assert s.phi_hat > 0.99
    assert s.r2 == pytest.approx(0.20, abs=0.01)


def test_summaries_binary(pop1_binary):
    s = extract_summaries(pop1_binary)
    assert round(s.s2_pooled, 2) == 0.25
    assert round(s.r2, 2) == 0.12
    assert round(s.rho2_pooled, 2) == 0.01


def test_summaries_need_fit(small):
    with pytest.raises(EstimationError):
        extract_summaries(small.take(np.arange(100)))


def test_summaries_constant_arm(small):
    y = np.where(small.z == 1, 3.0, small.y)
    with pytest.raises(EstimationError):
        extract_summaries(dataclasses.replace(small, y=y))


def test_overlap_estimate_converges_on_beta_population():
    beta, _ = propensity_law(0.4, 0.85)
    target = overlap_from_beta(beta)
    for n in (1_000, 100_000, 4_000_000):
        e = np.random.default_rng(n).beta(beta.a, beta.b, n)
        e = np.clip(e, 1e-300, 1 - 1e-16)
        g = np.sqrt(e * (1 - e)) / math.sqrt(0.4 * 0.6)
        assert abs(overlap_from_scores(e, 0.4) - target) <= 3 * g.std() / math.sqrt(n)


# --- empirical_power -----------------------------------------------------------


@pytest.fixture(scope="module")
def null_pop():
    return fit_logistic(generate(SimulationConfig(n_pop=200_000, kappa=0.5, tau=0.0, seed=SEED)))


@pytest.mark.parametrize("fitted,b_reps", [(False, 2000), (True, 400)])
def test_null_rejection_rate(null_pop, fitted, b_reps):
    res = empirical_power(null_pop, 600, b_reps, use_fitted=fitted, seed=4)
    assert abs(res.power - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / b_reps)


def test_moderate_confounding_power(pop75):
    n = 993
    res = empirical_power(pop75, n, 2000, seed=1, fixed_variance=design_fixed_variance(pop75, n))
    assert res.power == pytest.approx(0.78, abs=0.02)


def test_strong_confounding_ztest_power(pop1):
    n = ztest_size(0.05, 0.8, 0.5, 1.0 / math.sqrt(19.81))
    assert n == 622
    res = empirical_power(pop1, n, 2000, seed=1, fixed_variance=design_fixed_variance(pop1, n))
    assert res.power == pytest.approx(0.40, abs=0.02)


def test_ztest_size_underpowered(pop1):
    n = 622
    res = empirical_power(pop1, n, 2000, seed=1, fixed_variance=design_fixed_variance(pop1, n))
    assert res.power < 0.5


@pytest.mark.parametrize("kappa", [0.0, 0.5, 1.0])
def test_fitted_scores_not_less_powerful(kappa):
    pop = fit_logistic(generate(SimulationConfig(n_pop=200_000, kappa=kappa, seed=SEED)))
    n = 700
    true = empirical_power(pop, n, 400, seed=2)
    est = empirical_power(pop, n, 400, use_fitted=True, seed=2)
    noise = math.sqrt(true.mc_se ** 2 + est.mc_se ** 2)
    assert est.power >= true.power - 2 * noise


def test_power_is_thread_independent(small):
    a = empirical_power(small, 400, 60, use_fitted=True, seed=9, threads=1)
    b = empirical_power(small, 400, 60, use_fitted=True, seed=9, threads=3)
    assert a == b


def test_power_thread_env(monkeypatch):
    monkeypatch.setenv("PSPOWER_THREADS", "3")
    assert thread_count() == min(3, os.cpu_count() or 1)
    monkeypatch.setenv("PSPOWER_THREADS", "0")
    assert thread_count() == 1
    monkeypatch.setenv("PSPOWER_THREADS", "many")
    with pytest.raises(DomainError):
        thread_count()
    monkeypatch.delenv("PSPOWER_THREADS")
    assert thread_count() == (os.cpu_count() or 1)


def test_power_seed_determinism(small):
    a = empirical_power(small, 300, 50, seed=5)
    assert a == empirical_power(small, 300, 50, seed=5)


def test_bootstrap_mode_allows_large_n(small):
    res = empirical_power(small, small.n + 100, 20, mode=SampleMode.BOOTSTRAP, seed=1)
    assert res.mode is SampleMode.BOOTSTRAP and res.n == small.n + 100
    with pytest.raises(DomainError):
        empirical_power(small, small.n + 100, 20, seed=1)


def test_replicate_failures_are_counted(small):
    res = empirical_power(small, 2, 200, seed=1)
    assert res.failures > 0
    assert res.failures < 200


@pytest.mark.parametrize(
    "kw", [{"n": 1}, {"n": 10.5}, {"b_reps": 0}, {"alpha": 0.5}, {"fixed_variance": 0.0}, {"fixed_variance": math.nan}]
)
def test_power_rejects_invalid(small, kw):
    args = {"n": 100, "b_reps": 10}
    args.update(kw)
    with pytest.raises(DomainError):
        empirical_power(small, **args)


def test_power_record_schema(small):
    res = empirical_power(small, 300, 40, seed=5)
    rec = res.record(phi=0.9, rho2=0.02)
    assert list(rec) == ["phi", "rho2", "n", "power", "mc_se", "mode"]
    assert json.loads(json.dumps(rec)) == rec
    assert rec["mc_se"] == pytest.approx(math.sqrt(res.power * (1 - res.power) / (40 - res.failures)))
    assert res.max_weight >= 1.0


# --- normality diagnostic ------------------------------------------------------


def test_normality_exact_quantiles():
    n = 500
    q = norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    assert normality_diagnostic(q[::-1]) == pytest.approx(1.0, abs=1e-6)


def test_normality_fitted_logit(pop1):
    assert normality_diagnostic(pop1.fitted_linear) >= 0.995


def test_normality_bernoulli_control():
    v = np.random.default_rng(8).integers(0, 2, 10_000).astype(float)
    assert normality_diagnostic(v) <= 0.98


def test_normality_affine_invariant(rng):
    v = rng.standard_normal(200)
    assert normality_diagnostic(3 * v - 2) == pytest.approx(normality_diagnostic(v), rel=1e-12)


def test_normality_errors():
    with pytest.raises(DomainError):
        normality_diagnostic(np.arange(29.0))
    with pytest.raises(DomainError):
        normality_diagnostic(np.r_[np.arange(40.0), np.nan])
    with pytest.raises(EstimationError):
        normality_diagnostic(np.ones(50))


# --- dataset CSV ---------------------------------------------------------------


@pytest.mark.parametrize("fitted", [False, True])
def test_csv_round_trip(small, tmp_path, fitted):
    data = small if fitted else small.take(np.arange(small.n))
    path = tmp_path / "data.csv"
    write_dataset_csv(data, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:15] == [f"x{j}" for j in range(1, 11)] + ["z", "y", "y1", "y0", "e_true"]
    assert header[15:] == (["e_hat", "w_hat"] if fitted else [])
    back = read_dataset_csv(path)
    for name in ("covariates", "z", "y", "y1", "y0", "true_scores"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
    if fitted:
        np.testing.assert_array_equal(back.fitted_scores, data.fitted_scores)
        np.testing.assert_array_equal(back.fitted_linear, data.fitted_linear)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DomainError):
        read_dataset_csv(path)


def test_dataset_is_immutable(small):
    with pytest.raises(dataclasses.FrozenInstanceError):
        small.z = None
    assert isinstance(small, Dataset)
