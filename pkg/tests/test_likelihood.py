import math

import numpy as np
import pytest
from scipy import integrate, stats

from mortrisk.dataset import MortalityDataset
from mortrisk.likelihood import (init_params_moment_matching, log_likelihood,
                                 map_risk_factor, mixed_poisson_log_pmf,
                                 per_year_log_likelihood, cause_aggregates)
from mortrisk.model import ModelParams, expected_deaths
from mortrisk.simulate import SimulationSpec, sample_death_counts

from test_model import random_params


def make_dataset(rng, n_age=2, n_causes=3, n_years=6, pop=50_000):
    params = random_params(rng, n_age, n_causes)
    params.alpha[:] = rng.normal(-4, 0.3, 2 * n_age)
    params.beta[:] = rng.normal(0, 0.05, 2 * n_age)
    spec = SimulationSpec(population=np.full((2 * n_age, n_years), pop),
                          true_params=params, seed=int(rng.integers(1 << 30)))
    data, _ = sample_death_counts(spec)
    return data, params


class TestMixedPoissonLogPmf:
    def test_n_zero_closed_form(self):
        assert mixed_poisson_log_pmf(0, 2.0, 0.5) == pytest.approx(
            -2.0 * math.log(2.0), rel=1e-14)

    def test_normalization(self):
        n = np.arange(0, 10_001)
        total = np.exp(mixed_poisson_log_pmf(n, 3.0, 0.3)).sum()
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_matches_negative_binomial(self):
        # independent oracle: scipy's negative binomial pmf
        n = np.arange(0, 51)
        r = 1.0 / 0.2
        p_fail = 0.2 * 5.0 / (1.0 + 0.2 * 5.0)
        assert p_fail == pytest.approx(0.5)
        ours = np.exp(mixed_poisson_log_pmf(n, 5.0, 0.2))
        oracle = stats.nbinom.pmf(n, r, 1.0 - p_fail)
        np.testing.assert_allclose(ours, oracle, rtol=0, atol=1e-12)

    def test_matches_quadrature(self):
        # gamma-mixed Poisson by direct numerical integration over the factor
        for n, rho, s2 in [(0, 1.0, 0.3), (7, 5.0, 0.25), (30, 10.0, 1.5)]:
            shape = 1.0 / s2

            def integrand(lam):
                return stats.poisson.pmf(n, rho * lam) * stats.gamma.pdf(
                    lam, a=shape, scale=s2)

            val, _ = integrate.quad(integrand, 0, 60, limit=200)
            assert mixed_poisson_log_pmf(n, rho, s2) == pytest.approx(
                math.log(val), rel=1e-8)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            mixed_poisson_log_pmf(1, -1.0, 0.5)
        with pytest.raises(ValueError):
            mixed_poisson_log_pmf(1, 1.0, 0.0)
        with pytest.raises(ValueError):
            mixed_poisson_log_pmf(1.5, 1.0, 0.5)

    def test_zero_rho_positive_count(self):
        assert mixed_poisson_log_pmf(3, 0.0, 0.5) == -np.inf
        assert mixed_poisson_log_pmf(0, 0.0, 0.5) == 0.0


class TestMapRiskFactor:
    def test_prior_mean_without_data(self):
        mode, mean = map_risk_factor(0, 0.0, 0.5)
        assert mean == 1.0

    def test_observed_equals_expected(self):
        _, mean = map_risk_factor(10, 10.0, 0.5)
        assert mean == pytest.approx(1.0)

    def test_mode_against_numeric_maximum(self):
        n, rho, s2 = 20, 10.0, 0.25
        mode, _ = map_risk_factor(n, rho, s2)
        assert mode == pytest.approx(23.0 / 14.0, rel=1e-14)
        shape, rate = 1.0 / s2 + n, 1.0 / s2 + rho

        def neg_logpost(lam):
            return -((shape - 1.0) * math.log(lam) - rate * lam)

        grid = np.linspace(0.5, 3.0, 200_001)
        numeric = grid[np.argmin([neg_logpost(g) for g in grid])]
        assert mode == pytest.approx(numeric, abs=1e-4)


class TestLogLikelihood:
    def test_all_zero_counts_closed_form(self):
        rng = np.random.default_rng(11)
        params = random_params(rng, n_age=2, n_causes=3)
        pop = rng.integers(100, 10_000, (4, 5))
        data = MortalityDataset(population=pop, deaths=np.zeros((4, 4, 5), dtype=int))
        rho = expected_deaths(params, pop, data.t_grid)
        rho_k = rho[:, 1:, :].sum(axis=0)
        s2 = params.sigma2[:, None]
        expected = -rho[:, 0, :].sum() - ((1.0 / s2) * np.log1p(s2 * rho_k)).sum()
        assert log_likelihood(data, params) == pytest.approx(expected, rel=1e-12)

    def test_poisson_limit_small_sigma2(self):
        rng = np.random.default_rng(12)
        data, params = make_dataset(rng, n_age=1, n_causes=1, n_years=2, pop=2000)
        params.sigma2[:] = 1e-10
        rho = expected_deaths(params, data.population, data.t_grid)
        pois = stats.poisson.logpmf(data.deaths, rho).sum()
        assert log_likelihood(data, params) == pytest.approx(pois, abs=1e-4)

    def test_single_cell_single_cause_quadrature(self):
        # one cell, one gamma-mixed cause, one year, against direct quadrature
        m, qw, s2, n_obs = 100.0, 0.05, 0.25, 7
        rho = np.zeros((1, 2, 1))
        rho[0, 1, 0] = m * qw
        counts = np.zeros((1, 2, 1))
        counts[0, 1, 0] = n_obs
        ours = per_year_log_likelihood(counts, rho, np.array([s2]))[0]
        shape = 1.0 / s2

        def integrand(lam):
            return stats.poisson.pmf(n_obs, m * qw * lam) * stats.gamma.pdf(
                lam, a=shape, scale=s2)

        val, _ = integrate.quad(integrand, 0, 50, limit=200)
        assert ours == pytest.approx(math.log(val), rel=1e-8)

    def test_gauge_invariance(self):
        rng = np.random.default_rng(13)
        data, params = make_dataset(rng)
        base = log_likelihood(data, params)
        shifted = params.copy()
        shifted.u[1, :] += 3.7
        assert log_likelihood(data, shifted) == pytest.approx(base, abs=1e-9)
        shifted.v[1, :] += 3.7
        assert log_likelihood(data, shifted) == pytest.approx(base, abs=1e-9)

    def test_per_year_decomposition(self):
        rng = np.random.default_rng(14)
        data, params = make_dataset(rng)
        rho = expected_deaths(params, data.population, data.t_grid)
        per_year = per_year_log_likelihood(data.deaths, rho, params.sigma2)
        assert float(np.sum(per_year)) == log_likelihood(data, params)

    def test_degenerate_intensity_gives_minus_inf(self):
        params = ModelParams.zeros(1, 2)
        pop = np.array([[100, 0], [100, 100]])
        deaths = np.zeros((2, 3, 2), dtype=int)
        deaths[1, 1, 1] = 3
        data = MortalityDataset(population=pop, deaths=deaths)
        assert np.isfinite(log_likelihood(data, params))
        deaths2 = deaths.copy()
        deaths2[0, 0, 1] = 1   # positive count in a zero-population year
        with pytest.raises(ValueError):
            MortalityDataset(population=pop, deaths=deaths2)

    def test_mixture_term_matches_single_cell_pmf(self):
        # one cell collapses the yearly factor term to the mixed-Poisson pmf
        grid_n = np.arange(0, 51)
        for rho_val in (0.1, 1.0, 10.0):
            for s2 in (0.05, 0.5, 2.0):
                for n_obs in grid_n:
                    rho = np.zeros((1, 2, 1))
                    rho[0, 1, 0] = rho_val
                    counts = np.zeros((1, 2, 1))
                    counts[0, 1, 0] = n_obs
                    ll = per_year_log_likelihood(counts, rho, np.array([s2]))[0]
                    assert abs(ll - mixed_poisson_log_pmf(int(n_obs), rho_val, s2)) < 1e-12

    def test_mixed_poisson_monte_carlo_moments(self):
        rng = np.random.default_rng(15)
        rho_val, s2 = 4.0, 0.5
        lam = rng.gamma(shape=1 / s2, scale=s2, size=1_000_000)
        draws = rng.poisson(rho_val * lam)
        mean_se = draws.std() / 1000.0
        assert abs(draws.mean() - rho_val) < 4 * mean_se
        target_var = rho_val + s2 * rho_val**2
        var_se = draws.var() * math.sqrt(2.0 / 1_000_000) * 3  # loose kurtosis bound
        assert abs(draws.var() - target_var) < 4 * var_se


class TestMomentMatchingInit:
    def test_recovers_alpha_on_synthetic_data(self):
        errors = []
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            params = random_params(rng, n_age=2, n_causes=2)
            params.alpha[:] = rng.normal(-4, 0.4, 4)
            params.beta[:] = 0.0      # constant death probability over time
            params.v[:] = 0.0
            # keep the common-factor mixing mild: with only T years of data the
            # year-averaged factor has sd sigma/sqrt(T), which bounds how well
            # any initializer can pin down alpha
            params.sigma2[:] = 0.005
            spec = SimulationSpec(population=np.full((4, 25), 200_000),
                                  true_params=params, seed=seed)
            data, _ = sample_death_counts(spec)
            est = init_params_moment_matching(data)
            errors.append(np.abs(est.alpha - params.alpha).max())
        assert np.median(errors) < 0.05
        assert max(errors) < 0.15

    def test_rejects_single_year(self):
        with pytest.raises(ValueError):
            MortalityDataset(population=np.full((2, 1), 100),
                             deaths=np.zeros((2, 3, 1), dtype=int))

    def test_zero_death_cause_stays_finite(self):
        rng = np.random.default_rng(16)
        data, _ = make_dataset(rng, n_age=1, n_causes=2, n_years=4)
        data.deaths[:, 2, :] = 0
        est = init_params_moment_matching(data)
        assert np.all(np.isfinite(est.u))
        assert np.all(est.sigma2 > 0)

    def test_rejects_fully_empty_cell(self):
        pop = np.array([[0, 0, 0], [100, 100, 100]])
        data = MortalityDataset(population=pop, deaths=np.zeros((2, 3, 3), dtype=int))
        with pytest.raises(ValueError):
            init_params_moment_matching(data)


def test_cause_aggregates_exact():
    rng = np.random.default_rng(17)
    data, params = make_dataset(rng)
    n_k, rho_k = cause_aggregates(data, params)
    np.testing.assert_array_equal(n_k, data.deaths[:, 1:, :].sum(axis=0))
    assert np.all(rho_k >= 0)
