import csv
import math

import numpy as np
import pytest
from scipy import stats

from mortrisk.model import ModelParams, cause_weights, death_probability
from mortrisk.panjer import (LossPMF, Policy, Portfolio, compound_panjer,
                             nb_counting_from_mixture, portfolio_loss,
                             risk_measures, sector_severity)
from mortrisk.simulate import simulate_portfolio_loss

from test_simulate import desk_params


def brute_force_compound(count_pmf, severity, n_max):
    """Oracle: sum_n P(N=n) * severity^{*n}, by repeated convolution."""
    out = np.zeros(n_max + 1)
    conv = np.zeros(n_max + 1)
    conv[0] = 1.0
    out += count_pmf[0] * conv
    for n in range(1, len(count_pmf)):
        conv = np.convolve(conv, severity)[:n_max + 1]
        out += count_pmf[n] * conv
    return out


class TestPolicyPortfolio:
    def test_validation(self):
        with pytest.raises(ValueError):
            Policy(cell=0, exposure=0)
        with pytest.raises(ValueError):
            Policy(cell=0, exposure=1, count=0)
        with pytest.raises(ValueError):
            Portfolio(policies=[])

    def test_total_exposure(self):
        port = Portfolio(policies=[Policy(0, 2, 3), Policy(1, 5, 1)])
        assert port.total_exposure() == 11

    def test_from_csv(self, tmp_path):
        path = tmp_path / "portfolio.csv"
        path.write_text("age_group,gender,exposure_units,count\n"
                        "1,f,2,10\n2,m,5,3\n")
        port = Portfolio.from_csv(path, n_age_groups=2)
        assert len(port.policies) == 2
        assert port.policies[0].cell == 0
        assert port.policies[1].cell == 3
        assert port.total_exposure() == 35

    def test_from_csv_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("age_group,gender,count\n1,f,10\n")
        with pytest.raises(ValueError, match="missing columns"):
            Portfolio.from_csv(path, n_age_groups=2)


class TestCompoundPanjer:
    def test_poisson_unit_severity_is_poisson(self):
        lam = 3.7
        severity = np.array([0.0, 1.0])
        pmf = compound_panjer({"dist": "poisson", "lam": lam}, severity, 40)
        oracle = stats.poisson.pmf(np.arange(41), lam)
        np.testing.assert_allclose(pmf.probabilities, oracle, rtol=0, atol=1e-12)

    def test_nb_unit_severity_is_nbinom(self):
        r, p_fail = 4.0, 0.35
        severity = np.array([0.0, 1.0])
        pmf = compound_panjer({"dist": "nb", "r": r, "p_fail": p_fail}, severity, 60)
        oracle = stats.nbinom.pmf(np.arange(61), r, 1.0 - p_fail)
        np.testing.assert_allclose(pmf.probabilities, oracle, rtol=0, atol=1e-12)

    def test_poisson_general_severity_vs_brute_force(self):
        lam = 2.2
        severity = np.array([0.0, 0.5, 0.3, 0.0, 0.2])
        n_max = 60
        pmf = compound_panjer({"dist": "poisson", "lam": lam}, severity, n_max)
        counts = stats.poisson.pmf(np.arange(80), lam)
        oracle = brute_force_compound(counts, severity, n_max)
        np.testing.assert_allclose(pmf.probabilities, oracle, rtol=0, atol=1e-12)

    def test_nb_general_severity_vs_brute_force(self):
        r, p_fail = 2.5, 0.4
        severity = np.array([0.0, 0.25, 0.25, 0.5])
        n_max = 70
        pmf = compound_panjer({"dist": "nb", "r": r, "p_fail": p_fail}, severity, n_max)
        counts = stats.nbinom.pmf(np.arange(120), r, 1.0 - p_fail)
        oracle = brute_force_compound(counts, severity, n_max)
        np.testing.assert_allclose(pmf.probabilities, oracle, rtol=0, atol=1e-11)

    def test_underflow_large_intensity(self):
        # f(0) = exp(-5000) underflows double precision without the ledger
        lam = 5000.0
        severity = np.array([0.0, 1.0])
        n_max = 6000
        pmf = compound_panjer({"dist": "poisson", "lam": lam}, severity, n_max)
        oracle = stats.poisson.pmf(np.arange(n_max + 1), lam)
        sel = slice(4500, 5501)
        np.testing.assert_allclose(pmf.probabilities[sel], oracle[sel], rtol=1e-8)
        assert pmf.probabilities.sum() == pytest.approx(1.0, abs=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            compound_panjer({"dist": "poisson", "lam": 1.0},
                            np.array([0.5, 0.5]), 10)
        with pytest.raises(ValueError):
            compound_panjer({"dist": "poisson", "lam": 1.0},
                            np.array([0.0, 0.7]), 10)
        with pytest.raises(ValueError):
            compound_panjer({"dist": "poisson", "lam": -1.0},
                            np.array([0.0, 1.0]), 10)
        with pytest.raises(ValueError):
            compound_panjer({"dist": "nb", "r": 0.0, "p_fail": 0.5},
                            np.array([0.0, 1.0]), 10)
        with pytest.raises(ValueError):
            compound_panjer({"dist": "binomial"}, np.array([0.0, 1.0]), 10)

    def test_nb_counting_from_mixture(self):
        c = nb_counting_from_mixture(4.0, 0.25)
        assert c["r"] == pytest.approx(4.0)
        assert c["p_fail"] == pytest.approx(0.5)


class TestSectorSeverity:
    def test_severity_normalized(self):
        rng = np.random.default_rng(0)
        p = desk_params(rng, n_age=1, n_causes=2)
        port = Portfolio(policies=[Policy(0, 1, 10), Policy(1, 4, 5)])
        for k in range(3):
            lam, sev = sector_severity(port, p, k)
            assert lam > 0
            assert sev[0] == 0.0
            assert sev.sum() == pytest.approx(1.0, abs=1e-12)

    def test_empty_sector(self):
        p = ModelParams.zeros(1, 2)
        p.u[:, 2] = -1e4        # cause 2 weight numerically zero
        port = Portfolio(policies=[Policy(0, 1, 10)])
        lam, sev = sector_severity(port, p, 2)
        assert lam == 0.0 and sev is None


class TestPortfolioLoss:
    def _setup(self, seed=1):
        rng = np.random.default_rng(seed)
        p = desk_params(rng, n_age=2, n_causes=2)
        policies = [Policy(cell=c, exposure=e, count=10)
                    for c in range(4) for e in (1, 2, 5)]
        return p, Portfolio(policies=policies)

    def test_mean_identity(self):
        p, port = self._setup()
        pmf = portfolio_loss(port, p)
        q = death_probability(p, 1.0)
        w = cause_weights(p, 1.0)
        mean = sum(pol.count * pol.exposure * q[pol.cell] * w[pol.cell].sum()
                   for pol in port.policies)
        assert pmf.mean() == pytest.approx(mean, rel=1e-8)

    def test_variance_identity(self):
        p, port = self._setup()
        pmf = portfolio_loss(port, p)
        q = death_probability(p, 1.0)
        w = cause_weights(p, 1.0)
        lam_e = np.zeros(p.n_causes + 1)
        lam_e2 = np.zeros(p.n_causes + 1)
        for pol in port.policies:
            lam_e += pol.count * pol.exposure * q[pol.cell] * w[pol.cell]
            lam_e2 += pol.count * pol.exposure ** 2 * q[pol.cell] * w[pol.cell]
        var = lam_e2.sum() + np.sum(p.sigma2 * lam_e[1:] ** 2)
        assert pmf.variance() == pytest.approx(var, rel=1e-6)

    def test_matches_monte_carlo(self):
        p, port = self._setup()
        pmf = portfolio_loss(port, p)
        n_sims = 200_000
        losses = simulate_portfolio_loss(port, p, np.random.default_rng(2), n_sims)
        for n in range(0, 25):
            emp = np.mean(losses == n)
            prob = max(float(pmf.probabilities[n]), emp)
            se = math.sqrt(max(prob * (1 - prob), 1e-12) / n_sims)
            assert abs(pmf.probabilities[n] - emp) < 4 * se + 1e-6

    def test_not_truncated_at_full_support(self):
        p, port = self._setup()
        pmf = portfolio_loss(port, p)
        assert not pmf.truncated
        assert pmf.truncation_mass < 1e-9

    def test_truncation_flagged(self):
        p, port = self._setup()
        pmf = portfolio_loss(port, p, n_max=1)
        assert pmf.truncated
        assert pmf.truncation_mass > 0.0


class TestLossPMF:
    def test_moments_and_cdf(self):
        pmf = LossPMF(probabilities=np.array([0.5, 0.3, 0.15, 0.05]))
        assert pmf.mean() == pytest.approx(0.75)
        assert pmf.variance() == pytest.approx(0.7875)
        np.testing.assert_allclose(pmf.cdf(), [0.5, 0.8, 0.95, 1.0])

    def test_to_csv_round_trip(self, tmp_path):
        pmf = LossPMF(probabilities=np.array([0.5, 0.25, 0.25]))
        path = tmp_path / "loss.csv"
        pmf.to_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        vals = np.array([float(r["probability"]) for r in rows])
        np.testing.assert_array_equal(vals, pmf.probabilities)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LossPMF(probabilities=np.array([0.5, -0.1]))


class TestRiskMeasures:
    def test_hand_computed(self):
        pmf = LossPMF(probabilities=np.array([0.5, 0.3, 0.15, 0.05]))
        var, es = risk_measures(pmf, 0.9)
        assert var == 2
        # tail beyond VaR: 3 * 0.05; atom adjustment: 2 * (0.95 - 0.9)
        assert es == pytest.approx((0.15 + 0.1) / 0.1)

    def test_es_at_least_var(self):
        p, port = TestPortfolioLoss()._setup()
        pmf = portfolio_loss(port, p)
        for alpha in (0.5, 0.9, 0.99, 0.999):
            var, es = risk_measures(pmf, alpha)
            assert es >= var

    def test_var_on_atom(self):
        pmf = LossPMF(probabilities=np.array([0.5, 0.5]))
        var, es = risk_measures(pmf, 0.5)
        assert var == 0
        # ES at exactly the atom boundary averages only the strict tail
        assert es == pytest.approx(1.0)

    def test_validation(self):
        pmf = LossPMF(probabilities=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            risk_measures(pmf, 0.0)
        with pytest.raises(ValueError):
            risk_measures(pmf, 1.0)
        truncated = LossPMF(probabilities=np.array([0.1, 0.1]),
                            truncation_mass=0.8, truncated=True)
        with pytest.raises(ValueError):
            risk_measures(truncated, 0.99)
