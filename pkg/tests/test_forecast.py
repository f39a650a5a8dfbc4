import numpy as np
import pytest

from mortrisk.forecast import (ForecastTable, build_forecast_table,
                               death_rate_forecast, top_causes,
                               weight_posterior)
from mortrisk.mcmc import (PosteriorSamples, free_param_names,
                           params_to_vector)
from mortrisk.model import (ModelParams, cause_weights, death_probability,
                            free_parameter_count, laplace_cdf, year_to_t)

from test_model import random_params


def make_samples(draws, template):
    p = draws.shape[1]
    return PosteriorSamples(draws=draws,
                            param_names=free_param_names(
                                template.n_age_groups, template.n_causes),
                            acceptance_rate=np.zeros(p), template=template)


def constant_samples(params, n_draws=50):
    vec = params_to_vector(params)
    return make_samples(np.tile(vec, (n_draws, 1)), params.copy())


class TestWeightPosterior:
    def test_degenerate_posterior_matches_model(self):
        rng = np.random.default_rng(0)
        p = random_params(rng, n_age=2, n_causes=3)
        s = constant_samples(p)
        for cell in (0, 3):
            for year in (1990, 2011, 2051):
                t = float(year_to_t(year))
                mean, q05, q95 = weight_posterior(s, cell, year)
                ref = cause_weights(p, t)[cell]
                np.testing.assert_allclose(mean, ref, rtol=1e-12)
                np.testing.assert_allclose(q05, ref, rtol=1e-12)
                np.testing.assert_allclose(q95, ref, rtol=1e-12)

    def test_nearest_rank_quantiles(self):
        # vary one alpha across draws; death probability is monotone in alpha,
        # so nearest-rank quantiles commute with the transform
        p = ModelParams.zeros(1, 1)
        vec = params_to_vector(p)
        n = 100
        draws = np.tile(vec, (n, 1))
        alphas = np.linspace(-6, -2, n)
        draws[:, 0] = np.random.default_rng(1).permutation(alphas)
        s = make_samples(draws, p)
        mean, q05, q95 = death_rate_forecast(s, 0, 1990)
        qs = laplace_cdf(alphas)
        assert mean == pytest.approx(qs.mean(), rel=1e-12)
        assert q05 == pytest.approx(qs[4], rel=1e-12)    # ceil(0.05*100)-1
        assert q95 == pytest.approx(qs[94], rel=1e-12)   # ceil(0.95*100)-1

    def test_death_rate_degenerate(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, n_age=1, n_causes=2)
        s = constant_samples(p)
        t = float(year_to_t(2020))
        mean, q05, q95 = death_rate_forecast(s, 1, 2020)
        ref = death_probability(p, t)[1]
        assert mean == pytest.approx(ref, rel=1e-12)
        assert q05 == pytest.approx(ref, rel=1e-12)
        assert q95 == pytest.approx(ref, rel=1e-12)

    def test_empty_posterior(self):
        p = ModelParams.zeros(1, 1)
        s = make_samples(np.empty((0, free_parameter_count(1, 1))), p)
        with pytest.raises(ValueError):
            weight_posterior(s, 0, 2000)
        with pytest.raises(ValueError):
            death_rate_forecast(s, 0, 2000)


class TestTopCauses:
    def test_ordering(self):
        p = ModelParams.zeros(1, 3)
        p.u[:, 1] = 1.0
        p.u[:, 2] = 2.0
        p.u[:, 3] = -1.0
        s = constant_samples(p)
        ranked = top_causes(s, 0, 2000, n=4)
        assert [k for k, *_ in ranked] == [2, 1, 0, 3]
        means = [m for _, m, _, _ in ranked]
        assert means == sorted(means, reverse=True)

    def test_tie_breaks_on_cause_id(self):
        p = ModelParams.zeros(1, 3)   # all weights identical
        s = constant_samples(p)
        ranked = top_causes(s, 0, 2000, n=4)
        assert [k for k, *_ in ranked] == [0, 1, 2, 3]

    def test_n_bounds(self):
        p = ModelParams.zeros(1, 2)
        s = constant_samples(p)
        with pytest.raises(ValueError):
            top_causes(s, 0, 2000, n=0)
        with pytest.raises(ValueError):
            top_causes(s, 0, 2000, n=4)


class TestForecastTable:
    def _table(self):
        rng = np.random.default_rng(3)
        p = random_params(rng, n_age=1, n_causes=3)
        s = constant_samples(p)
        return build_forecast_table(s, years=[2011, 2051], top_n=2)

    def test_structure(self):
        table = self._table()
        assert len(table.rows) == 2 * 2 * 2     # cells x years x top_n
        row = table.rows[0]
        assert set(row) == set(ForecastTable.COLUMNS)
        assert row["rank"] == 1
        assert row["cell_label"] == "a1_f"

    def test_csv_round_trip(self, tmp_path):
        table = self._table()
        path = tmp_path / "forecast.csv"
        table.to_csv(path)
        back = ForecastTable.from_csv(path)
        assert back.rows == table.rows

    def test_json(self, tmp_path):
        import json
        table = self._table()
        path = tmp_path / "forecast.json"
        table.to_json(path)
        with open(path) as fh:
            rows = json.load(fh)
        assert rows == table.rows

    def test_text_rendering(self):
        table = self._table()
        text = table.to_text()
        assert "a1_f  2011" in text
        first = table.rows[0]
        expected = (f"  1. {first['cause']:<16s} {first['mean']:.3f} "
                    f"({first['q95']:.3f} / {first['q05']:.3f})")
        assert expected in text

    def test_requires_years(self):
        rng = np.random.default_rng(4)
        p = random_params(rng, n_age=1, n_causes=2)
        s = constant_samples(p)
        with pytest.raises(ValueError):
            build_forecast_table(s, years=[])

    def test_generic_cause_names(self):
        p = ModelParams.zeros(1, 2)
        s = constant_samples(p)
        table = build_forecast_table(s, years=[2000], top_n=1)
        assert table.rows[0]["cause"].startswith("cause_")

    def test_default_cause_names_when_ten_causes(self):
        p = ModelParams.zeros(9, 10)
        s = constant_samples(p, n_draws=5)
        table = build_forecast_table(s, years=[2000], cells=[0], top_n=1)
        assert table.rows[0]["cause"] == "not elsewhere"
