"""scikit-learn style front end: fit the mortality model by MCMC, then query
forecasts, so the whole pipeline composes with the usual estimator tooling
(get_params / set_params / clone).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import MortalityDataset
from .forecast import build_forecast_table, death_rate_forecast, weight_posterior
from .likelihood import init_params_moment_matching, log_likelihood
from .mcmc import SamplerConfig, run_chains_parallel, vector_to_params, diagnostics


class MortalityRiskEstimator(BaseEstimator):
    """Gamma-mixed Poisson cause-of-death model fit by MH-within-Gibbs.

    Parameters
    ----------
    n_steps, burn_in, adapt_window, proposal_sd, sigma2_max, thin :
        sampler settings, one chain configuration shared by all chains.
    n_chains : number of independent chains (seeds seed, seed+1, ...).
    seed : base seed.
    n_jobs : worker processes for the chains (None = one per chain).
    """

    def __init__(self, n_steps=35_000, burn_in=5_000, proposal_sd="auto",
                 n_chains=4, seed=0, adapt_window=500, sigma2_max=100.0,
                 thin=1, n_jobs=None):
        self.n_steps = n_steps
        self.burn_in = burn_in
        self.proposal_sd = proposal_sd
        self.n_chains = n_chains
        self.seed = seed
        self.adapt_window = adapt_window
        self.sigma2_max = sigma2_max
        self.thin = thin
        self.n_jobs = n_jobs

    def _configs(self):
        return [SamplerConfig(n_steps=self.n_steps, burn_in=self.burn_in,
                              proposal_sd=self.proposal_sd, seed=self.seed + i,
                              adapt_window=self.adapt_window,
                              sigma2_max=self.sigma2_max, thin=self.thin)
                for i in range(self.n_chains)]

    def fit(self, X: MortalityDataset, y=None):
        """Run moment-matching initialization and the MCMC chains on X."""
        if not isinstance(X, MortalityDataset):
            raise TypeError("X must be a MortalityDataset")
        init = init_params_moment_matching(X)
        self.init_params_ = init
        self.chains_ = run_chains_parallel(
            X, [init.copy() for _ in range(self.n_chains)], self._configs(),
            max_workers=self.n_jobs)
        pooled = np.vstack([c.draws for c in self.chains_])
        self.params_ = vector_to_params(pooled.mean(axis=0), init)
        self.base_year_ = X.base_year
        self.log_likelihood_ = log_likelihood(X, self.params_)
        return self

    def score(self, X: MortalityDataset, y=None) -> float:
        """Log-likelihood of X at the posterior-mean parameters."""
        check_is_fitted(self, "params_")
        return log_likelihood(X, self.params_)

    def predict_weights(self, cell: int, year: int):
        """Posterior (mean, q05, q95) cause weights for a cell and year."""
        check_is_fitted(self, "chains_")
        return weight_posterior(self._pooled(), cell, year, self.base_year_)

    def predict_death_rate(self, cell: int, year: int):
        check_is_fitted(self, "chains_")
        return death_rate_forecast(self._pooled(), cell, year, self.base_year_)

    def forecast_table(self, years, cells=None, top_n: int = 3):
        check_is_fitted(self, "chains_")
        return build_forecast_table(self._pooled(), years, cells=cells,
                                    top_n=top_n, base_year=self.base_year_)

    def diagnostics(self, X: MortalityDataset = None) -> dict:
        check_is_fitted(self, "chains_")
        return diagnostics(self.chains_, data=X)

    def _pooled(self):
        from .mcmc import PosteriorSamples
        first = self.chains_[0]
        return PosteriorSamples(
            draws=np.vstack([c.draws for c in self.chains_]),
            param_names=first.param_names,
            acceptance_rate=np.mean([c.acceptance_rate for c in self.chains_], axis=0),
            template=first.template, chain_id=-1, seed=self.seed,
            config=first.config)
