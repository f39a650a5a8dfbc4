"""Generative side of the model: gamma risk factors, Poisson death-count
panels and brute-force Monte Carlo portfolio losses.  Serves as the
independent oracle for the likelihood, the sampler calibration and the
Panjer recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import MortalityDataset
from .model import ModelParams, expected_deaths, death_probability, cause_weights


@dataclass
class SimulationSpec:
    population: np.ndarray          # (C, T) people per cell-year
    true_params: ModelParams
    seed: int = 0
    base_year: int = 1987

    def __post_init__(self):
        self.population = np.asarray(self.population)
        if self.population.ndim != 2:
            raise ValueError("population must be (C, T)")
        if self.population.shape[0] != self.true_params.n_cells:
            raise ValueError("population rows must match the parameter cell count")
        if np.any(self.population < 0):
            raise ValueError("population counts must be nonnegative")


@dataclass
class SimulationStats:
    cap_events: int = 0
    total_draws: int = 0


def sample_risk_factors(sigma2: np.ndarray, rng) -> np.ndarray:
    """Independent mean-1 gamma factors, one per cause: Gamma(1/s2, scale s2)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("variances must be strictly positive")
    return rng.gamma(shape=1.0 / sigma2, scale=sigma2)


def sample_death_counts(spec: SimulationSpec, rng=None):
    """Draw a full MortalityDataset from the model.

    Cause 0 counts are plain Poisson; causes k >= 1 are Poisson with the
    yearly gamma factor multiplying the intensity.  Counts are capped so that
    no cell-year exceeds its population (cap events are reported).
    Returns (dataset, stats).
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    params = spec.true_params
    c_n, t_n = spec.population.shape
    k1 = params.n_causes + 1
    t_grid = np.arange(1, t_n + 1, dtype=float)
    rho = expected_deaths(params, spec.population, t_grid)   # (C, K+1, T)
    if not np.all(np.isfinite(rho)):
        raise ValueError("non-finite expected intensities")
    deaths = np.zeros((c_n, k1, t_n), dtype=np.int64)
    stats = SimulationStats()
    for t in range(t_n):
        lam = sample_risk_factors(params.sigma2, rng)
        mult = np.concatenate([[1.0], lam])
        deaths[:, :, t] = rng.poisson(rho[:, :, t] * mult[None, :])
        stats.total_draws += c_n
        # keep the additive split feasible: total deaths can not exceed population
        for c in range(c_n):
            excess = deaths[:, :, t][c].sum() - spec.population[c, t]
            while excess > 0:
                k = int(np.argmax(deaths[c, :, t]))
                cut = min(excess, deaths[c, k, t])
                deaths[c, k, t] -= cut
                excess -= cut
                stats.cap_events += 1
    dataset = MortalityDataset(population=spec.population.astype(np.int64),
                               deaths=deaths, base_year=spec.base_year)
    return dataset, stats


def simulate_portfolio_loss(portfolio, params: ModelParams, rng, n_sims: int,
                            t: float = 1.0) -> np.ndarray:
    """Monte Carlo one-period losses in integer exposure units; shape (n_sims,).

    The slow-but-exact generative counterpart of the Panjer recursion: per
    simulation draw the gamma factors, then per policy group Poisson death
    counts per cause, accumulating exposure times count.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    k_n = params.n_causes
    q = death_probability(params, t)        # (C,)
    w = cause_weights(params, t)            # (C, K+1)
    # conditional on the factors, Poisson counts add, so policies can be
    # aggregated per (exposure level, cause) before sampling
    exposures = sorted({pol.exposure for pol in portfolio.policies})
    exp_idx = {e: j for j, e in enumerate(exposures)}
    rate = np.zeros((len(exposures), k_n + 1))
    for pol in portfolio.policies:
        rate[exp_idx[pol.exposure]] += pol.count * q[pol.cell] * w[pol.cell]
    if np.sum(rate) == 0.0:
        return np.zeros(n_sims)
    lam = rng.gamma(shape=1.0 / params.sigma2, scale=params.sigma2,
                    size=(n_sims, k_n))                       # (n_sims, K)
    mult = np.concatenate([np.ones((n_sims, 1)), lam], axis=1)  # (n_sims, K+1)
    counts = rng.poisson(mult[:, None, :] * rate[None, :, :])   # (n_sims, J, K+1)
    return counts.sum(axis=2) @ np.asarray(exposures, dtype=float)
