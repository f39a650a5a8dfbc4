"""Closed-form log-likelihood of the gamma-mixed Poisson mortality model,
its building blocks, posterior risk-factor estimates and moment-matching
initialization of the parameters.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .dataset import MortalityDataset
from .model import (ModelParams, cause_weights, death_probability,
                    expected_deaths, laplace_ppf, trend_reduction)

SIGMA2_FLOOR = 1e-4


def mixed_poisson_log_pmf(n, rho, sigma2):
    """Log pmf of a Poisson with a mean-1, variance-sigma2 gamma mixing factor.

    This is negative binomial with r = 1/sigma2 and failure probability
    sigma2*rho / (1 + sigma2*rho); mean rho, variance rho + sigma2*rho**2.
    """
    n = np.asarray(n, dtype=float)
    rho = np.asarray(rho, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be nonnegative")
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be strictly positive")
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise ValueError("n must be a nonnegative integer")
    r = 1.0 / sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (gammaln(r + n) - gammaln(r) - gammaln(n + 1.0)
               + r * np.log(r / (r + rho))
               + np.where(n > 0, n * np.log(rho / (r + rho)), 0.0))
    out = np.where((rho == 0) & (n > 0), -np.inf, out)
    return float(out) if out.ndim == 0 else out


def map_risk_factor(n_k, rho_k, sigma2_k):
    """Posterior mode and mean of a risk factor given year totals.

    The gamma prior (shape 1/s2, rate 1/s2) is conjugate, so the posterior is
    Gamma(1/s2 + n_k, rate 1/s2 + rho_k).  Returns (mode, mean).
    """
    n_k = np.asarray(n_k, dtype=float)
    rho_k = np.asarray(rho_k, dtype=float)
    sigma2_k = np.asarray(sigma2_k, dtype=float)
    if np.any(rho_k < 0) or np.any(sigma2_k <= 0):
        raise ValueError("need rho_k >= 0 and sigma2_k > 0")
    r = 1.0 / sigma2_k
    mean = (r + n_k) / (r + rho_k)
    mode = np.maximum(0.0, (r + n_k - 1.0) / (r + rho_k))
    if mean.ndim == 0:
        return float(mode), float(mean)
    return mode, mean


def _xlogy(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(y), 0.0)
    return np.where((x > 0) & (y == 0), -np.inf, out)


def log_likelihood(data: MortalityDataset, params: ModelParams) -> float:
    """Log of the unconditional likelihood with the gamma factors integrated out.

    Idiosyncratic deaths (cause 0) contribute independent Poisson terms; each
    gamma-mixed cause k >= 1 contributes one negative-binomial-type factor per
    year on the national totals plus per-cell intensity terms.  Returns -inf
    when some cell has a positive count against a zero intensity.
    """
    if data.n_causes != params.n_causes or data.n_cells != params.n_cells:
        raise ValueError("dataset and parameter dimensions do not match")
    t_grid = data.t_grid
    rho = expected_deaths(params, data.population, t_grid)  # (C, K+1, T)
    n = data.deaths
    sigma2 = params.sigma2

    # Per-year evaluation, summed in fixed year order for bit-stable results.
    per_year = per_year_log_likelihood(n, rho, sigma2)
    return float(np.sum(per_year))


def per_year_log_likelihood(n, rho, sigma2) -> np.ndarray:
    """Per-year additive terms of the log-likelihood; shape (T,)."""
    n = np.asarray(n, dtype=float)
    # idiosyncratic cause: plain Poisson over every cell
    idio = (-rho[:, 0, :] + _xlogy(n[:, 0, :], rho[:, 0, :])
            - gammaln(n[:, 0, :] + 1.0)).sum(axis=0)

    n_k = n[:, 1:, :].sum(axis=0)          # (K, T)
    rho_k = rho[:, 1:, :].sum(axis=0)      # (K, T)
    r = (1.0 / sigma2)[:, None]            # (K, 1)
    gamma_terms = (gammaln(r + n_k) - gammaln(r) - r * np.log(sigma2)[:, None]
                   - (r + n_k) * np.log(r + rho_k))
    cell_terms = (_xlogy(n[:, 1:, :], rho[:, 1:, :])
                  - gammaln(n[:, 1:, :] + 1.0)).sum(axis=0)
    return idio + gamma_terms.sum(axis=0) + cell_terms.sum(axis=0)


def cause_aggregates(data: MortalityDataset, params: ModelParams):
    """(n_k(t), rho_k(t)) totals over all cells, causes k >= 1; shapes (K, T)."""
    rho = expected_deaths(params, data.population, data.t_grid)
    return data.deaths[:, 1:, :].sum(axis=0), rho[:, 1:, :].sum(axis=0)


def map_risk_factor_series(data: MortalityDataset, params: ModelParams):
    """MAP (mode) estimates of Lambda_k(t) for every gamma-mixed cause; (K, T)."""
    n_k, rho_k = cause_aggregates(data, params)
    mode, _ = map_risk_factor(n_k, rho_k, params.sigma2[:, None])
    return mode


def init_params_moment_matching(data: MortalityDataset) -> ModelParams:
    """Pragmatic starting values to shorten MCMC burn-in.

    u: log cause fractions (counts smoothed by +0.5), relative to cause 0.
    alpha, beta: least squares of inverse-Laplace crude rates on the trend
    transform.  sigma2: sample variance of n_k(t)/rho_k(t) minus the Poisson
    part, floored at 1e-4.  v starts at 0.
    """
    if data.n_years < 2:
        raise ValueError("moment matching needs at least two years of data")
    if np.any(data.population.sum(axis=1) == 0):
        bad = int(np.argmax(data.population.sum(axis=1) == 0))
        raise ValueError(f"cell index {bad} has zero population in every year")

    c, k1, t_n = data.n_cells, data.n_causes + 1, data.n_years
    params = ModelParams.zeros(n_age_groups=c // 2, n_causes=k1 - 1)
    t_grid = data.t_grid

    # softmax logits from pooled cause fractions, gauge u[:,0] = 0
    pooled = data.deaths.sum(axis=2) + 0.5          # (C, K+1)
    params.u[:] = np.log(pooled) - np.log(pooled[:, :1])

    # alpha, beta from per-cell regression of F^-1(rate) on the trend values
    for i in range(c):
        m = data.population[i].astype(float)
        d = data.deaths[i].sum(axis=0).astype(float)
        ok = m > 0
        if ok.sum() < 2:
            raise ValueError(f"cell index {i} has fewer than two years with population")
        rate = np.clip(d[ok] / m[ok], 1e-12, 1.0 - 1e-12)
        y = laplace_ppf(rate)
        x = trend_reduction(params.zeta[i], params.eta[i], t_grid[ok])
        slope, intercept = np.polyfit(x, y, 1)
        params.alpha[i] = intercept
        params.beta[i] = slope

    # sigma2 from overdispersion of the yearly cause totals
    rho = expected_deaths(params, data.population, t_grid)
    n_k = data.deaths[:, 1:, :].sum(axis=0)
    rho_k = np.maximum(rho[:, 1:, :].sum(axis=0), 1e-12)
    z = n_k / rho_k
    poisson_part = np.mean(1.0 / rho_k, axis=1)
    params.sigma2[:] = np.maximum(np.var(z, axis=1, ddof=1) - poisson_part,
                                  SIGMA2_FLOOR)
    return params
