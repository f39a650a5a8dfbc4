"""Random-walk Metropolis-Hastings-within-Gibbs sampler over the free model
parameters, with truncated-normal proposals, burn-in adaptation, multi-chain
support, persistence and convergence diagnostics.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import gamma as gamma_dist, kstest, pearsonr

from . import _kernel
from .dataset import MortalityDataset
from .likelihood import map_risk_factor_series
from .model import ModelParams, cell_label, trend_reduction

DEFAULT_SIGMA2_MAX = 100.0


# ---------------------------------------------------------------------------
# truncated normal primitives

def truncated_normal_sample(mean, sd, lo, hi, rng):
    """Draw from Normal(mean, sd) conditioned to (lo, hi) via inverse CDF."""
    if not sd > 0:
        raise ValueError("sd must be positive")
    if not lo < hi:
        raise ValueError("need lo < hi")
    a = ndtr((lo - mean) / sd) if np.isfinite(lo) else 0.0
    b = ndtr((hi - mean) / sd) if np.isfinite(hi) else 1.0
    p = a + rng.random() * (b - a)
    x = mean + sd * ndtri(p)
    return float(min(max(x, np.nextafter(lo, hi)), np.nextafter(hi, lo)))


def truncated_normal_log_density(x, mean, sd, lo, hi):
    """Log density of the (lo, hi)-truncated Normal(mean, sd); -inf outside."""
    if not sd > 0:
        raise ValueError("sd must be positive")
    if not lo < hi:
        raise ValueError("need lo < hi")
    if not lo < x < hi:
        return -np.inf
    a = ndtr((lo - mean) / sd) if np.isfinite(lo) else 0.0
    b = ndtr((hi - mean) / sd) if np.isfinite(hi) else 1.0
    z = (x - mean) / sd
    return float(-0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - math.log(sd)
                 - math.log(b - a))


# ---------------------------------------------------------------------------
# parameter vector layout

def free_param_names(n_age_groups: int, n_causes: int) -> list:
    """Stable column names, in the kernel's flat-vector order."""
    cells = [cell_label(i) for i in range(2 * n_age_groups)]
    names = [f"alpha_{c}" for c in cells] + [f"beta_{c}" for c in cells]
    names += [f"u_{c}_k{k}" for c in cells for k in range(1, n_causes + 1)]
    names += [f"v_{c}_k{k}" for c in cells for k in range(1, n_causes + 1)]
    names += [f"sigma2_k{k}" for k in range(1, n_causes + 1)]
    return names


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([params.alpha, params.beta,
                           params.u[:, 1:].ravel(), params.v[:, 1:].ravel(),
                           params.sigma2])


def vector_to_params(vec: np.ndarray, template: ModelParams) -> ModelParams:
    """Rebuild a ModelParams from a flat free vector."""
    c, k = template.n_cells, template.n_causes
    out = template.copy()
    pos = 0
    out.alpha[:] = vec[pos:pos + c]; pos += c
    out.beta[:] = vec[pos:pos + c]; pos += c
    # the gauge column is not part of the free vector; it is carried over
    # from the template (zero under the sampling convention)
    out.u[:, 0] = template.u[:, 0]
    out.u[:, 1:] = vec[pos:pos + c * k].reshape(c, k); pos += c * k
    out.v[:, 0] = template.v[:, 0]
    out.v[:, 1:] = vec[pos:pos + c * k].reshape(c, k); pos += c * k
    out.sigma2[:] = vec[pos:pos + k]
    return out


# ---------------------------------------------------------------------------
# configuration and results

def auto_proposal_scales(data: MortalityDataset, init: ModelParams) -> np.ndarray:
    """Per-parameter starting proposal scales, roughly 2.4x the curvature-based
    posterior spread.  Burn-in adaptation refines these; they only need the
    right order of magnitude."""
    t_grid = data.t_grid
    tq_std = max(float(np.std(trend_reduction(init.zeta[:, None], init.eta[:, None],
                                              t_grid[None, :]), axis=1).mean()), 1e-6)
    tw_std = max(float(np.std(trend_reduction(init.phi[:, None], init.psi[:, None],
                                              t_grid[None, :]), axis=1).mean()), 1e-6)
    d_cell = data.deaths.sum(axis=(1, 2)).astype(float)          # (C,)
    d_cause = data.deaths.sum(axis=2).astype(float)              # (C, K+1)
    sd_alpha = 2.4 / np.sqrt(d_cell + 1.0)
    sd_beta = sd_alpha / tq_std
    logit_var = 1.0 / (d_cause[:, 1:] + 1.0) + 1.0 / (d_cause[:, :1] + 1.0)
    sd_u = np.minimum(2.4 * np.sqrt(logit_var), 1.0)
    sd_v = np.minimum(sd_u / tw_std, 10.0)
    t_n = data.n_years
    sd_sigma2 = 2.4 * init.sigma2 * math.sqrt(2.0 / max(t_n - 1, 1))
    return np.concatenate([sd_alpha, sd_beta, sd_u.ravel(), sd_v.ravel(), sd_sigma2])


@dataclass
class SamplerConfig:
    n_steps: int = 35_000
    burn_in: int = 5_000
    proposal_sd: object = "auto"        # "auto", scalar, per-group dict, or full array
    seed: int = 0
    adapt_window: int = 500
    sigma2_max: float = DEFAULT_SIGMA2_MAX
    thin: int = 1

    def validate(self):
        if not 0 <= self.burn_in < self.n_steps:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_steps")
        if self.adapt_window < 1 or self.thin < 1:
            raise ValueError("adapt_window and thin must be >= 1")
        if self.sigma2_max <= 0:
            raise ValueError("sigma2_max must be positive")

    def proposal_sd_vector(self, n_age_groups: int, n_causes: int,
                           data: MortalityDataset = None,
                           init: ModelParams = None) -> np.ndarray:
        c, k = 2 * n_age_groups, n_causes
        p = 2 * c + 2 * c * k + k
        sd = self.proposal_sd
        if isinstance(sd, str):
            if sd != "auto":
                raise ValueError(f"unknown proposal_sd spec {sd!r}")
            if data is None or init is None:
                raise ValueError("proposal_sd='auto' needs data and init")
            vec = auto_proposal_scales(data, init)
        elif np.isscalar(sd):
            vec = np.full(p, float(sd))
        elif isinstance(sd, dict):
            vec = np.concatenate([
                np.full(c, float(sd.get("alpha", 0.05))),
                np.full(c, float(sd.get("beta", 0.05))),
                np.full(c * k, float(sd.get("u", 0.05))),
                np.full(c * k, float(sd.get("v", 0.05))),
                np.full(k, float(sd.get("sigma2", 0.05))),
            ])
        else:
            vec = np.asarray(sd, dtype=float).copy()
            if vec.shape != (p,):
                raise ValueError(f"proposal_sd array must have length {p}")
        if np.any(vec <= 0):
            raise ValueError("all proposal standard deviations must be positive")
        return vec


@dataclass
class PosteriorSamples:
    """Post-burn-in draws of one chain, as a (n_draws, n_free) matrix."""

    draws: np.ndarray
    param_names: list
    acceptance_rate: np.ndarray
    template: ModelParams
    chain_id: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def params_at(self, i: int) -> ModelParams:
        return vector_to_params(self.draws[i], self.template)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]

    def posterior_mean_params(self) -> ModelParams:
        return vector_to_params(self.draws.mean(axis=0), self.template)

    def save(self, csv_path, meta_path=None) -> None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.param_names)
            for row in self.draws:
                writer.writerow([repr(float(x)) for x in row])
        if meta_path is not None:
            meta = {
                "chain_id": self.chain_id,
                "seed": self.seed,
                "config": self.config,
                "acceptance_rate": self.acceptance_rate.tolist(),
                "template": json.loads(self.template.to_json()),
            }
            with open(meta_path, "w") as fh:
                json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, csv_path, meta_path) -> "PosteriorSamples":
        with open(meta_path) as fh:
            meta = json.load(fh)
        template = ModelParams.from_json(json.dumps(meta["template"]))
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            names = next(reader)
            draws = np.array([[float(x) for x in row] for row in reader])
        return cls(draws=draws, param_names=names,
                   acceptance_rate=np.array(meta["acceptance_rate"]),
                   template=template, chain_id=meta["chain_id"],
                   seed=meta["seed"], config=meta["config"])


# ---------------------------------------------------------------------------
# sampling

def _kernel_inputs(data: MortalityDataset, init: ModelParams):
    t_grid = data.t_grid
    tq = trend_reduction(init.zeta[:, None], init.eta[:, None], t_grid[None, :])
    tw = trend_reduction(init.phi[:, None], init.psi[:, None], t_grid[None, :])
    m = data.population.astype(np.float64)
    n = data.deaths.astype(np.float64)
    nk = data.deaths[:, 1:, :].sum(axis=0).astype(np.float64)
    return m, n, nk, np.ascontiguousarray(tq), np.ascontiguousarray(tw)


def run_chain(data: MortalityDataset, init: ModelParams, cfg: SamplerConfig,
              chain_id: int = 0) -> PosteriorSamples:
    """Run one chain; fully determined by (data, init, cfg.seed)."""
    cfg.validate()
    if np.any(init.u[:, 0] != 0.0) or np.any(init.v[:, 0] != 0.0):
        raise ValueError("initial parameters must have gauge columns u[:,0] = v[:,0] = 0")
    if np.any(init.sigma2 >= cfg.sigma2_max):
        raise ValueError("initial sigma2 must lie inside (0, sigma2_max)")
    m, n, nk, tq, tw = _kernel_inputs(data, init)
    prop_sd = cfg.proposal_sd_vector(data.n_age_groups, data.n_causes,
                                     data=data, init=init)
    alpha = init.alpha.copy()
    beta = init.beta.copy()
    u = init.u.copy()
    v = init.v.copy()
    sigma2 = init.sigma2.copy()
    draws, acc, _ = _kernel._run_chain(
        m, n, nk, tq, tw, alpha, beta, u, v, sigma2, prop_sd,
        cfg.n_steps, cfg.burn_in, cfg.adapt_window, cfg.seed,
        cfg.sigma2_max, cfg.thin)
    n_post = cfg.n_steps - cfg.burn_in
    return PosteriorSamples(
        draws=draws,
        param_names=free_param_names(data.n_age_groups, data.n_causes),
        acceptance_rate=acc / n_post,
        template=init.copy(),
        chain_id=chain_id,
        seed=cfg.seed,
        config={"n_steps": cfg.n_steps, "burn_in": cfg.burn_in,
                "adapt_window": cfg.adapt_window, "sigma2_max": cfg.sigma2_max,
                "thin": cfg.thin})


def gibbs_sweep(current: ModelParams, data: MortalityDataset,
                cfg: SamplerConfig, rng) -> tuple:
    """One full sweep over every free parameter; returns (next, accept_flags).

    Deterministic given the rng state; gauge-fixed coordinates are never
    proposed and remain exactly zero.
    """
    seed = int(rng.integers(0, 2**31 - 1)) if hasattr(rng, "integers") else int(rng)
    one = SamplerConfig(n_steps=1, burn_in=0, proposal_sd=cfg.proposal_sd,
                        seed=seed, adapt_window=cfg.adapt_window,
                        sigma2_max=cfg.sigma2_max)
    samples = run_chain(data, current, one)
    nxt = samples.params_at(0)
    accepts = samples.acceptance_rate > 0
    return nxt, accepts


def _run_chain_job(args):
    data, init, cfg, chain_id = args
    return run_chain(data, init, cfg, chain_id=chain_id)


def run_chains_parallel(data: MortalityDataset, inits, cfgs,
                        max_workers: int = None) -> list:
    """Run independent chains; results identical to running each serially."""
    if len(inits) != len(cfgs) or not inits:
        raise ValueError("need one init per config, at least one chain")
    seeds = [c.seed for c in cfgs]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate chain seeds: {seeds}")
    jobs = [(data, init, cfg, i) for i, (init, cfg) in enumerate(zip(inits, cfgs))]
    if max_workers == 1 or len(jobs) == 1:
        return [_run_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=max_workers or len(jobs)) as pool:
        return list(pool.map(_run_chain_job, jobs))


# ---------------------------------------------------------------------------
# diagnostics

def _autocorr(x: np.ndarray, lag: int) -> float:
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom == 0.0:
        return np.nan
    return float(np.dot(x[:-lag], x[lag:]) / denom)


def effective_sample_size(x: np.ndarray) -> float:
    """Initial-positive-sequence ESS estimator; nan for a constant chain."""
    n = len(x)
    xc = x - x.mean()
    denom = np.dot(xc, xc)
    if denom == 0.0:
        return np.nan
    acf = np.correlate(xc, xc, mode="full")[n - 1:] / denom
    s = 0.0
    for m in range(1, n // 2):
        pair = acf[2 * m - 1] + acf[2 * m]
        if pair <= 0.0:
            break
        s += pair
    return float(n / (1.0 + 2.0 * s))


def potential_scale_reduction(chains: list) -> float:
    """Split-chain R-hat for one scalar parameter across chains."""
    halves = []
    for x in chains:
        h = len(x) // 2
        halves.extend([np.asarray(x[:h], dtype=float), np.asarray(x[h:2 * h], dtype=float)])
    m = len(halves)
    n = len(halves[0])
    means = np.array([h.mean() for h in halves])
    variances = np.array([h.var(ddof=1) for h in halves])
    w = variances.mean()
    b = n * means.var(ddof=1)
    if w == 0.0:
        return np.nan
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def diagnostics(samples: list, data: MortalityDataset = None) -> dict:
    """Convergence report plus approximate model-validation statistics.

    Validation statistics need the dataset: the risk-factor MAP series at the
    posterior-mean parameters is checked for serial correlation, cross-cause
    correlation and the gamma distributional assumption.
    """
    if not samples:
        raise ValueError("diagnostics needs at least one chain")
    if any(s.n_draws < 100 for s in samples):
        raise ValueError("diagnostics needs at least 100 draws per chain")
    names = samples[0].param_names
    p = len(names)
    lag1 = np.full(p, np.nan)
    ess = np.full(p, np.nan)
    rhat = np.full(p, np.nan)
    for j in range(p):
        cols = [s.draws[:, j] for s in samples]
        lag1[j] = np.nanmean([_autocorr(x, 1) for x in cols])
        ess_vals = [effective_sample_size(x) for x in cols]
        ess[j] = np.nansum(ess_vals) if not all(np.isnan(v) for v in ess_vals) else np.nan
        if len(samples) > 1:
            rhat[j] = potential_scale_reduction(cols)
    report = {
        "param_names": names,
        "acceptance_rate": np.mean([s.acceptance_rate for s in samples], axis=0),
        "lag1_autocorr": lag1,
        "ess": ess,
        "rhat": rhat,
        "degenerate": np.array([np.isnan(ess[j]) for j in range(p)]),
    }
    if data is not None:
        pooled = np.vstack([s.draws for s in samples])
        mean_params = vector_to_params(pooled.mean(axis=0), samples[0].template)
        lam = map_risk_factor_series(data, mean_params)      # (K, T)
        t_n = lam.shape[1]
        band = 2.0 / math.sqrt(t_n)
        serial = np.array([_autocorr(lam[k], 1) for k in range(lam.shape[0])])
        cross = []
        for a in range(lam.shape[0]):
            for b_ in range(a + 1, lam.shape[0]):
                r, pval = pearsonr(lam[a], lam[b_])
                cross.append({"pair": (a + 1, b_ + 1), "corr": float(r),
                              "p_value": float(pval), "reject_5pct": bool(pval < 0.05)})
        ks = []
        for k in range(lam.shape[0]):
            shape = 1.0 / mean_params.sigma2[k]
            stat, pval = kstest(lam[k], gamma_dist(a=shape, scale=1.0 / shape).cdf)
            ks.append({"cause": k + 1, "statistic": float(stat), "p_value": float(pval)})
        report["validation"] = {
            "risk_factor_lag1": serial,
            "serial_band": band,
            "serial_within_band": np.abs(serial) < band,
            "cross_cause_ttests": cross,
            "ks_gamma": ks,
        }
    return report
