"""Exact one-period portfolio loss distributions via Panjer recursion.

Each gamma-mixed cause forms a compound negative-binomial sector, the
idiosyncratic cause a compound Poisson sector; the portfolio loss pmf is the
convolution of the independent sectors.  Value-at-risk and expected shortfall
are read off the discrete pmf.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, cause_weights, death_probability

TAIL_TOLERANCE = 1e-6
UNDERFLOW_LIMIT = -700.0


@dataclass
class Policy:
    cell: int                 # flattened cell index
    exposure: int             # annuity amount in integer loss units
    count: int = 1            # number of identical policies

    def __post_init__(self):
        if self.exposure < 1 or int(self.exposure) != self.exposure:
            raise ValueError("exposure must be a positive integer of loss units")
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass
class Portfolio:
    policies: list
    loss_unit: float = 1.0
    valuation_t: float = 1.0

    def __post_init__(self):
        if not self.policies:
            raise ValueError("portfolio must contain at least one policy")

    def total_exposure(self) -> int:
        return sum(p.exposure * p.count for p in self.policies)

    @classmethod
    def from_csv(cls, path, n_age_groups: int, loss_unit: float = 1.0,
                 valuation_t: float = 1.0) -> "Portfolio":
        from .model import cell_index
        policies = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"age_group", "gender", "exposure_units", "count"}
            missing = required - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"portfolio CSV missing columns: {sorted(missing)}")
            for row in reader:
                policies.append(Policy(
                    cell=cell_index(int(row["age_group"]), row["gender"], n_age_groups),
                    exposure=int(row["exposure_units"]),
                    count=int(row["count"])))
        return cls(policies=policies, loss_unit=loss_unit, valuation_t=valuation_t)


@dataclass
class LossPMF:
    probabilities: np.ndarray     # index = loss in units, starting at 0
    truncation_mass: float = 0.0
    truncated: bool = False

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if np.any(self.probabilities < -1e-15):
            raise ValueError("probabilities must be nonnegative")

    @property
    def support(self) -> np.ndarray:
        return np.arange(len(self.probabilities))

    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities))

    def variance(self) -> float:
        mu = self.mean()
        return float(np.dot((self.support - mu) ** 2, self.probabilities))

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probabilities)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["loss_units", "probability"])
            for n, p in enumerate(self.probabilities):
                writer.writerow([n, repr(float(p))])


def sector_severity(portfolio: Portfolio, params: ModelParams, k: int,
                    t: float = None):
    """Sector intensity and exposure-unit severity pmf for cause k.

    lambda_k sums q_i * w_{i,k} over policies; the severity puts mass on each
    exposure level proportional to its share of that sum.  Empty sectors
    (lambda_k == 0) return (0.0, None).
    """
    if t is None:
        t = portfolio.valuation_t
    q = death_probability(params, t)
    w = cause_weights(params, t)
    max_exposure = max(p.exposure for p in portfolio.policies)
    severity = np.zeros(max_exposure + 1)
    lam = 0.0
    for pol in portfolio.policies:
        contrib = pol.count * q[pol.cell] * w[pol.cell, k]
        lam += contrib
        severity[pol.exposure] += contrib
    if lam == 0.0:
        return 0.0, None
    return float(lam), severity / lam


def compound_panjer(counting: dict, severity: np.ndarray, n_max: int) -> LossPMF:
    """Compound pmf for an (a, b, 0)-class counting distribution.

    counting is {"dist": "poisson", "lam": x} or
    {"dist": "nb", "r": r, "p_fail": p}.  severity[0] must be zero.  The
    recursion runs in linear space with an exponent ledger so that huge
    intensities do not underflow f(0).
    """
    severity = np.asarray(severity, dtype=float)
    if severity[0] != 0.0:
        raise ValueError("severity must put no mass at 0 (exposures >= 1)")
    if abs(severity.sum() - 1.0) > 1e-9:
        raise ValueError("severity must sum to 1")
    if counting["dist"] == "poisson":
        lam = counting["lam"]
        if lam < 0:
            raise ValueError("Poisson intensity must be nonnegative")
        a, b = 0.0, lam
        log_f0 = -lam
    elif counting["dist"] == "nb":
        r, p = counting["r"], counting["p_fail"]
        if r <= 0 or not 0 <= p < 1:
            raise ValueError("need r > 0 and p_fail in [0, 1)")
        a, b = p, (r - 1.0) * p
        log_f0 = r * math.log1p(-p)
    else:
        raise ValueError(f"unknown counting distribution {counting['dist']!r}")

    j_max = len(severity) - 1
    f = np.zeros(n_max + 1)
    log_scale = 0.0
    if log_f0 < UNDERFLOW_LIMIT:
        log_scale = log_f0 - UNDERFLOW_LIMIT   # negative offset applied at the end
        f[0] = math.exp(UNDERFLOW_LIMIT)
    else:
        f[0] = math.exp(log_f0)
    for n in range(1, n_max + 1):
        acc = 0.0
        for j in range(1, min(j_max, n) + 1):
            g = severity[j]
            if g != 0.0:
                acc += (a + b * j / n) * g * f[n - j]
        f[n] = acc
        if f[n] > 1e280:
            # rescale everything computed so far; recursion is linear in f
            f[:n + 1] *= math.exp(-100.0)
            log_scale += 100.0
    if log_scale != 0.0:
        # undo the scaling per element in log space (exp(log_scale) alone
        # may overflow even though every unscaled probability is <= 1)
        with np.errstate(divide="ignore"):
            f = np.where(f > 0.0, np.exp(np.log(f, where=f > 0.0,
                                                out=np.full_like(f, -np.inf))
                                         + log_scale), 0.0)
    total = f.sum()
    tail = 1.0 - total
    return LossPMF(probabilities=f, truncation_mass=max(tail, 0.0),
                   truncated=tail > TAIL_TOLERANCE)


def nb_counting_from_mixture(lam: float, sigma2: float) -> dict:
    """Negative-binomial sector counting law induced by the gamma mixture."""
    r = 1.0 / sigma2
    p_fail = sigma2 * lam / (1.0 + sigma2 * lam)
    return {"dist": "nb", "r": r, "p_fail": p_fail}


def portfolio_loss(portfolio: Portfolio, params: ModelParams, t: float = None,
                   n_max: int = None) -> LossPMF:
    """Exact loss pmf: convolution of the idiosyncratic compound-Poisson
    sector and one compound-negative-binomial sector per gamma-mixed cause.
    """
    if t is None:
        t = portfolio.valuation_t
    if n_max is None:
        n_max = portfolio.total_exposure()
    pmfs = []
    truncated = False
    for k in range(params.n_causes + 1):
        lam, severity = sector_severity(portfolio, params, k, t)
        if severity is None:
            continue
        if k == 0:
            counting = {"dist": "poisson", "lam": lam}
        else:
            counting = nb_counting_from_mixture(lam, params.sigma2[k - 1])
        sector = compound_panjer(counting, severity, n_max)
        truncated = truncated or sector.truncated
        pmfs.append(sector.probabilities)
    out = pmfs[0]
    for nxt in pmfs[1:]:
        out = np.convolve(out, nxt)[:n_max + 1]
    tail = max(1.0 - out.sum(), 0.0)
    return LossPMF(probabilities=out, truncation_mass=tail,
                   truncated=truncated or tail > TAIL_TOLERANCE)


def risk_measures(pmf: LossPMF, alpha: float):
    """(VaR, ES) at level alpha from the discrete loss pmf.

    VaR is the smallest n with CDF(n) >= alpha.  ES averages the tail beyond
    VaR with the standard adjustment for the atom at VaR, so ES >= VaR and ES
    is continuous in alpha between atoms.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    cdf = pmf.cdf()
    var = int(np.searchsorted(cdf, alpha, side="left"))
    if var >= len(cdf):
        raise ValueError("alpha beyond the truncated support; increase n_max")
    support = pmf.support
    tail_mass = support[var + 1:] @ pmf.probabilities[var + 1:]
    es = (tail_mass + var * (cdf[var] - alpha)) / (1.0 - alpha)
    return var, float(es)
