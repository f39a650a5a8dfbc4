"""Core parametric model: trend reduction, Laplace link, death probabilities,
softmax cause weights and expected-death intensities.

Everything here is a pure function of a :class:`ModelParams` instance and
time.  Cells are (age group, gender) pairs, flattened into a single index so
that all parameter containers are plain numpy arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

GENDERS = ("f", "m")

DEFAULT_AGE_GROUPS = 9
DEFAULT_CAUSES = 10
DEFAULT_BASE_YEAR = 1987
DEFAULT_ETA = 1.0 / 150.0


def cell_index(age_group: int, gender: str, n_age_groups: int) -> int:
    """Flattened cell index for (age_group, gender), age groups 1-based."""
    if not 1 <= age_group <= n_age_groups:
        raise ValueError(f"age_group {age_group} outside 1..{n_age_groups}")
    if gender not in GENDERS:
        raise ValueError(f"gender must be one of {GENDERS}, got {gender!r}")
    return 2 * (age_group - 1) + GENDERS.index(gender)


def cell_label(index: int) -> str:
    """Inverse of cell_index, rendered as e.g. 'a3_f'."""
    age = index // 2 + 1
    return f"a{age}_{GENDERS[index % 2]}"


def iter_cells(n_age_groups: int):
    for age in range(1, n_age_groups + 1):
        for g in GENDERS:
            yield age, g


def laplace_cdf(x):
    """CDF of the standard Laplace distribution.

    For negative arguments this equals exp(x)/2, so the link is log-linear
    for small death probabilities.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("laplace_cdf requires finite input")
    out = np.where(x < 0.0, 0.5 * np.exp(np.minimum(x, 0.0)),
                   1.0 - 0.5 * np.exp(-np.maximum(x, 0.0)))
    # keep the value strictly inside (0,1) even where exp under/overflows
    out = np.clip(out, 1e-300, 1.0 - 1e-16)
    return float(out) if out.ndim == 0 else out


def laplace_ppf(p):
    """Inverse of :func:`laplace_cdf`, used by moment-matching initialization."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("laplace_ppf requires p in (0,1)")
    out = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
    return float(out) if out.ndim == 0 else out


def trend_reduction(zeta, eta, t):
    """Bounded time transform arctan(zeta + eta*t) / eta.

    Strictly increasing in t, bounded in (-pi/(2 eta), pi/(2 eta)), so linear
    trends flatten out instead of driving probabilities to 0 or 1.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0.0):
        raise ValueError("trend reduction requires eta > 0")
    out = np.arctan(np.asarray(zeta, dtype=float) + eta * np.asarray(t, dtype=float)) / eta
    return float(out) if out.ndim == 0 else out


@dataclass
class ModelParams:
    """All estimable parameters plus the fixed trend-reduction constants.

    Shapes (C = 2 * n_age_groups cells, K non-idiosyncratic causes):
      alpha, beta, zeta, eta : (C,)
      u, v                   : (C, K+1), column 0 is the idiosyncratic cause
      phi, psi               : (K+1,)
      sigma2                 : (K,)  variance of the mean-1 gamma factor k=1..K
    """

    alpha: np.ndarray
    beta: np.ndarray
    u: np.ndarray
    v: np.ndarray
    sigma2: np.ndarray
    zeta: np.ndarray = None
    eta: np.ndarray = None
    phi: np.ndarray = None
    psi: np.ndarray = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        n_cells = self.alpha.shape[0]
        if n_cells % 2 != 0:
            raise ValueError("number of cells must be even (two genders)")
        if self.u.shape != (n_cells, self.n_causes + 1):
            raise ValueError(f"u has shape {self.u.shape}, expected {(n_cells, self.n_causes + 1)}")
        if self.v.shape != self.u.shape:
            raise ValueError("u and v must have identical shapes")
        if self.zeta is None:
            self.zeta = np.zeros(n_cells)
        if self.eta is None:
            self.eta = np.full(n_cells, DEFAULT_ETA)
        if self.phi is None:
            self.phi = np.zeros(self.n_causes + 1)
        if self.psi is None:
            self.psi = np.full(self.n_causes + 1, DEFAULT_ETA)
        self.zeta = np.asarray(self.zeta, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.psi = np.asarray(self.psi, dtype=float)
        for name, arr, shape in (("beta", self.beta, (n_cells,)),
                                 ("zeta", self.zeta, (n_cells,)),
                                 ("eta", self.eta, (n_cells,)),
                                 ("phi", self.phi, (self.n_causes + 1,)),
                                 ("psi", self.psi, (self.n_causes + 1,)),
                                 ("sigma2", self.sigma2, (self.n_causes,))):
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        if np.any(self.eta <= 0.0) or np.any(self.psi <= 0.0):
            raise ValueError("eta and psi must be strictly positive")
        if np.any(self.sigma2 <= 0.0):
            raise ValueError("all risk-factor variances must be strictly positive")

    @property
    def n_cells(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_age_groups(self) -> int:
        return self.n_cells // 2

    @property
    def n_causes(self) -> int:
        return self.sigma2.shape[0] if self.sigma2.ndim else 0

    def copy(self) -> "ModelParams":
        return ModelParams(self.alpha.copy(), self.beta.copy(), self.u.copy(),
                           self.v.copy(), self.sigma2.copy(), self.zeta.copy(),
                           self.eta.copy(), self.phi.copy(), self.psi.copy())

    def to_json(self) -> str:
        doc = {name: getattr(self, name).tolist()
               for name in ("alpha", "beta", "u", "v", "sigma2", "zeta", "eta", "phi", "psi")}
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        doc = json.loads(text)
        return cls(**{k: np.array(v, dtype=float) for k, v in doc.items()})

    @classmethod
    def zeros(cls, n_age_groups: int = DEFAULT_AGE_GROUPS,
              n_causes: int = DEFAULT_CAUSES,
              sigma2: float = 0.1) -> "ModelParams":
        c = 2 * n_age_groups
        return cls(alpha=np.zeros(c), beta=np.zeros(c),
                   u=np.zeros((c, n_causes + 1)), v=np.zeros((c, n_causes + 1)),
                   sigma2=np.full(n_causes, sigma2))


def raw_parameter_count(n_age_groups: int, n_causes: int) -> int:
    """alpha + beta + u + v + sigma2 entries: 442 for A=9, K=10."""
    c = 2 * n_age_groups
    return 2 * c + 2 * c * (n_causes + 1) + n_causes


def free_parameter_count(n_age_groups: int, n_causes: int) -> int:
    """Raw count minus the 2C gauge-fixed softmax coordinates: 406 by default."""
    return raw_parameter_count(n_age_groups, n_causes) - 2 * 2 * n_age_groups


def self_expand(arr, t):
    t = np.asarray(t)
    return arr.reshape(arr.shape + (1,) * t.ndim)


def death_probability(params: ModelParams, t):
    """Death probabilities q_i(t) for all cells; shape (C,) + t.shape.

    Bounded away from 0 and 1 for all finite t because the trend transform
    is bounded.
    """
    t = np.asarray(t, dtype=float)
    trend = trend_reduction(self_expand(params.zeta, t), self_expand(params.eta, t), t)
    return laplace_cdf(self_expand(params.alpha, t) + self_expand(params.beta, t) * trend)


def cause_weights(params: ModelParams, t):
    """Softmax cause weights w_{i,k}(t); shape (C, K+1) + t.shape.

    Evaluated with max-subtraction so large u, v never overflow; every weight
    is strictly positive and each cell's weights sum to one.
    """
    t = np.asarray(t, dtype=float)
    trend = trend_reduction(self_expand(params.phi, t), self_expand(params.psi, t), t)  # (K+1,)+t
    logits = (params.u.reshape(params.u.shape + (1,) * t.ndim)
              + params.v.reshape(params.v.shape + (1,) * t.ndim) * trend[np.newaxis])
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def expected_deaths(params: ModelParams, population, t):
    """Poisson intensities rho_{i,k}(t) = m_i(t) q_i(t) w_{i,k}(t).

    population broadcasts against (C,) + t.shape; result is (C, K+1) + t.shape.
    Summing over causes recovers m * q exactly.
    """
    q = death_probability(params, t)
    w = cause_weights(params, t)
    mq = np.asarray(population, dtype=float) * q
    return np.expand_dims(mq, 1) * w


def year_to_t(year, base_year: int = DEFAULT_BASE_YEAR):
    """Calendar year to model time: base_year maps to t=1."""
    return np.asarray(year) - base_year + 1
