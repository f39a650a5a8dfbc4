"""Posterior forecast tables: per-cell ranked cause weights and death
probabilities for target calendar years, with posterior means and
nearest-rank 5/95 percent quantiles.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import CAUSE_NAMES
from .mcmc import PosteriorSamples
from .model import (cell_label, laplace_cdf, trend_reduction, year_to_t,
                    DEFAULT_BASE_YEAR)


def _nearest_rank(sorted_vals: np.ndarray, level: float) -> np.ndarray:
    n = sorted_vals.shape[0]
    idx = max(int(math.ceil(level * n)) - 1, 0)
    return sorted_vals[idx]


def _draw_weights(samples: PosteriorSamples, cell: int, t: float) -> np.ndarray:
    """Cause weights of one cell at time t for every draw; (n_draws, K+1)."""
    tmpl = samples.template
    c, k = tmpl.n_cells, tmpl.n_causes
    draws = samples.draws
    u = np.full((draws.shape[0], k + 1), tmpl.u[cell, 0])
    v = np.full((draws.shape[0], k + 1), tmpl.v[cell, 0])
    off_u = 2 * c + cell * k
    off_v = 2 * c + c * k + cell * k
    u[:, 1:] = draws[:, off_u:off_u + k]
    v[:, 1:] = draws[:, off_v:off_v + k]
    trend = trend_reduction(tmpl.phi, tmpl.psi, t)
    logits = u + v * trend[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def weight_posterior(samples: PosteriorSamples, cell: int, year: int,
                     base_year: int = DEFAULT_BASE_YEAR):
    """Per-cause (mean, q05, q95) of the cause weights at the given year."""
    if samples.n_draws == 0:
        raise ValueError("posterior sample is empty")
    t = float(year_to_t(year, base_year))
    w = _draw_weights(samples, cell, t)
    w_sorted = np.sort(w, axis=0)
    return w.mean(axis=0), _nearest_rank(w_sorted, 0.05), _nearest_rank(w_sorted, 0.95)


def top_causes(samples: PosteriorSamples, cell: int, year: int, n: int = 3,
               base_year: int = DEFAULT_BASE_YEAR):
    """Top-n causes by posterior-mean weight; ties break on cause id."""
    k1 = samples.template.n_causes + 1
    if not 1 <= n <= k1:
        raise ValueError(f"n must lie in 1..{k1}")
    mean, q05, q95 = weight_posterior(samples, cell, year, base_year)
    order = sorted(range(k1), key=lambda k: (-mean[k], k))
    return [(k, mean[k], q05[k], q95[k]) for k in order[:n]]


def death_rate_forecast(samples: PosteriorSamples, cell: int, year: int,
                        base_year: int = DEFAULT_BASE_YEAR):
    """(mean, q05, q95) of the cell's death probability at the given year."""
    if samples.n_draws == 0:
        raise ValueError("posterior sample is empty")
    tmpl = samples.template
    t = float(year_to_t(year, base_year))
    c = tmpl.n_cells
    alpha = samples.draws[:, cell]
    beta = samples.draws[:, c + cell]
    trend = trend_reduction(tmpl.zeta[cell], tmpl.eta[cell], t)
    q = laplace_cdf(alpha + beta * trend)
    q_sorted = np.sort(q)
    return (float(q.mean()), float(_nearest_rank(q_sorted, 0.05)),
            float(_nearest_rank(q_sorted, 0.95)))


@dataclass
class ForecastTable:
    """Ranked per-cell cause-weight summaries for a set of target years."""

    rows: list = field(default_factory=list)
    # row: dict with cell, cell_label, year, rank, cause_id, cause, mean, q05, q95

    COLUMNS = ["cell", "cell_label", "year", "rank", "cause_id", "cause",
               "mean", "q05", "q95"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows:
                writer.writerow([row["cell"], row["cell_label"], row["year"],
                                 row["rank"], row["cause_id"], row["cause"],
                                 repr(row["mean"]), repr(row["q05"]), repr(row["q95"])])

    @classmethod
    def from_csv(cls, path) -> "ForecastTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for r in reader:
                rows.append({"cell": int(r["cell"]), "cell_label": r["cell_label"],
                             "year": int(r["year"]), "rank": int(r["rank"]),
                             "cause_id": int(r["cause_id"]), "cause": r["cause"],
                             "mean": float(r["mean"]), "q05": float(r["q05"]),
                             "q95": float(r["q95"])})
        return cls(rows=rows)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.rows, fh, indent=2)

    def to_text(self) -> str:
        """Aligned table mirroring the ranked leading-causes layout."""
        lines = []
        by_cell_year = {}
        for row in self.rows:
            by_cell_year.setdefault((row["cell"], row["year"]), []).append(row)
        for (cell, year), entries in sorted(by_cell_year.items()):
            lines.append(f"{entries[0]['cell_label']}  {year}")
            for row in sorted(entries, key=lambda r: r["rank"]):
                lines.append(f"  {row['rank']}. {row['cause']:<16s} "
                             f"{row['mean']:.3f} ({row['q95']:.3f} / {row['q05']:.3f})")
        return "\n".join(lines) + ("\n" if lines else "")


def build_forecast_table(samples: PosteriorSamples, years, cells=None,
                         top_n: int = 3, base_year: int = DEFAULT_BASE_YEAR,
                         cause_names=None) -> ForecastTable:
    """Forecast table over all requested cells and years."""
    if len(list(years)) == 0:
        raise ValueError("at least one forecast year is required")
    tmpl = samples.template
    if cells is None:
        cells = range(tmpl.n_cells)
    if cause_names is None:
        cause_names = (CAUSE_NAMES if tmpl.n_causes + 1 == len(CAUSE_NAMES)
                       else [f"cause_{k}" for k in range(tmpl.n_causes + 1)])
    table = ForecastTable()
    for cell in cells:
        for year in years:
            ranked = top_causes(samples, cell, int(year), n=top_n, base_year=base_year)
            for rank, (k, mean, q05, q95) in enumerate(ranked, start=1):
                table.rows.append({
                    "cell": int(cell), "cell_label": cell_label(int(cell)),
                    "year": int(year), "rank": rank, "cause_id": int(k),
                    "cause": cause_names[k], "mean": float(mean),
                    "q05": float(q05), "q95": float(q95)})
    return table
