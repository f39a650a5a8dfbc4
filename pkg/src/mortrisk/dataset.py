"""Mortality panel data: population and death counts on the
(age group, gender, cause, year) grid, plus the normalized CSV format shared
by the ingestion, simulation and estimation steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import GENDERS, cell_index, cell_label, DEFAULT_BASE_YEAR

NORMALIZED_HEADER = ["year", "age_group", "gender", "cause_id", "population", "deaths"]


@dataclass
class MortalityDataset:
    """Observed counts: population (C, T) and deaths (C, K+1, T), integer valued.

    Model time runs t = 1..T; calendar year t corresponds to
    base_year + t - 1.
    """

    population: np.ndarray
    deaths: np.ndarray
    base_year: int = DEFAULT_BASE_YEAR

    def __post_init__(self):
        self.population = np.asarray(self.population)
        self.deaths = np.asarray(self.deaths)
        if self.population.ndim != 2 or self.deaths.ndim != 3:
            raise ValueError("population must be (C,T), deaths (C,K+1,T)")
        c, t = self.population.shape
        if self.deaths.shape[0] != c or self.deaths.shape[2] != t:
            raise ValueError("population and deaths shapes are inconsistent")
        if t < 2:
            raise ValueError("at least two years of data are required (T >= 2)")
        if c % 2 != 0:
            raise ValueError("cell count must be even (two genders)")
        if np.any(self.population < 0) or np.any(self.deaths < 0):
            raise ValueError("counts must be nonnegative")
        total = self.deaths.sum(axis=1)
        bad = total > self.population
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise ValueError(
                f"total deaths exceed population in cell {cell_label(int(i))}, "
                f"year {self.base_year + int(j)}")

    @property
    def n_cells(self) -> int:
        return self.population.shape[0]

    @property
    def n_age_groups(self) -> int:
        return self.n_cells // 2

    @property
    def n_causes(self) -> int:
        return self.deaths.shape[1] - 1

    @property
    def n_years(self) -> int:
        return self.population.shape[1]

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.base_year, self.base_year + self.n_years)

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(1, self.n_years + 1, dtype=float)

    def cause_totals(self) -> np.ndarray:
        """n_k(t): deaths summed over all cells; shape (K+1, T)."""
        return self.deaths.sum(axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(NORMALIZED_HEADER)
            for i in range(self.n_cells):
                age = i // 2 + 1
                gender = GENDERS[i % 2]
                for ti in range(self.n_years):
                    year = self.base_year + ti
                    for k in range(self.n_causes + 1):
                        writer.writerow([year, age, gender, k,
                                         int(self.population[i, ti]),
                                         int(self.deaths[i, k, ti])])

    @classmethod
    def from_csv(cls, path) -> "MortalityDataset":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(NORMALIZED_HEADER) - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"normalized CSV {path} is missing columns: {sorted(missing)}")
            for row in reader:
                rows.append((int(row["year"]), int(row["age_group"]), row["gender"],
                             int(row["cause_id"]), int(row["population"]), int(row["deaths"])))
        if not rows:
            raise ValueError(f"normalized CSV {path} contains no data rows")
        years = sorted({r[0] for r in rows})
        ages = sorted({r[1] for r in rows})
        causes = sorted({r[3] for r in rows})
        if years != list(range(years[0], years[-1] + 1)):
            raise ValueError("years must form a contiguous range")
        if ages != list(range(1, len(ages) + 1)) or causes != list(range(len(causes))):
            raise ValueError("age groups must be 1..A and cause ids 0..K, dense")
        n_age, n_k1, n_t = len(ages), len(causes), len(years)
        population = np.zeros((2 * n_age, n_t), dtype=np.int64)
        deaths = np.zeros((2 * n_age, n_k1, n_t), dtype=np.int64)
        seen = np.zeros((2 * n_age, n_k1, n_t), dtype=bool)
        for year, age, gender, k, pop, dth in rows:
            i = cell_index(age, gender, n_age)
            ti = year - years[0]
            if seen[i, k, ti]:
                raise ValueError(f"duplicate row for year {year}, age {age}, "
                                 f"gender {gender}, cause {k}")
            seen[i, k, ti] = True
            population[i, ti] = pop
            deaths[i, k, ti] = dth
        if not seen.all():
            raise ValueError("normalized CSV does not cover the full cell/cause/year grid")
        return cls(population=population, deaths=deaths, base_year=years[0])
