"""Normalization of raw population and death-count files into a
MortalityDataset: comparability-factor adjustment for the 1997 ICD
classification change, cause grouping and validation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import MortalityDataset
from .model import GENDERS, cell_index

# cause label -> (model cause id, comparability factor); anything not listed
# is routed to the idiosyncratic cause 0 with factor 1.0
DEFAULT_CAUSE_TABLE = {
    "infectious": (1, 1.25),
    "neoplasms": (2, 1.0),
    "endocrine": (3, 1.01),
    "mental": (4, 0.78),
    "nervous": (5, 1.2),
    "circulatory": (6, 1.0),
    "respiratory": (7, 0.91),
    "digestive": (8, 1.05),
    "external": (9, 1.06),
    "genitourinary": (10, 1.14),
}

CAUSE_NAMES = ["not elsewhere", "infectious", "neoplasms", "endocrine",
               "mental", "nervous", "circulatory", "respiratory",
               "digestive", "external", "genitourinary"]

DEFAULT_COMPARABILITY_CUTOFF = 1996


@dataclass
class CauseMapping:
    table: dict = field(default_factory=lambda: dict(DEFAULT_CAUSE_TABLE))

    def __post_init__(self):
        ids = [cid for cid, _ in self.table.values()]
        if len(set(ids)) != len(ids):
            raise ValueError("cause mapping assigns the same cause id twice")
        for label, (cid, factor) in self.table.items():
            if factor <= 0:
                raise ValueError(f"comparability factor for {label!r} must be positive")
            if cid < 0:
                raise ValueError("cause ids must be nonnegative")

    @property
    def n_causes(self) -> int:
        return max((cid for cid, _ in self.table.values()), default=0)

    def lookup(self, label: str):
        return self.table.get(label, (0, 1.0))

    @classmethod
    def from_json_file(cls, path) -> "CauseMapping":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(table={label: (int(v["cause_id"]), float(v["comparability_factor"]))
                          for label, v in raw.items()})

    def to_json_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({label: {"cause_id": cid, "comparability_factor": factor}
                       for label, (cid, factor) in self.table.items()}, fh, indent=2)


@dataclass
class IngestConfig:
    base_year: int = 1987
    comparability_cutoff_year: int = DEFAULT_COMPARABILITY_CUTOFF
    n_age_groups: int = 9
    mapping: CauseMapping = field(default_factory=CauseMapping)


def apply_comparability(count: int, factor: float, year: int,
                        config: IngestConfig) -> int:
    """Comparability-adjusted count: round-half-up(count * factor) for years
    up to the cutoff, unchanged afterwards."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if factor <= 0:
        raise ValueError("factor must be positive")
    if (config.comparability_cutoff_year is not None
            and year <= config.comparability_cutoff_year):
        # round the product first so binary representation noise in the
        # factor can not flip a half-way case
        return int(math.floor(round(count * factor, 9) + 0.5))
    return count


def _read_csv(path, required):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IOError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path} is missing columns: {sorted(missing)}")
        return list(reader)


def load_dataset(deaths_csv, population_csv, config: IngestConfig = None):
    """Build a MortalityDataset from raw extracts.

    Deaths CSV columns: year, age_group, gender, cause_label, count.
    Population CSV columns: year, age_group, gender, count.
    Returns (dataset, coverage) where coverage reports per-cell-year totals.
    """
    if config is None:
        config = IngestConfig()
    mapping = config.mapping
    n_age = config.n_age_groups
    k1 = mapping.n_causes + 1

    pop_rows = _read_csv(population_csv, {"year", "age_group", "gender", "count"})
    death_rows = _read_csv(deaths_csv, {"year", "age_group", "gender", "cause_label", "count"})

    population = {}
    for row in pop_rows:
        year, age, g = int(row["year"]), int(row["age_group"]), row["gender"]
        cnt = int(row["count"])
        if cnt < 0:
            raise ValueError(f"negative population count at year {year}, age {age}, {g}")
        key = (year, age, g)
        if key in population:
            raise ValueError(f"duplicate population row for year {year}, age {age}, {g}")
        population[key] = cnt

    deaths = {}
    seen_raw = set()
    for row in death_rows:
        year, age, g = int(row["year"]), int(row["age_group"]), row["gender"]
        label = row["cause_label"]
        cnt = int(row["count"])
        if cnt < 0:
            raise ValueError(f"negative death count at year {year}, age {age}, {g}, {label!r}")
        raw_key = (year, age, g, label)
        if raw_key in seen_raw:
            raise ValueError(f"duplicate death row for year {year}, age {age}, {g}, {label!r}")
        seen_raw.add(raw_key)
        if (year, age, g) not in population:
            raise ValueError(f"no population row for year {year}, age group {age}, "
                             f"gender {g} (required by a deaths row)")
        cid, factor = mapping.lookup(label)
        adjusted = apply_comparability(cnt, factor, year, config)
        deaths[(year, age, g, cid)] = deaths.get((year, age, g, cid), 0) + adjusted

    years = sorted({y for (y, _, _) in population})
    if years != list(range(years[0], years[-1] + 1)):
        raise ValueError("population years must form a contiguous range")
    t_n = len(years)
    pop_arr = np.zeros((2 * n_age, t_n), dtype=np.int64)
    death_arr = np.zeros((2 * n_age, k1, t_n), dtype=np.int64)
    for (year, age, g), cnt in population.items():
        pop_arr[cell_index(age, g, n_age), year - years[0]] = cnt
    for (year, age, g, cid), cnt in deaths.items():
        death_arr[cell_index(age, g, n_age), cid, year - years[0]] = cnt

    total = death_arr.sum(axis=1)
    bad = total > pop_arr
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"deaths exceed population in age group {int(i) // 2 + 1}, "
                         f"gender {GENDERS[int(i) % 2]}, year {years[0] + int(j)}")

    dataset = MortalityDataset(population=pop_arr, deaths=death_arr,
                               base_year=years[0])
    coverage = {
        "years": [int(y) for y in years],
        "n_age_groups": n_age,
        "n_causes": k1 - 1,
        "total_population": int(pop_arr.sum()),
        "total_deaths": int(death_arr.sum()),
        "cells_with_zero_population": int(np.sum(pop_arr.sum(axis=1) == 0)),
        "deaths_per_year": death_arr.sum(axis=(0, 1)).astype(int).tolist(),
    }
    return dataset, coverage


def emit_rate_series(dataset: MortalityDataset, cell: int, cause: int):
    """(year, death rate) rows for one cell and cause; zero-population years
    are emitted with an empty rate field."""
    if not 0 <= cell < dataset.n_cells:
        raise ValueError(f"cell index {cell} out of range")
    if not 0 <= cause <= dataset.n_causes:
        raise ValueError(f"cause id {cause} out of range")
    rows = []
    for ti, year in enumerate(dataset.years):
        m = dataset.population[cell, ti]
        n = dataset.deaths[cell, cause, ti]
        rows.append((int(year), n / m if m > 0 else None))
    return rows


def write_rate_series_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "death_rate"])
        for year, rate in rows:
            writer.writerow([year, "" if rate is None else repr(rate)])
