"""Command-line entry point.

Subcommands: ingest | estimate | forecast | simulate | loss | diagnose.
All runs are driven by a JSON config file; --seed / --out / --threads
override config values.  Exit codes: 1 I/O, 2 data validation, 3 sampler
invariant violation, 4 missing samples, 5 loss truncation beyond tolerance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .dataset import MortalityDataset
from .forecast import build_forecast_table
from .ingest import CauseMapping, IngestConfig, load_dataset
from .likelihood import init_params_moment_matching
from .mcmc import (PosteriorSamples, SamplerConfig, diagnostics,
                   run_chains_parallel, vector_to_params)
from .model import ModelParams
from .panjer import Portfolio, portfolio_loss, risk_measures
from .simulate import SimulationSpec, sample_death_counts

EXIT_IO = 1
EXIT_DATA = 2
EXIT_SAMPLER = 3
EXIT_NO_SAMPLES = 4
EXIT_TRUNCATION = 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_DATA, f"config {path} is not valid JSON: {exc}")


def _write_manifest(out_dir, config, seeds, outputs):
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seeds": seeds,
        "version": __version__,
        "outputs": sorted(outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def _sampler_configs(cfg, seed_override=None):
    s = cfg.get("sampler", {})
    n_steps = int(s.get("n_steps", 35_000))
    burn_in = int(s.get("burn_in", 5_000))
    if burn_in >= n_steps:
        raise CliError(EXIT_DATA, f"burn_in ({burn_in}) must be below n_steps ({n_steps})")
    base_seed = int(seed_override if seed_override is not None else s.get("seed", 0))
    n_chains = int(s.get("n_chains", 4))
    return [SamplerConfig(
        n_steps=n_steps, burn_in=burn_in,
        proposal_sd=s.get("proposal_sd", "auto"),
        seed=base_seed + i,
        adapt_window=int(s.get("adapt_window", 500)),
        sigma2_max=float(s.get("sigma2_max", 100.0)),
        thin=int(s.get("thin", 1))) for i in range(n_chains)]


def _require(path, what):
    if not os.path.exists(path):
        raise CliError(EXIT_IO, f"{what} not found: {path}")
    return path


def cmd_ingest(cfg, out_dir, args):
    paths = cfg.get("paths", {})
    deaths = _require(paths["deaths_csv"], "deaths file")
    population = _require(paths["population_csv"], "population file")
    icfg = IngestConfig(
        base_year=int(cfg.get("model", {}).get("base_year", 1987)),
        comparability_cutoff_year=cfg.get("model", {}).get("comparability_cutoff_year", 1996),
        n_age_groups=int(cfg.get("model", {}).get("n_age_groups", 9)),
        mapping=(CauseMapping.from_json_file(paths["cause_mapping"])
                 if paths.get("cause_mapping") else CauseMapping()))
    try:
        dataset, coverage = load_dataset(deaths, population, icfg)
    except IOError as exc:
        raise CliError(EXIT_IO, str(exc))
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc))
    dataset_path = os.path.join(out_dir, "dataset.csv")
    dataset.to_csv(dataset_path)
    coverage_path = os.path.join(out_dir, "coverage.json")
    with open(coverage_path, "w") as fh:
        json.dump(coverage, fh, indent=2)
    return ["dataset.csv", "coverage.json"]


def cmd_estimate(cfg, out_dir, args):
    dataset_path = _require(cfg["paths"]["dataset_csv"], "normalized dataset")
    try:
        dataset = MortalityDataset.from_csv(dataset_path)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc))
    try:
        init = init_params_moment_matching(dataset)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc))
    configs = _sampler_configs(cfg, args.seed)
    try:
        chains = run_chains_parallel(dataset, [init.copy() for _ in configs],
                                     configs, max_workers=args.threads)
    except ValueError as exc:
        raise CliError(EXIT_SAMPLER, str(exc))
    outputs = []
    for chain in chains:
        csv_name = f"chain_{chain.chain_id}.csv"
        meta_name = f"chain_{chain.chain_id}.json"
        chain.save(os.path.join(out_dir, csv_name), os.path.join(out_dir, meta_name))
        outputs += [csv_name, meta_name]
    report = diagnostics(chains, data=dataset) if chains[0].n_draws >= 100 else None
    if report is not None:
        with open(os.path.join(out_dir, "diagnostics.json"), "w") as fh:
            json.dump(_jsonable(report), fh, indent=2)
        outputs.append("diagnostics.json")
    pooled = np.vstack([c.draws for c in chains])
    mean_params = vector_to_params(pooled.mean(axis=0), init)
    with open(os.path.join(out_dir, "posterior_mean_params.json"), "w") as fh:
        fh.write(mean_params.to_json())
    outputs.append("posterior_mean_params.json")
    return outputs


def _load_chains(samples_dir):
    if not os.path.isdir(samples_dir):
        raise CliError(EXIT_NO_SAMPLES, f"samples directory not found: {samples_dir}")
    chains = []
    for name in sorted(os.listdir(samples_dir)):
        if name.startswith("chain_") and name.endswith(".csv"):
            meta = os.path.join(samples_dir, name[:-4] + ".json")
            if not os.path.exists(meta):
                raise CliError(EXIT_NO_SAMPLES, f"metadata sidecar missing for {name}")
            chains.append(PosteriorSamples.load(os.path.join(samples_dir, name), meta))
    if not chains:
        raise CliError(EXIT_NO_SAMPLES, f"no chain files in {samples_dir}")
    return chains


def cmd_forecast(cfg, out_dir, args):
    years = cfg.get("forecast_years", [])
    if not years:
        raise CliError(EXIT_DATA, "forecast_years must list at least one year")
    chains = _load_chains(cfg["paths"]["samples_dir"])
    pooled = PosteriorSamples(
        draws=np.vstack([c.draws for c in chains]),
        param_names=chains[0].param_names,
        acceptance_rate=np.mean([c.acceptance_rate for c in chains], axis=0),
        template=chains[0].template, chain_id=-1, seed=chains[0].seed,
        config=chains[0].config)
    base_year = int(cfg.get("model", {}).get("base_year", 1987))
    table = build_forecast_table(pooled, years, base_year=base_year,
                                 top_n=int(cfg.get("forecast_top_n", 3)))
    table.to_csv(os.path.join(out_dir, "forecast.csv"))
    with open(os.path.join(out_dir, "forecast.txt"), "w") as fh:
        fh.write(table.to_text())
    return ["forecast.csv", "forecast.txt"]


def cmd_simulate(cfg, out_dir, args):
    params_path = _require(cfg["paths"]["true_params"], "true-parameter file")
    with open(params_path) as fh:
        params = ModelParams.from_json(fh.read())
    sim = cfg.get("simulate", {})
    population = np.asarray(sim["population"], dtype=np.int64)
    seed = int(args.seed if args.seed is not None else sim.get("seed", 0))
    spec = SimulationSpec(population=population, true_params=params, seed=seed,
                          base_year=int(cfg.get("model", {}).get("base_year", 1987)))
    dataset, stats = sample_death_counts(spec)
    dataset.to_csv(os.path.join(out_dir, "dataset.csv"))
    with open(os.path.join(out_dir, "simulation_stats.json"), "w") as fh:
        json.dump({"cap_events": stats.cap_events,
                   "total_draws": stats.total_draws, "seed": seed}, fh, indent=2)
    return ["dataset.csv", "simulation_stats.json"]


def cmd_loss(cfg, out_dir, args):
    params_path = _require(cfg["paths"]["params"], "parameter file")
    with open(params_path) as fh:
        params = ModelParams.from_json(fh.read())
    loss_cfg = cfg.get("loss", {})
    levels = loss_cfg.get("levels", [0.95, 0.99])
    for a in levels:
        if not 0.0 < a < 1.0:
            raise CliError(EXIT_DATA, f"risk level {a} must lie in (0, 1)")
    portfolio = Portfolio.from_csv(
        _require(cfg["paths"]["portfolio_csv"], "portfolio file"),
        n_age_groups=params.n_age_groups,
        loss_unit=float(loss_cfg.get("loss_unit", 1.0)),
        valuation_t=float(loss_cfg.get("valuation_t", 1.0)))
    pmf = portfolio_loss(portfolio, params, n_max=loss_cfg.get("n_max"))
    if pmf.truncated:
        raise CliError(EXIT_TRUNCATION,
                       f"loss pmf truncation mass {pmf.truncation_mass:.3e} "
                       "exceeds tolerance; increase n_max")
    pmf.to_csv(os.path.join(out_dir, "loss_pmf.csv"))
    measures = {}
    for a in levels:
        var, es = risk_measures(pmf, a)
        measures[str(a)] = {"var_units": var, "es_units": es,
                            "var": var * portfolio.loss_unit,
                            "es": es * portfolio.loss_unit}
    with open(os.path.join(out_dir, "risk_measures.json"), "w") as fh:
        json.dump({"loss_unit": portfolio.loss_unit, "mean_loss_units": pmf.mean(),
                   "levels": measures}, fh, indent=2)
    return ["loss_pmf.csv", "risk_measures.json"]


def cmd_diagnose(cfg, out_dir, args):
    chains = _load_chains(cfg["paths"]["samples_dir"])
    data = None
    dataset_path = cfg.get("paths", {}).get("dataset_csv")
    if dataset_path and os.path.exists(dataset_path):
        data = MortalityDataset.from_csv(dataset_path)
    report = diagnostics(chains, data=data)
    with open(os.path.join(out_dir, "diagnostics.json"), "w") as fh:
        json.dump(_jsonable(report), fh, indent=2)
    return ["diagnostics.json"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if np.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


COMMANDS = {
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "forecast": cmd_forecast,
    "simulate": cmd_simulate,
    "loss": cmd_loss,
    "diagnose": cmd_diagnose,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mortrisk",
        description="Cause-of-death mortality model: estimation, forecasting "
                    "and annuity loss distributions.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for parallel chains")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        out_dir = args.out or cfg.get("paths", {}).get("output_dir", ".")
        os.makedirs(out_dir, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, out_dir, args)
        seeds = [c.seed for c in _sampler_configs(cfg, args.seed)] \
            if args.command == "estimate" else [args.seed]
        _write_manifest(out_dir, cfg, seeds, outputs)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
