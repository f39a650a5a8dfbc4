"""Cause-of-death mortality modelling with gamma-mixed Poisson risk factors:
MCMC estimation, forecasting of leading death causes, and exact annuity
portfolio loss distributions via Panjer recursion.
"""

__version__ = "0.1.0"

from .dataset import MortalityDataset
from .model import (ModelParams, laplace_cdf, trend_reduction,
                    death_probability, cause_weights, expected_deaths,
                    cell_index, cell_label, year_to_t,
                    raw_parameter_count, free_parameter_count)
from .likelihood import (log_likelihood, mixed_poisson_log_pmf,
                         map_risk_factor, init_params_moment_matching)
from .mcmc import (SamplerConfig, PosteriorSamples, run_chain,
                   run_chains_parallel, gibbs_sweep, diagnostics,
                   truncated_normal_sample, truncated_normal_log_density)
from .simulate import (SimulationSpec, sample_risk_factors,
                       sample_death_counts, simulate_portfolio_loss)
from .panjer import (Policy, Portfolio, LossPMF, sector_severity,
                     compound_panjer, portfolio_loss, risk_measures)
from .ingest import (CauseMapping, IngestConfig, apply_comparability,
                     load_dataset, emit_rate_series)
from .forecast import (ForecastTable, weight_posterior, top_causes,
                       death_rate_forecast, build_forecast_table)
from .estimator import MortalityRiskEstimator
