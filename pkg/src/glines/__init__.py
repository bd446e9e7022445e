"""Monte Carlo laboratory for H_t-Brownian Gibbs line ensembles: bridges and
grids, Boltzmann weights, stopping-domain geometry, samplers and estimator
pipelines."""
from .grid_paths import (BoundaryData, DomainSpec, GlinesError, Grid, LineEnsemble, Path,
                         RngStream, bridge_values, make_grid, sample_bridge, sample_bridges)
from .weights import HamiltonianSpec, WeightLayout, log_weight_decomposition, log_weight_full
from .geometry import (ScheduleParams, build_pole_tent, check_bundle, check_favorable,
                       concave_majorant, parameter_schedule, schedule_for_scale,
                       stopping_domain)
from .samplers import (ChainSettings, Estimate, MaxAttemptsExceeded, SurrogateSpec,
                       gibbs_resample, rejection_sample, sample_jump_ensemble, sample_surrogate)
from .experiments import (ExperimentReport, run_core_inequality, run_denominator,
                          run_favorable_frequency, run_numerator, run_separation)

__version__ = "0.1.0"

__all__ = [
    "BoundaryData", "DomainSpec", "GlinesError", "Grid", "LineEnsemble", "Path", "RngStream",
    "bridge_values", "make_grid", "sample_bridge", "sample_bridges", "HamiltonianSpec",
    "WeightLayout", "log_weight_decomposition", "log_weight_full", "ScheduleParams",
    "build_pole_tent", "check_bundle", "check_favorable", "concave_majorant",
    "parameter_schedule", "schedule_for_scale", "stopping_domain", "ChainSettings", "Estimate",
    "MaxAttemptsExceeded", "SurrogateSpec", "gibbs_resample", "rejection_sample",
    "sample_jump_ensemble", "sample_surrogate", "ExperimentReport", "run_core_inequality",
    "run_denominator", "run_favorable_frequency", "run_numerator", "run_separation",
]
