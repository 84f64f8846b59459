"""Simulation and identification toolkit for SIS demand dynamics whose user
share jumps at product-release times."""

__version__ = "0.1.0"

from .estimate import (
    EstimationResult,
    IdentifiabilityReport,
    RankDeficiencyWarning,
    RegressionSystem,
    build_regression,
    check_identifiability,
    error_metrics,
    estimate,
    forecast,
)
from .experiments import (
    ExperimentPlan,
    FitReport,
    NoiseStudyResult,
    derive_seed,
    load_plan,
    run_noise_study,
    run_realdata_study,
)
from .ingest import AlignedDataset, RawSeries, align, fill_gaps, load_series, load_update_dates
from .model import (
    HybridModelSpec,
    IntervalParams,
    Scenario,
    Trajectory,
    UpdateSchedule,
    load_scenario,
    load_schedule,
    parameter_names,
    reproduction_number,
    save_scenario,
    theta_pack,
    theta_unpack,
)
from .simulate import (
    SimulationConfig,
    StabilityWarning,
    add_observation_noise,
    read_trajectory_csv,
    simulate_ct,
    simulate_dt,
    simulate_sde,
    write_trajectory_csv,
)

__all__ = [
    "__version__",
    "IntervalParams",
    "UpdateSchedule",
    "HybridModelSpec",
    "Trajectory",
    "Scenario",
    "theta_pack",
    "theta_unpack",
    "parameter_names",
    "reproduction_number",
    "load_scenario",
    "save_scenario",
    "load_schedule",
    "SimulationConfig",
    "StabilityWarning",
    "simulate_dt",
    "simulate_ct",
    "simulate_sde",
    "add_observation_noise",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "RegressionSystem",
    "build_regression",
    "IdentifiabilityReport",
    "check_identifiability",
    "RankDeficiencyWarning",
    "EstimationResult",
    "estimate",
    "error_metrics",
    "forecast",
    "RawSeries",
    "AlignedDataset",
    "load_series",
    "fill_gaps",
    "load_update_dates",
    "align",
    "ExperimentPlan",
    "load_plan",
    "derive_seed",
    "NoiseStudyResult",
    "run_noise_study",
    "FitReport",
    "run_realdata_study",
]
