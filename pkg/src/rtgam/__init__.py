"""Reproductive-number estimation and smooth attribution for daily panels."""

__version__ = "0.1.0"

from .basis import BasisError, SmoothSpec, SmoothTerm, build_term, choose_knots, evaluate_term
from .config import ConfigError, RunConfig, load_config
from .effects import CvReport, PartialEffect, fit_per_province, lopo_cv, partial_effects
from .gam import (
    FitError,
    FittedGam,
    ModelSpec,
    assemble_design,
    fit_gam,
    fit_penalized,
    predict_log_rt,
    select_lambdas_gcv,
)
from .panel import (
    Panel,
    PanelError,
    SummaryTable,
    build_panel,
    ingest_sources,
    summarize_panel,
)
from .rt import (
    DelayModel,
    EstimatorError,
    GenerationInterval,
    RtSeries,
    adjust_for_testing,
    default_delay_model,
    default_test_floor,
    discretize_generation_interval,
    discretize_onset_to_report,
    estimate_province_rt,
    estimate_rt,
    point_mass_delay,
    shift_to_infection_dates,
)
from .synth import ScenarioSpec, SimulatedPanel, SimulationError, simulate_epidemic, simulate_panel

__all__ = [
    "BasisError", "SmoothSpec", "SmoothTerm", "build_term", "choose_knots", "evaluate_term",
    "ConfigError", "RunConfig", "load_config",
    "CvReport", "PartialEffect", "fit_per_province", "lopo_cv", "partial_effects",
    "FitError", "FittedGam", "ModelSpec", "assemble_design", "fit_gam", "fit_penalized",
    "predict_log_rt", "select_lambdas_gcv",
    "Panel", "PanelError", "SummaryTable", "build_panel", "ingest_sources", "summarize_panel",
    "DelayModel", "EstimatorError", "GenerationInterval", "RtSeries", "adjust_for_testing",
    "default_delay_model", "default_test_floor", "discretize_generation_interval",
    "discretize_onset_to_report", "estimate_province_rt", "estimate_rt", "point_mass_delay",
    "shift_to_infection_dates",
    "ScenarioSpec", "SimulatedPanel", "SimulationError", "simulate_epidemic", "simulate_panel",
]
