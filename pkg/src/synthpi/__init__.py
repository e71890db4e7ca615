"""Synthetic control prediction with non-asymptotic prediction intervals."""

from .constraints import ConstraintSpec, ConstraintSystem, from_options, materialize
from .estimator import FitResult, estimate_df, fit, render_summary, resolve_tuning
from .panel import (
    PanelData,
    PanelSchema,
    ScMatrices,
    apply_missing_rules,
    build_matrices,
    load_panel,
)
from .report import RunConfig, ResultsBundle, emit_plotspec, parse_config, run, write_outputs
from .solver import Solution, solve_linear_over_level_set, solve_wls
from .uncertainty import (
    PredictionInterval,
    UncertaintyConfig,
    UncertaintyResult,
    assemble_intervals,
    build_delta_star,
    compute_rho,
    in_sample_bounds,
    out_of_sample_bounds,
    prediction_intervals,
    sensitivity_analysis,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec",
    "ConstraintSystem",
    "FitResult",
    "PanelData",
    "PanelSchema",
    "PredictionInterval",
    "ResultsBundle",
    "RunConfig",
    "ScMatrices",
    "Solution",
    "UncertaintyConfig",
    "UncertaintyResult",
    "apply_missing_rules",
    "assemble_intervals",
    "build_delta_star",
    "build_matrices",
    "compute_rho",
    "emit_plotspec",
    "estimate_df",
    "fit",
    "from_options",
    "in_sample_bounds",
    "load_panel",
    "materialize",
    "out_of_sample_bounds",
    "parse_config",
    "prediction_intervals",
    "render_summary",
    "resolve_tuning",
    "run",
    "sensitivity_analysis",
    "solve_linear_over_level_set",
    "solve_wls",
    "write_outputs",
]
