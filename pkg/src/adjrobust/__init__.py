"""Assumption-robust inference for the average treatment effect.

Given several candidate adjustment sets, of which at least one is assumed
valid, the package tilts the sample toward a population on which every set
identifies the same effect and reports one interval for that population's ATE.
"""

from .ar_core import ar_estimate_aipw, contrast_panel
from .ar_lm import ar_estimate_lm, bootstrap_variance, point_estimate_lm
from .baselines import aipw_ci, naive_hull, ols_ci
from .data import (
    AdjustmentSpec,
    AREstimate,
    ContrastPanel,
    Method,
    MethodSummary,
    ObservationTable,
    SimulationReport,
    TiltSolution,
    TiltStatus,
    load_csv,
    parse_adjustment_config,
    write_csv,
)
from .nuisance import crossfit, fit_interacted_ols, fit_knn_mean, fit_logistic, project_onto_common
from .simlab import Example, gen_example, replicate
from .tilt import solve_tilt, tilt_objective

__version__ = "0.1.0"

__all__ = [
    "AREstimate",
    "AdjustmentSpec",
    "ContrastPanel",
    "Example",
    "Method",
    "MethodSummary",
    "ObservationTable",
    "SimulationReport",
    "TiltSolution",
    "TiltStatus",
    "aipw_ci",
    "ar_estimate_aipw",
    "ar_estimate_lm",
    "bootstrap_variance",
    "contrast_panel",
    "crossfit",
    "fit_interacted_ols",
    "fit_knn_mean",
    "fit_logistic",
    "gen_example",
    "load_csv",
    "naive_hull",
    "ols_ci",
    "parse_adjustment_config",
    "point_estimate_lm",
    "project_onto_common",
    "replicate",
    "solve_tilt",
    "tilt_objective",
    "write_csv",
]
