"""Mixed models for longitudinal data with destructive sampling."""

from .anova import AnovaTable, anova_deaton, anova_fixed, anova_proposed
from .data import DesignMatrices, LongDataset, build_design, load_csv
from .diagnostics import AcfResult, TestResult, anderson_darling, bartlett, residual_acf
from .estimators import (
    DeatonModel,
    FixedEffectsModel,
    ManovaModel,
    ProposedModel,
    PseudoUnitGrouper,
    RandomInterceptModel,
)
from .exceptions import DlmmError, NumericalError, ValidationError
from .experiments import ComparisonReport, ScenarioGrid, run_mse_comparison, run_pvalue_experiment
from .grouping import PseudoUnitAssignment, assign_pseudo_units, pseudo_unit_summary
from .lmm import FittedLMM, VarianceComponents, fit_lmm, mse, predict, profiled_deviance
from .manova import ManovaResponses, ManovaResult, build_manova_responses, manova_test
from .models import fit_model
from .simulate import SimulationConfig, ar1_matrix, destructive_sample, simulate_complete

__version__ = "0.1.0"

__all__ = [
    "AcfResult",
    "AnovaTable",
    "ComparisonReport",
    "DeatonModel",
    "DesignMatrices",
    "DlmmError",
    "FittedLMM",
    "FixedEffectsModel",
    "LongDataset",
    "ManovaModel",
    "ManovaResponses",
    "ManovaResult",
    "NumericalError",
    "ProposedModel",
    "PseudoUnitAssignment",
    "PseudoUnitGrouper",
    "RandomInterceptModel",
    "ScenarioGrid",
    "SimulationConfig",
    "TestResult",
    "ValidationError",
    "VarianceComponents",
    "anderson_darling",
    "anova_deaton",
    "anova_fixed",
    "anova_proposed",
    "ar1_matrix",
    "assign_pseudo_units",
    "bartlett",
    "build_design",
    "build_manova_responses",
    "destructive_sample",
    "fit_lmm",
    "fit_model",
    "load_csv",
    "manova_test",
    "mse",
    "predict",
    "profiled_deviance",
    "pseudo_unit_summary",
    "residual_acf",
    "run_mse_comparison",
    "run_pvalue_experiment",
    "simulate_complete",
]
