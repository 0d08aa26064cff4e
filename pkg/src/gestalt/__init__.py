"""Embryonic growth charts: CRL/foetal-age regression, validation and dating."""

__version__ = "0.1.0"

from .charts_io import load_chart, save_chart
from .core import (
    Age,
    AgeKind,
    BasisSpec,
    Cohort,
    Covariate,
    GrowthChart,
    Measurement,
    MeanModel,
    Predicts,
    REGISTRY,
    Source,
    VarianceModel,
    convert_age,
    curve_intersection,
    dating_basis,
    evaluate,
    lookup,
    quadratic_basis,
)
from .errors import GestaltError
from .mixture import PUBLISHED_COMPONENTS, find_breakpoint, fit_mixture
from .pipeline import (
    dedup_first_exam,
    load_cohort,
    reweight_split,
    select_eligible,
    trim_outliers,
    write_cohort,
)
from .prediction import calibrate_kappa, optimal_window, predict_with_ci, tabulate, zscore
from .regression import (
    fit_heteroskedastic,
    fit_least_squares,
    fit_robust,
    fit_variance_model,
    highest_degree_test,
)
from .simulate import SimSpec, simulate, simulate_cohort
from .stattests import chow_test, overestimation_test, wald_coefficient_test, wilcoxon_rank_sum
from .validation import ModelUnderTest, loocv_compare

__all__ = [
    "Age", "AgeKind", "BasisSpec", "Cohort", "Covariate", "GestaltError", "GrowthChart",
    "Measurement", "MeanModel", "ModelUnderTest", "PUBLISHED_COMPONENTS", "Predicts", "REGISTRY",
    "SimSpec", "Source", "VarianceModel", "calibrate_kappa", "chow_test", "convert_age",
    "curve_intersection", "dating_basis", "dedup_first_exam", "evaluate", "find_breakpoint",
    "fit_heteroskedastic", "fit_least_squares", "fit_mixture", "fit_robust", "fit_variance_model",
    "highest_degree_test", "load_chart", "load_cohort", "lookup", "loocv_compare", "optimal_window",
    "overestimation_test", "predict_with_ci", "quadratic_basis", "reweight_split", "save_chart",
    "select_eligible", "simulate", "simulate_cohort", "tabulate", "trim_outliers",
    "wald_coefficient_test", "wilcoxon_rank_sum", "write_cohort", "zscore",
]
