"""Smooth, shape-constrained quantile distributed-lag regression.

Two penalized estimators (nearly-unimodal and nearly-concave) solved by a
prox-linear ADMM with exact proximal subroutines, plus cross-validated
tuning, wild-bootstrap inference, baseline competitors, and a simulation
engine.
"""

from .admm import (
    AdmmConfig,
    AdmmState,
    AugmentedProblem,
    FitResult,
    RankDeficientError,
    Trace,
    admm_fit,
    build_augmented,
    check_convergence,
    update_beta,
    update_gamma,
    update_r,
    update_u,
)
from .baselines import EnConfig, en_objective, fit_en, fit_ridge
from .bootstrap import (
    BootstrapConfig,
    BootstrapDistribution,
    ConfidenceBand,
    CriticalWindowReport,
    bootstrap,
    critical_windows,
    draw_weights,
    intervals,
)
from .core import (
    CovariateCoefficients,
    DifferenceOperator,
    LagCoefficients,
    ModeVector,
    PenaltyConfig,
    QuantileLevel,
    RegressionData,
    Shape,
    check_loss,
    concave_penalty,
    linear_predictor,
    make_diff_operator,
    neg_part,
    objective,
    pos_part,
    shape_penalty,
    smoothness_penalty,
    unimodal_penalty,
    with_intercept,
)
from .prox import (
    ProxConvergenceError,
    ProxSettings,
    nearly_isotonic,
    pava,
    prox_check,
    prox_concave,
    prox_unimodal,
)
from .selection import (
    SelectionResult,
    TuningGrid,
    select_cv,
    select_holdout,
    validation_score,
)
from .simulate import (
    SimConfig,
    SimDataset,
    SimTruth,
    estimation_error,
    gen_beta,
    gen_dataset,
    gen_exposures,
)
from .unimodal import DescentConfig, best_mode, fit_unimodal

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "AdmmState", "AugmentedProblem", "FitResult", "Trace",
    "RankDeficientError", "admm_fit", "build_augmented", "check_convergence",
    "update_beta", "update_gamma", "update_r", "update_u",
    "EnConfig", "en_objective", "fit_en", "fit_ridge",
    "BootstrapConfig", "BootstrapDistribution", "ConfidenceBand",
    "CriticalWindowReport", "bootstrap", "critical_windows", "draw_weights",
    "intervals",
    "CovariateCoefficients", "DifferenceOperator", "LagCoefficients",
    "ModeVector", "PenaltyConfig", "QuantileLevel", "RegressionData", "Shape",
    "check_loss", "concave_penalty", "linear_predictor", "make_diff_operator",
    "neg_part", "objective", "pos_part", "shape_penalty",
    "smoothness_penalty", "unimodal_penalty", "with_intercept",
    "ProxConvergenceError", "ProxSettings", "nearly_isotonic", "pava",
    "prox_check", "prox_concave", "prox_unimodal",
    "SelectionResult", "TuningGrid", "select_cv", "select_holdout",
    "validation_score",
    "SimConfig", "SimDataset", "SimTruth", "estimation_error", "gen_beta",
    "gen_dataset", "gen_exposures",
    "DescentConfig", "best_mode", "fit_unimodal",
]
