"""Sequential double machine learning for time-varying delayed and instantaneous effects."""
from .estimator import (
    EstimatorConfig,
    TvHteFit,
    estimate_covariance,
    fit_nuisances,
    fit_sequential,
    score_S_t,
    solve_beta_t,
    solve_moment,
)
from .inference import (
    HotellingResult,
    ProjectionResult,
    confidence_intervals,
    effects_frame,
    fit_to_dict,
    fit_to_json,
    hotelling_test,
    polynomial_basis,
    project_parametric,
)
from .kernel import DecayKernel, delayed_offset, offset_matrix
from .nuisance import (
    NuisanceSet,
    build_history_features,
    fit_baseline_g,
    fit_propensity,
    fit_prognostic_delta_t,
    h_value,
)
from .probe import ProbeResult, orthogonality_probe, random_perturbation
from .smoothing import SmoothResult, smooth_effects
from .tuning import TuneResult, tune_gamma

__all__ = [
    "DecayKernel", "delayed_offset", "offset_matrix",
    "NuisanceSet", "build_history_features", "fit_baseline_g", "fit_propensity",
    "fit_prognostic_delta_t", "h_value",
    "EstimatorConfig", "TvHteFit", "solve_moment", "solve_beta_t", "score_S_t",
    "estimate_covariance", "fit_nuisances", "fit_sequential",
    "confidence_intervals", "hotelling_test", "HotellingResult", "polynomial_basis",
    "project_parametric", "ProjectionResult", "fit_to_dict", "fit_to_json", "effects_frame",
    "tune_gamma", "TuneResult",
    "orthogonality_probe", "random_perturbation", "ProbeResult",
    "smooth_effects", "SmoothResult",
]
