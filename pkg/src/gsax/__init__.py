__version__ = "0.1.0"

from .gp import Bounds, FitConfig, GpModel, TrainingSet, fit, gaussian_correlation, log_likelihood
from .marginal import (
    InteractionEffectGp,
    MainEffectGp,
    interaction_effect,
    kernel_integral_1d,
    kernel_integral_2d,
    main_effect,
    main_effect_cov,
    main_effect_mean,
)
from .sobol import SobolEstimate, estimate_full_gp, estimate_mean_predictor, total_variance
from .acquisition import (
    MarginalCache,
    Strategy,
    eigf,
    music_improvements,
    music_score,
    select_componentwise_music,
    select_next,
    vigf,
)
from .benchmarks import Benchmark, get_benchmark, ratio_error, ratio_error_surface
from .driver import ConvergenceTrace, LoopConfig, check_convergence, lhs_sample, run
from .harness import StudyConfig, aggregate, emit_plot_data, run_study

__all__ = [
    "Bounds",
    "FitConfig",
    "GpModel",
    "TrainingSet",
    "fit",
    "gaussian_correlation",
    "log_likelihood",
    "InteractionEffectGp",
    "MainEffectGp",
    "interaction_effect",
    "kernel_integral_1d",
    "kernel_integral_2d",
    "main_effect",
    "main_effect_cov",
    "main_effect_mean",
    "SobolEstimate",
    "estimate_full_gp",
    "estimate_mean_predictor",
    "total_variance",
    "MarginalCache",
    "Strategy",
    "eigf",
    "music_improvements",
    "music_score",
    "select_componentwise_music",
    "select_next",
    "vigf",
    "Benchmark",
    "get_benchmark",
    "ratio_error",
    "ratio_error_surface",
    "ConvergenceTrace",
    "LoopConfig",
    "check_convergence",
    "lhs_sample",
    "run",
    "StudyConfig",
    "aggregate",
    "emit_plot_data",
    "run_study",
]
