"""Particle approximation of the optimal filter derivative, with exact grid
oracles and a bias/L2 measurement harness."""

from .models import (
    GridModel,
    IntervalModel,
    MixingReport,
    eval_r,
    eval_t,
    grad_consistency_check,
    initial_weight,
    mixing_check,
)
from .oracle import exact_derivative, exact_filter, fd_derivative, path_bruteforce
from .particle import (
    ParticleCloud,
    centered_weight_check,
    deriv_measure,
    ergodicity_coefficient,
    filter_measure,
    init_cloud,
    integrate,
    predictive_score,
    run,
    step,
    step_matrices,
)
from .ratio import alpha_beta, ratio_mc_study
from .reference import (
    available_models,
    get_model,
    make_grid_hmm,
    make_interval_model,
    simulate,
)
from .biaslab import (
    bias_sweep,
    fit_rates,
    make_scenario,
    rml_demo,
    stability_trace,
    uniformity_check,
)

__version__ = "0.1.0"

__all__ = [
    "GridModel", "IntervalModel", "MixingReport",
    "eval_r", "eval_t", "initial_weight", "mixing_check",
    "grad_consistency_check",
    "exact_filter", "exact_derivative", "path_bruteforce", "fd_derivative",
    "ParticleCloud", "init_cloud", "step", "step_matrices", "run",
    "filter_measure", "deriv_measure", "integrate", "predictive_score",
    "centered_weight_check", "ergodicity_coefficient",
    "alpha_beta", "ratio_mc_study",
    "available_models", "get_model", "make_grid_hmm", "make_interval_model",
    "simulate",
    "make_scenario", "bias_sweep", "fit_rates", "uniformity_check",
    "stability_trace", "rml_demo",
]
