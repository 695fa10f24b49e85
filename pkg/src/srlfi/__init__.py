"""Likelihood-free inference with generative networks trained by scoring rules."""

__version__ = "0.1.0"

from .estimators import GANPosterior, ScoringRulePosterior, build_rule
from .metrics import (MetricsReport, c2st_accuracy, calibration_error, evaluate_posterior, nrmse,
                      r_squared, sbc_ks_pvalues, sbc_ranks)
from .networks import GeneratorNet, make_critic, make_generator
from .scoring_rules import (PatchLayout, ScoringRule, energy_score_estimate,
                            kernel_score_estimate, median_bandwidth, patched_score_estimate)
from .sequential import RatioEstimator, RoundConfig, run_sequential
from .simulators import (SLCP, ConjugateGaussian, Dataset, GridToy, TwoMoons, generate_dataset,
                         get_model)
from .training import GANTrainConfig, SRTrainConfig, train_gan, train_sr

__all__ = [
    "ConjugateGaussian", "Dataset", "GANPosterior", "GANTrainConfig", "GeneratorNet", "GridToy",
    "MetricsReport", "PatchLayout", "RatioEstimator", "RoundConfig", "SLCP", "SRTrainConfig",
    "ScoringRule", "ScoringRulePosterior", "TwoMoons", "build_rule", "c2st_accuracy",
    "calibration_error", "energy_score_estimate", "evaluate_posterior", "generate_dataset",
    "get_model", "kernel_score_estimate", "make_critic", "make_generator", "median_bandwidth",
    "nrmse", "patched_score_estimate", "r_squared", "run_sequential", "sbc_ks_pvalues",
    "sbc_ranks", "train_gan", "train_sr",
]
