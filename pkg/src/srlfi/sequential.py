"""Multi-round training targeted at one observation.

After the first (prior-driven) round, parameters are proposed from the
current generator's posterior at ``y0``. The proposal no longer matches the
prior, so each training pair is reweighted by ``prior / proposal``, estimated
with a probabilistic classifier.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPClassifier
from sklearn.utils.validation import check_array, check_is_fitted

from .networks import GeneratorNet
from .scoring_rules import ScoringRule
from .simulators import Dataset, SimulatorModel, generate_dataset
from .training import SRTrainConfig, TrainResult, sr_batch_loss, train_sr

__all__ = [
    "RatioEstimator",
    "RoundConfig",
    "RoundDiagnostics",
    "SequentialResult",
    "WeightDegeneracyError",
    "effective_sample_fraction",
    "fit_ratio_classifier",
    "run_sequential",
    "weighted_sr_loss",
    "write_round_csv",
]

logger = logging.getLogger(__name__)


class WeightDegeneracyError(RuntimeError):
    """Importance weights collapsed onto too few pairs."""


class RatioEstimator(BaseEstimator):
    """Density ratio ``p_num(theta) / p_den(theta)`` from a probabilistic classifier.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Hidden layers of the MLP classifier.
    max_iter : int
        Optimiser iterations for the classifier.
    random_state : int or None
        Seed for the classifier.
    """

    def __init__(self, hidden_layer_sizes=(64, 64), max_iter=500, random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, numerator, denominator):
        num = check_array(numerator, ensure_2d=False)
        den = check_array(denominator, ensure_2d=False)
        if len(num) == 0 or len(den) == 0:
            raise ValueError("both sample sets must be non-empty")
        num, den = num.reshape(len(num), -1), den.reshape(len(den), -1)
        x = np.concatenate([num, den])
        self.mean_ = x.mean(axis=0)
        self.scale_ = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
        target = np.concatenate([np.ones(len(num)), np.zeros(len(den))])
        self.classifier_ = MLPClassifier(hidden_layer_sizes=self.hidden_layer_sizes,
                                         max_iter=self.max_iter, random_state=self.random_state)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.classifier_.fit((x - self.mean_) / self.scale_, target)
        self.prior_correction_ = np.log(len(den) / len(num))
        return self

    def _logit(self, theta) -> np.ndarray:
        check_is_fitted(self, "classifier_")
        x = check_array(theta, ensure_2d=False)
        x = x.reshape(len(x), -1)
        proba = self.classifier_.predict_proba((x - self.mean_) / self.scale_)
        p_num = np.clip(proba[:, 1], 1e-12, 1 - 1e-12)
        return np.log(p_num) - np.log1p(-p_num)

    def predict_log(self, theta) -> np.ndarray:
        return self._logit(theta) + self.prior_correction_

    def predict(self, theta) -> np.ndarray:
        return np.exp(self.predict_log(theta))

    def __call__(self, theta) -> np.ndarray:
        return self.predict(theta)


def fit_ratio_classifier(samples_num, samples_den, seed=None, **kwargs) -> RatioEstimator:
    """Fit a :class:`RatioEstimator` for ``p_num / p_den``."""
    return RatioEstimator(random_state=seed, **kwargs).fit(samples_num, samples_den)


def effective_sample_fraction(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(w.sum() ** 2 / (len(w) * np.sum(w * w)))


def weighted_sr_loss(g: GeneratorNet, theta, y, rule: ScoringRule, m: int,
                     ratio: Callable[[np.ndarray], np.ndarray], rng=None, z=None):
    """Importance-weighted batch score; weights come from ``ratio(theta)`` and carry no gradient."""
    w = np.asarray(ratio(np.atleast_2d(theta)), dtype=np.float64).reshape(-1)
    return sr_batch_loss(g, theta, y, rule, m, rng=rng, z=z, weights=w)


@dataclass
class RoundConfig:
    n_rounds: int
    simulations_per_round: int
    y0: np.ndarray
    train: SRTrainConfig = field(default_factory=SRTrainConfig)
    min_ess_fraction: float = 0.05
    ratio_samples: int = 5000
    truncate_weights: bool = True

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        self.y0 = np.asarray(self.y0, dtype=np.float64).reshape(-1)


@dataclass
class RoundDiagnostics:
    round: int
    ess_fraction: float
    val_loss: float
    posterior_mean_error: float = float("nan")


@dataclass
class SequentialResult:
    generators: list[list[np.ndarray]]
    diagnostics: list[RoundDiagnostics]
    results: list[TrainResult]
    generator: GeneratorNet


def _capped(ratio: RatioEstimator, cap: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda theta: np.minimum(ratio.predict(theta), cap)


def _snapshot(g: GeneratorNet) -> list[np.ndarray]:
    return g.copy_weights()


def run_sequential(model: SimulatorModel, g: GeneratorNet, cfg: RoundConfig,
                   posterior_mean: Callable[[np.ndarray], np.ndarray] | None = None,
                   n_post: int = 2000) -> SequentialResult:
    """Train ``g`` over ``cfg.n_rounds`` rounds targeted at ``cfg.y0``.

    Round 1 is plain amortised training on prior pairs. Later rounds draw
    parameters from the current posterior at ``y0``, refit a classifier
    separating prior draws from all accumulated parameters, and retrain on
    every pair so far with the estimated importance weights (capped at
    ``mean * sqrt(n)`` unless ``cfg.truncate_weights`` is off).

    Raises:
        WeightDegeneracyError: the effective sample fraction of the weights
            drops below ``cfg.min_ess_fraction``.
    """
    if cfg.y0.size != model.data_dim:
        raise ValueError(f"y0 has dimension {cfg.y0.size}, model expects {model.data_dim}")
    ss = np.random.SeedSequence(cfg.train.seed)
    round_seeds = ss.spawn(cfg.n_rounds)
    snapshots, diagnostics, results = [], [], []
    thetas, ys = [], []
    rule = cfg.train.scoring_rule

    for r in range(cfg.n_rounds):
        sim_rng, train_seed, eval_rng = (np.random.default_rng(s) for s in round_seeds[r].spawn(3))
        if r == 0:
            # same data and seed as plain amortised training
            first = generate_dataset(model, cfg.simulations_per_round, cfg.train.seed)
            theta, y = first.theta, first.y
            round_cfg = cfg.train
        else:
            theta = g.sample(cfg.y0[None, :], cfg.simulations_per_round, sim_rng).data[0]
            theta = theta[model.in_support(theta)]
            if len(theta) == 0:
                raise WeightDegeneracyError("proposal produced no draws inside the prior support")
            y = model.simulate(theta, sim_rng)
            round_cfg = replace(cfg.train, seed=int(train_seed.integers(2**31)), scoring_rule=rule)
        thetas.append(theta)
        ys.append(y)
        data = Dataset(np.concatenate(thetas), np.concatenate(ys), model_name=model.name)

        weight_fn = None
        ess = 1.0
        if r > 0:
            prior_draws = model.prior_sample(cfg.ratio_samples, sim_rng)
            ratio = fit_ratio_classifier(prior_draws, data.theta, seed=int(sim_rng.integers(2**31)))
            weights = ratio.predict(data.theta)
            if cfg.truncate_weights:
                # truncated importance sampling: a single overconfident classifier
                # output in a sparse tail must not dominate the loss
                cap = weights.mean() * np.sqrt(len(weights))
                weights = np.minimum(weights, cap)
                weight_fn = _capped(ratio, cap)
            else:
                weight_fn = ratio.predict
            ess = effective_sample_fraction(weights)
            logger.info("round %d: effective sample fraction %.3f", r + 1, ess)
            if ess < cfg.min_ess_fraction:
                raise WeightDegeneracyError(
                    f"round {r + 1}: effective sample fraction {ess:.4f} below {cfg.min_ess_fraction}")

        result = train_sr(g, data, round_cfg, weight_fn=weight_fn)
        rule = result.rule  # keeps a median-heuristic bandwidth fixed across rounds
        results.append(result)
        snapshots.append(_snapshot(g))
        err = float("nan")
        if posterior_mean is not None:
            draws = g.sample(cfg.y0[None, :], n_post, eval_rng).data[0]
            err = float(np.mean(np.abs(draws.mean(axis=0) - posterior_mean(cfg.y0))))
        val = result.history[-1].val_loss if result.history else float("nan")
        diagnostics.append(RoundDiagnostics(r + 1, ess, val, err))
    return SequentialResult(snapshots, diagnostics, results, g)


def write_round_csv(diagnostics: list[RoundDiagnostics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "ess_fraction", "val_loss", "posterior_mean_error"])
        for d in diagnostics:
            writer.writerow([d.round, repr(d.ess_fraction), repr(d.val_loss), repr(d.posterior_mean_error)])
