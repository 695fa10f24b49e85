"""Stochastic-gradient trainers for conditional generators.

Two objectives are supported: scoring-rule minimisation (one unbiased score
estimate per training pair from ``m`` generator draws) and the conditional
GAN game against a critic with the Jensen-Shannon loss. Both use Adam on
shuffled mini-batches with optional early stopping on a validation score.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .networks import CriticNet, GeneratorNet
from .scoring_rules import ScoringRule, median_bandwidth
from .simulators import Dataset

__all__ = [
    "AdamState",
    "EpochRecord",
    "GANTrainConfig",
    "NonFiniteLossError",
    "SRTrainConfig",
    "TrainResult",
    "TrainState",
    "adam_update",
    "early_stop_check",
    "gan_batch_losses",
    "resolve_rule",
    "sr_batch_loss",
    "train_gan",
    "train_sr",
    "validation_score",
    "write_history_csv",
]

logger = logging.getLogger(__name__)

CRITIC_CLAMP = 1e-7
IMPROVEMENT_TOL = 1e-6


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


@dataclass
class SRTrainConfig:
    scoring_rule: ScoringRule = field(default_factory=ScoringRule.energy)
    m: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 100
    early_stopping: bool = False
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("scoring-rule training needs m >= 2")
        _check_common(self)


@dataclass
class GANTrainConfig:
    generator_lr: float = 1e-3
    critic_lr: float = 1e-3
    critic_steps: int = 1
    batch_size: int = 128
    max_epochs: int = 100
    early_stopping: bool = False
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    probe_m: int = 10

    def __post_init__(self):
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        _check_common(self)


def _check_common(cfg):
    if cfg.batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if cfg.max_epochs < 0:
        raise ValueError("max_epochs must be >= 0")
    if cfg.patience < 1:
        raise ValueError("patience must be >= 1")
    if cfg.early_stopping and not 0 < cfg.validation_fraction < 1:
        raise ValueError("early stopping needs 0 < validation_fraction < 1")
    if not 0 <= cfg.validation_fraction < 1:
        raise ValueError("validation_fraction must be in [0, 1)")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, weights: list[Tensor]) -> "AdamState":
        return cls([np.zeros(w.shape) for w in weights], [np.zeros(w.shape) for w in weights])


@dataclass
class TrainState:
    adam: AdamState
    epoch: int = 0
    best_val: float = np.inf
    since_improvement: int = 0
    best_epoch: int = 0


def adam_update(weights: list[Tensor], grads: list[np.ndarray], state: AdamState,
                lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam step, applied to ``weights`` in place."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for w, g, m, v in zip(weights, grads, state.m, state.v):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weight shape {w.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def early_stop_check(state: TrainState, val_loss: float, patience: int) -> tuple[bool, TrainState]:
    """Record a validation loss; stop after ``patience`` checks without strict improvement."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if val_loss < state.best_val - IMPROVEMENT_TOL:
        state.best_val = val_loss
        state.best_epoch = state.epoch
        state.since_improvement = 0
    else:
        state.since_improvement += 1
    return state.since_improvement >= patience, state


def resolve_rule(rule: ScoringRule, theta: np.ndarray) -> ScoringRule:
    """Fill a missing kernel bandwidth with the median heuristic on ``theta``."""
    if rule.needs_bandwidth:
        gamma = median_bandwidth(theta)
        logger.info("kernel bandwidth set by median heuristic: %.4g", gamma)
        return rule.with_gamma(gamma)
    return rule


def sr_batch_loss(g: GeneratorNet, theta, y, rule: ScoringRule, m: int,
                  rng: np.random.Generator | None = None, z=None, weights=None) -> Tensor:
    """Mean unbiased score over a batch of ``(theta_i, y_i)`` pairs.

    Each pair gets ``m`` fresh latent draws (or the supplied ``z`` of shape
    ``(B, m, latent_dim)``). Optional per-pair ``weights`` are constants.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(theta) == 0:
        raise ValueError("batch is empty")
    if z is None:
        z = g.latent.draw(rng, (len(theta), m))
    samples = g.forward(z, y)
    scores = rule.estimate(samples, Tensor(theta))
    if weights is not None:
        scores = scores * np.asarray(weights, dtype=np.float64)
    return ad.mean(scores)


def validation_score(g: GeneratorNet, data: Dataset, rule: ScoringRule, m: int, seed,
                     weights=None, batch_size: int = 1024) -> float:
    """Average (optionally weighted) score over ``data``, latents from a dedicated seed."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        w = None if weights is None else weights[sl]
        loss = sr_batch_loss(g, data.theta[sl], data.y[sl], rule, m, rng, weights=w)
        total += loss.item() * len(data.theta[sl])
    return total / len(data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_time_sec: float


@dataclass
class TrainResult:
    generator: GeneratorNet
    history: list[EpochRecord]
    best_epoch: int
    stopped_epoch: int
    wall_time_sec: float
    rule: ScoringRule | None = None
    critic: CriticNet | None = None
    critic_history: list[float] = field(default_factory=list)

    def __iter__(self):
        # allows ``g, history = train_sr(...)``
        yield self.generator
        yield self.history


def _split(data: Dataset, fraction: float, rng: np.random.Generator):
    if fraction <= 0:
        return data, None
    n_val = max(1, int(round(fraction * len(data))))
    perm = rng.permutation(len(data))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def _seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    split, shuffle, val = ss.spawn(3)
    return (np.random.default_rng(split), np.random.default_rng(shuffle),
            int(val.generate_state(1)[0]))


def train_sr(g: GeneratorNet, data: Dataset, cfg: SRTrainConfig,
             weight_fn: Callable[[np.ndarray], np.ndarray] | None = None,
             callback: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train ``g`` by minimising an unbiased scoring-rule estimate.

    Args:
        g: Generator, updated in place.
        data: Training pairs; a ``validation_fraction`` slice is held out.
        cfg: Training configuration.
        weight_fn: Optional map from a ``(B, p)`` theta batch to per-pair
            importance weights (treated as constants).
        callback: Called with each epoch record.

    Raises:
        NonFiniteLossError: a batch loss was NaN or infinite.
    """
    if len(data) < cfg.batch_size and len(data) < 2:
        raise ValueError("dataset is too small")
    split_rng, rng, val_seed = _seeds(cfg.seed)
    train, val = _split(data, cfg.validation_fraction, split_rng)
    if len(train) < cfg.batch_size:
        logger.warning("training set (%d) smaller than batch size (%d)", len(train), cfg.batch_size)
    rule = resolve_rule(cfg.scoring_rule, train.theta[: cfg.batch_size])
    state = TrainState(AdamState.zeros_like(g.weights))
    history: list[EpochRecord] = []
    best_weights = g.copy_weights()
    start = time.perf_counter()

    def val_weights(subset):
        return None if weight_fn is None else weight_fn(subset.theta)

    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        perm = rng.permutation(len(train))
        losses = []
        for b, lo in enumerate(range(0, len(train), cfg.batch_size)):
            idx = perm[lo: lo + cfg.batch_size]
            w = None if weight_fn is None else weight_fn(train.theta[idx])
            with Tape():
                loss = sr_batch_loss(g, train.theta[idx], train.y[idx], rule, cfg.m, rng, weights=w)
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteLossError(epoch, b, value)
                ad.backward(loss, wrt=g.weights)
            adam_update(g.weights, [p.grad for p in g.weights], state.adam, cfg.learning_rate)
            losses.append(value)
        val_loss = np.nan
        if val is not None:
            val_loss = validation_score(g, val, rule, cfg.m, val_seed, val_weights(val))
        record = EpochRecord(epoch, float(np.mean(losses)), float(val_loss),
                             time.perf_counter() - start)
        history.append(record)
        if callback:
            callback(record)
        logger.debug("epoch %d train %.5f val %.5f", epoch, record.train_loss, val_loss)
        if cfg.early_stopping:
            stop, state = early_stop_check(state, val_loss, cfg.patience)
            if state.best_epoch == epoch:
                best_weights = g.copy_weights()
            if stop:
                break
    if cfg.early_stopping and history:
        g.set_weights(best_weights)
    best = state.best_epoch if cfg.early_stopping else len(history)
    return TrainResult(g, history, best, len(history), time.perf_counter() - start, rule=rule)


def gan_batch_losses(g: GeneratorNet, c: CriticNet, theta, y, seed) -> tuple[Tensor, Tensor]:
    """Critic and generator losses for one batch, one latent draw per pair.

    Critic loss: ``-mean[log c(theta, y) + log(1 - c(fake, y))]``.
    Generator loss: ``mean[log(1 - c(fake, y))]``.
    Critic outputs are clamped to ``[1e-7, 1 - 1e-7]`` before the logs.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(theta) == 0:
        raise ValueError("batch is empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = g.latent.draw(rng, (len(theta), 1))
    fake = ad.reshape(g.forward(z, y), (len(theta), g.parameter_dim))
    c_real = ad.clip(c(Tensor(theta), y), CRITIC_CLAMP, 1 - CRITIC_CLAMP)
    c_fake = ad.clip(c(fake, y), CRITIC_CLAMP, 1 - CRITIC_CLAMP)
    log_fake = ad.log(1.0 - c_fake)
    critic_loss = -(ad.mean(ad.log(c_real)) + ad.mean(log_fake))
    generator_loss = ad.mean(log_fake)
    return critic_loss, generator_loss


def train_gan(g: GeneratorNet, c: CriticNet, data: Dataset, cfg: GANTrainConfig,
              callback: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Alternating conditional GAN training.

    Each batch runs ``critic_steps`` critic updates (fresh latents each) and
    then one generator update. The validation loss is an energy-score probe
    of the generator, which is also what early stopping monitors.
    """
    split_rng, rng, val_seed = _seeds(cfg.seed)
    train, val = _split(data, cfg.validation_fraction, split_rng)
    probe = ScoringRule.energy()
    g_state = TrainState(AdamState.zeros_like(g.weights))
    c_state = AdamState.zeros_like(c.weights)
    history: list[EpochRecord] = []
    critic_history: list[float] = []
    best_weights = g.copy_weights()
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        g_state.epoch = epoch
        perm = rng.permutation(len(train))
        g_losses, c_losses = [], []
        for b, lo in enumerate(range(0, len(train), cfg.batch_size)):
            idx = perm[lo: lo + cfg.batch_size]
            for _ in range(cfg.critic_steps):
                with Tape():
                    c_loss, _ = gan_batch_losses(g, c, train.theta[idx], train.y[idx], rng)
                    if not np.isfinite(c_loss.item()):
                        raise NonFiniteLossError(epoch, b, c_loss.item())
                    ad.backward(c_loss, wrt=c.weights)
                adam_update(c.weights, [p.grad for p in c.weights], c_state, cfg.critic_lr)
                c_losses.append(c_loss.item())
            with Tape():
                _, g_loss = gan_batch_losses(g, c, train.theta[idx], train.y[idx], rng)
                if not np.isfinite(g_loss.item()):
                    raise NonFiniteLossError(epoch, b, g_loss.item())
                ad.backward(g_loss, wrt=g.weights)
            adam_update(g.weights, [p.grad for p in g.weights], g_state.adam, cfg.generator_lr)
            g_losses.append(g_loss.item())
        val_loss = np.nan
        if val is not None:
            val_loss = validation_score(g, val, probe, cfg.probe_m, val_seed)
        record = EpochRecord(epoch, float(np.mean(g_losses)), float(val_loss),
                             time.perf_counter() - start)
        history.append(record)
        critic_history.append(float(np.mean(c_losses)))
        if callback:
            callback(record)
        if cfg.early_stopping:
            stop, g_state = early_stop_check(g_state, val_loss, cfg.patience)
            if g_state.best_epoch == epoch:
                best_weights = g.copy_weights()
            if stop:
                break
    if cfg.early_stopping and history:
        g.set_weights(best_weights)
    best = g_state.best_epoch if cfg.early_stopping else len(history)
    return TrainResult(g, history, best, len(history), time.perf_counter() - start,
                       critic=c, critic_history=critic_history)


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "wall_time_sec"])
        for r in history:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_time_sec:.6f}"])
