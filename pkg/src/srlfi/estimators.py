"""scikit-learn style estimators for amortised posterior approximation.

Following the usual convention, ``X`` holds the simulated observations and
the target holds the parameters that generated them::

    est = ScoringRulePosterior(scoring="energy", m=10, random_state=0)
    est.fit(data.y, data.theta)
    draws = est.sample(y_obs, n_samples=1000)   # (n_obs, 1000, p)
    theta_hat = est.predict(y_obs)              # posterior means
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .networks import GeneratorNet, make_critic, make_generator
from .scoring_rules import PatchLayout, ScoringRule
from .simulators import Dataset
from .training import GANTrainConfig, SRTrainConfig, train_gan, train_sr, validation_score

__all__ = ["GANPosterior", "ScoringRulePosterior", "build_rule"]


def build_rule(scoring: str, beta: float = 1.0, gamma: float | None = None,
               patch_grid=None, patch_size=None, patch_step=None,
               w1: float = 1.0, w2: float = 1.0) -> ScoringRule:
    """Scoring rule from flat settings: ``energy``, ``kernel``, ``patched-energy``, ``patched-kernel``."""
    if scoring in ("energy", "kernel"):
        return ScoringRule.energy(beta) if scoring == "energy" else ScoringRule.kernel(gamma)
    if scoring in ("patched-energy", "patched-kernel"):
        if patch_grid is None or patch_size is None or patch_step is None:
            raise ValueError(f"{scoring} needs patch_grid, patch_size and patch_step")
        base = build_rule(scoring.split("-", 1)[1], beta, gamma)
        return ScoringRule.patched(base, PatchLayout(patch_grid, patch_size, patch_step, w1, w2))
    raise ValueError(f"unknown scoring rule {scoring!r}")


class _GenerativePosterior(BaseEstimator):
    """Shared fit/sample/predict plumbing; subclasses implement ``_train``."""

    def _check_fit_inputs(self, X, theta):
        X, theta = check_X_y(X, theta, multi_output=True, y_numeric=True)
        theta = theta.reshape(len(theta), -1).astype(np.float64)
        self.n_features_in_ = X.shape[1]
        self.n_params_ = theta.shape[1]
        return X.astype(np.float64), theta

    def _make_generator(self) -> GeneratorNet:
        return make_generator(self.n_params_, self.n_features_in_,
                              hidden=self.hidden_layer_sizes, latent_dim=self.latent_dim,
                              latent_family=self.latent_family, activation=self.activation,
                              bounds=self.bounds, seed=self.random_state)

    def fit(self, X, theta):
        X, theta = self._check_fit_inputs(X, theta)
        data = Dataset(theta, X)
        self.generator_ = self._make_generator()
        result = self._train(data)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_epochs_ = result.stopped_epoch
        self.wall_time_ = result.wall_time_sec
        return self

    def sample(self, X, n_samples: int = 1000, random_state=None) -> np.ndarray:
        """Posterior draws, shape ``(n_obs, n_samples, n_params)``."""
        check_is_fitted(self, "generator_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        rng = np.random.default_rng(random_state)
        return self.generator_.sample(X, n_samples, rng).data

    def predict(self, X, n_samples: int = 1000, random_state=None) -> np.ndarray:
        """Posterior means estimated from ``n_samples`` draws."""
        return self.sample(X, n_samples, random_state).mean(axis=1)

    def score(self, X, theta, m: int = 10, random_state=0) -> float:
        """Negative mean energy score on held-out pairs (higher is better)."""
        check_is_fitted(self, "generator_")
        X, theta = check_X_y(X, theta, multi_output=True, y_numeric=True)
        data = Dataset(theta.reshape(len(theta), -1), X)
        return -validation_score(self.generator_, data, ScoringRule.energy(), m, random_state)


class ScoringRulePosterior(_GenerativePosterior):
    """Conditional generator trained by scoring-rule minimisation.

    Parameters
    ----------
    scoring : {"energy", "kernel", "patched-energy", "patched-kernel"}
    beta : float
        Energy score exponent in (0, 2).
    gamma : float or None
        Kernel bandwidth; ``None`` uses the median heuristic.
    patch_grid, patch_size, patch_step, w1, w2
        Patch layout for the patched variants.
    m : int
        Generator draws per training pair (>= 2).
    hidden_layer_sizes, activation, latent_dim, latent_family, bounds
        Generator architecture. ``bounds=(low, high)`` squashes outputs into a box.
    learning_rate, batch_size, max_epochs, early_stopping, patience,
    validation_fraction, random_state
        Optimisation settings.
    """

    def __init__(self, scoring="energy", beta=1.0, gamma=None, patch_grid=None,
                 patch_size=None, patch_step=None, w1=1.0, w2=1.0, m=10,
                 hidden_layer_sizes=(128, 128, 128), activation="leaky_relu",
                 latent_dim=None, latent_family="normal", bounds=None,
                 learning_rate=1e-3, batch_size=128, max_epochs=100,
                 early_stopping=False, patience=10, validation_fraction=0.1,
                 random_state=0):
        self.scoring = scoring
        self.beta = beta
        self.gamma = gamma
        self.patch_grid = patch_grid
        self.patch_size = patch_size
        self.patch_step = patch_step
        self.w1 = w1
        self.w2 = w2
        self.m = m
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.latent_dim = latent_dim
        self.latent_family = latent_family
        self.bounds = bounds
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stopping = early_stopping
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train(self, data):
        rule = build_rule(self.scoring, self.beta, self.gamma, self.patch_grid,
                          self.patch_size, self.patch_step, self.w1, self.w2)
        cfg = SRTrainConfig(scoring_rule=rule, m=self.m, batch_size=self.batch_size,
                            learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                            early_stopping=self.early_stopping, patience=self.patience,
                            validation_fraction=self.validation_fraction,
                            seed=self.random_state)
        result = train_sr(self.generator_, data, cfg)
        self.scoring_rule_ = result.rule
        return result


class GANPosterior(_GenerativePosterior):
    """Conditional generator trained adversarially against a critic.

    Parameters mirror :class:`ScoringRulePosterior` where they overlap;
    ``generator_lr``, ``critic_lr`` and ``critic_steps`` set the alternating
    updates, ``critic_hidden_layer_sizes`` the critic architecture.
    """

    def __init__(self, generator_lr=1e-3, critic_lr=1e-3, critic_steps=1,
                 hidden_layer_sizes=(128, 128, 128), critic_hidden_layer_sizes=(128, 128, 128),
                 activation="leaky_relu", latent_dim=None, latent_family="normal",
                 bounds=None, batch_size=128, max_epochs=100, early_stopping=False,
                 patience=10, validation_fraction=0.1, random_state=0):
        self.generator_lr = generator_lr
        self.critic_lr = critic_lr
        self.critic_steps = critic_steps
        self.hidden_layer_sizes = hidden_layer_sizes
        self.critic_hidden_layer_sizes = critic_hidden_layer_sizes
        self.activation = activation
        self.latent_dim = latent_dim
        self.latent_family = latent_family
        self.bounds = bounds
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stopping = early_stopping
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train(self, data):
        self.critic_ = make_critic(self.n_params_, self.n_features_in_,
                                   hidden=self.critic_hidden_layer_sizes,
                                   activation=self.activation, seed=self.random_state + 1)
        cfg = GANTrainConfig(generator_lr=self.generator_lr, critic_lr=self.critic_lr,
                             critic_steps=self.critic_steps, batch_size=self.batch_size,
                             max_epochs=self.max_epochs, early_stopping=self.early_stopping,
                             patience=self.patience,
                             validation_fraction=self.validation_fraction,
                             seed=self.random_state)
        result = train_gan(self.generator_, self.critic_, data, cfg)
        self.critic_history_ = result.critic_history
        return result
