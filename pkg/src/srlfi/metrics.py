"""Accuracy and calibration metrics for approximate posteriors.

Univariate metrics are computed per parameter component and averaged.
Posterior samples are passed as arrays of shape ``(n_pairs, n_post, p)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import KFold
from sklearn.neural_network import MLPClassifier

__all__ = [
    "MetricsReport",
    "NRMSEResult",
    "SBCResult",
    "c2st_accuracy",
    "calibration_error",
    "coverage_curve",
    "evaluate_posterior",
    "nrmse",
    "r_squared",
    "sbc_ks_pvalues",
    "sbc_ranks",
]

ALPHA_GRID = np.linspace(0.0, 1.0, 102)[1:-1]  # 100 interior levels


class NRMSEResult(NamedTuple):
    value: float
    normalized: bool


def nrmse(truths, predictions) -> NRMSEResult:
    """RMSE divided by the range of the truths.

    If the truths are constant the range is zero; the plain RMSE is returned
    with ``normalized=False``.
    """
    t = np.asarray(truths, dtype=np.float64).ravel()
    p = np.asarray(predictions, dtype=np.float64).ravel()
    if t.size < 2 or t.shape != p.shape:
        raise ValueError("nrmse needs two equally sized vectors of length >= 2")
    rmse = float(np.sqrt(np.mean((p - t) ** 2)))
    span = float(t.max() - t.min())
    if span == 0:
        return NRMSEResult(rmse, False)
    return NRMSEResult(rmse / span, True)


def r_squared(truths, predictions) -> float:
    t = np.asarray(truths, dtype=np.float64).ravel()
    p = np.asarray(predictions, dtype=np.float64).ravel()
    denom = np.sum((t - t.mean()) ** 2)
    if denom == 0:
        raise ValueError("r_squared is undefined for constant truths")
    return float(1.0 - np.sum((t - p) ** 2) / denom)


def _as_samples(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim == 2:
        s = s[..., None]
    if s.ndim != 3:
        raise ValueError("samples must have shape (n_pairs, n_post[, p])")
    return s


def coverage_curve(truths, samples, alphas=ALPHA_GRID) -> np.ndarray:
    """Empirical coverage of central credible intervals, shape ``(len(alphas), p)``."""
    s = _as_samples(samples)
    t = np.asarray(truths, dtype=np.float64).reshape(len(s), -1)
    alphas = np.asarray(alphas)
    qs = np.concatenate([(1 - alphas) / 2, (1 + alphas) / 2])
    # sort once, then linear interpolation as in np.quantile's default method
    srt = np.sort(s, axis=1)
    pos = qs * (srt.shape[1] - 1)
    below = np.floor(pos).astype(int)
    above = np.minimum(below + 1, srt.shape[1] - 1)
    frac = (pos - below)[:, None, None]
    bounds = srt[:, below].transpose(1, 0, 2) * (1 - frac) + srt[:, above].transpose(1, 0, 2) * frac
    lo, hi = bounds[: len(alphas)], bounds[len(alphas):]
    inside = (t[None] >= lo) & (t[None] <= hi)
    return inside.mean(axis=1)


def calibration_error(truths, samples, alphas=ALPHA_GRID) -> np.ndarray:
    """Median over credibility levels of ``|coverage - level|``, per component."""
    cov = coverage_curve(truths, samples, alphas)
    return np.median(np.abs(cov - np.asarray(alphas)[:, None]), axis=0)


@dataclass
class SBCResult:
    ranks: np.ndarray  # (n_priors, p), values in 0..N
    N: int


def sbc_ranks(model, approx_sampler: Callable, n_priors: int, N: int, seed) -> SBCResult:
    """Simulation-based calibration ranks.

    For each prior draw, simulate one observation, draw ``N`` samples from
    ``approx_sampler(y, N, rng)`` and count, per component, how many fall
    strictly below the prior draw.
    """
    if N < 10:
        raise ValueError("SBC needs N >= 10")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = model.prior_sample(n_priors, rng)
    ys = model.simulate(theta, rng)
    ranks = np.empty((n_priors, model.parameter_dim), dtype=np.int64)
    for i in range(n_priors):
        draws = np.asarray(approx_sampler(ys[i], N, rng), dtype=np.float64).reshape(N, -1)
        ranks[i] = np.sum(draws < theta[i], axis=0)
    return SBCResult(ranks, N)


def sbc_ks_pvalues(result: SBCResult, seed=0) -> np.ndarray:
    """KS p-value per component for uniformity of the ranks on ``{0..N}``.

    Discrete ranks are mapped to continuous ones by adding a uniform jitter on
    each of the ``N + 1`` cells, which is exactly uniform on (0, 1) under the
    null hypothesis.
    """
    rng = np.random.default_rng(seed)
    r = np.asarray(result.ranks, dtype=np.float64)
    u = (r + rng.uniform(size=r.shape)) / (result.N + 1)
    return np.array([stats.kstest(u[:, j], "uniform").pvalue for j in range(u.shape[1])])


def c2st_accuracy(samples_p, samples_q, seed=0, n_folds: int = 5, hidden_scale: int = 10,
                  max_iter: int = 1000) -> float:
    """Classifier two-sample test accuracy (0.5 means indistinguishable).

    An MLP with two hidden layers of ``hidden_scale * d`` units is scored by
    ``n_folds``-fold cross-validation after z-scoring with the statistics of
    ``samples_p``.
    """
    x = np.atleast_2d(np.asarray(samples_p, dtype=np.float64))
    y = np.atleast_2d(np.asarray(samples_q, dtype=np.float64))
    if x.shape[0] == 1:
        x, y = x.T, y.T
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd[sd < 1e-14] = 1.0
    data = (np.concatenate([x, y]) - mu) / sd
    target = np.concatenate([np.zeros(len(x)), np.ones(len(y))])
    width = hidden_scale * data.shape[1]
    scores = []
    folds = KFold(n_splits=n_folds, shuffle=True, random_state=seed)
    for train_idx, test_idx in folds.split(data):
        clf = MLPClassifier(hidden_layer_sizes=(width, width), max_iter=max_iter,
                            solver="adam", random_state=seed)
        with warnings.catch_warnings():
            # hitting max_iter is expected on near-identical samples
            warnings.simplefilter("ignore", ConvergenceWarning)
            clf.fit(data[train_idx], target[train_idx])
        scores.append(clf.score(data[test_idx], target[test_idx]))
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    nrmse: np.ndarray
    r2: np.ndarray
    calibration_error: np.ndarray
    nrmse_normalized: np.ndarray
    wall_time_sec: float = float("nan")
    early_stop_epoch: int | None = None
    c2st: float | None = None
    sbc_pvalues: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def mean_nrmse(self) -> float:
        return float(np.mean(self.nrmse))

    @property
    def mean_r2(self) -> float:
        return float(np.mean(self.r2))

    @property
    def mean_calibration_error(self) -> float:
        return float(np.mean(self.calibration_error))

    def rows(self) -> list[tuple[str, str, float]]:
        """``(metric, component, value)`` rows; component ``"mean"`` is the average."""
        out = []
        for name, values in (("nrmse", self.nrmse), ("r2", self.r2),
                             ("calibration_error", self.calibration_error)):
            for j, v in enumerate(values):
                out.append((name, str(j), float(v)))
            out.append((name, "mean", float(np.mean(values))))
        if self.c2st is not None:
            out.append(("c2st", "mean", float(self.c2st)))
        if self.sbc_pvalues is not None:
            for j, v in enumerate(self.sbc_pvalues):
                out.append(("sbc_ks_pvalue", str(j), float(v)))
        if self.early_stop_epoch is not None:
            out.append(("early_stop_epoch", "mean", float(self.early_stop_epoch)))
        for k, v in self.extras.items():
            out.append((k, "mean", float(v)))
        return out


def evaluate_posterior(truths, samples) -> MetricsReport:
    """NRMSE, R^2 and calibration error per component, using posterior means."""
    s = _as_samples(samples)
    t = np.asarray(truths, dtype=np.float64).reshape(len(s), -1)
    means = s.mean(axis=1)
    p = t.shape[1]
    nr = [nrmse(t[:, j], means[:, j]) for j in range(p)]
    r2 = []
    for j in range(p):
        try:
            r2.append(r_squared(t[:, j], means[:, j]))
        except ValueError:
            r2.append(np.nan)
    return MetricsReport(
        nrmse=np.array([v.value for v in nr]),
        r2=np.array(r2),
        calibration_error=calibration_error(t, s),
        nrmse_normalized=np.array([v.normalized for v in nr]),
    )
