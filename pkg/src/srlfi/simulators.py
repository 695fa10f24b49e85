"""Benchmark simulator models producing ``(theta, y)`` pairs.

All models share the :class:`SimulatorModel` interface: a prior sampler, a
vectorised forward simulator, and optionally an exact (or long-run
reference) posterior sampler used as an oracle in evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "ConjugateGaussian",
    "Dataset",
    "GridToy",
    "SLCP",
    "SimulatorModel",
    "SupportError",
    "TwoMoons",
    "analytic_posterior_gaussian",
    "generate_dataset",
    "get_model",
    "prior_sample",
    "simulate",
]


class SupportError(ValueError):
    """Parameter lies outside the prior support."""


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class SimulatorModel:
    name: str = ""
    parameter_dim: int = 0
    data_dim: int = 0
    bounds: tuple[np.ndarray, np.ndarray] | None = None
    grid: tuple[int, ...] | None = None

    def prior_sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _simulate(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def in_support(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        if self.bounds is None:
            return np.all(np.isfinite(theta), axis=1)
        low, high = self.bounds
        return np.all((theta >= low) & (theta <= high), axis=1)

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        single = theta.ndim == 1
        theta = np.atleast_2d(theta)
        if theta.shape[1] != self.parameter_dim:
            raise ValueError(f"{self.name}: theta must have {self.parameter_dim} components")
        if not np.all(self.in_support(theta)):
            raise SupportError(f"{self.name}: theta outside prior support")
        y = self._simulate(theta, rng)
        return y[0] if single else y

    def posterior_sampler(self, y, n: int, rng: np.random.Generator) -> np.ndarray:
        """Reference posterior draws at ``y``; only some models provide one."""
        raise NotImplementedError(f"{self.name} has no reference posterior sampler")

    @property
    def has_reference_posterior(self) -> bool:
        return type(self).posterior_sampler is not SimulatorModel.posterior_sampler


def analytic_posterior_gaussian(prior_mean: float, prior_sd: float, noise_sd: float, y):
    """Posterior mean and sd of ``theta ~ N(mu0, s0^2)``, ``y | theta ~ N(theta, s^2)``."""
    if prior_sd <= 0 or noise_sd <= 0:
        raise ValueError("prior_sd and noise_sd must be positive")
    v0, v = prior_sd**2, noise_sd**2
    y = np.asarray(y, dtype=np.float64)
    mean = (v0 * y + v * prior_mean) / (v0 + v)
    sd = np.sqrt(v0 * v / (v0 + v))
    return mean, sd


@dataclass
class ConjugateGaussian(SimulatorModel):
    """Scalar Gaussian prior with Gaussian observation noise."""

    prior_mean: float = 0.0
    prior_sd: float = 1.0
    noise_sd: float = 1.0
    name: str = field(default="conjugate_gaussian", init=False)
    parameter_dim: int = field(default=1, init=False)
    data_dim: int = field(default=1, init=False)

    def prior_sample(self, k, rng):
        return self.prior_mean + self.prior_sd * rng.standard_normal((k, 1))

    def _simulate(self, theta, rng):
        return theta + self.noise_sd * rng.standard_normal(theta.shape)

    def posterior(self, y):
        return analytic_posterior_gaussian(self.prior_mean, self.prior_sd, self.noise_sd, y)

    def posterior_sampler(self, y, n, rng):
        mean, sd = self.posterior(float(np.ravel(y)[0]))
        return mean + sd * rng.standard_normal((n, 1))

    def log_prior(self, theta):
        return stats.norm.logpdf(np.ravel(theta), self.prior_mean, self.prior_sd)


@dataclass
class TwoMoons(SimulatorModel):
    """Two Moons benchmark: crescent-shaped, bimodal posterior in 2D."""

    name: str = field(default="two_moons", init=False)
    parameter_dim: int = field(default=2, init=False)
    data_dim: int = field(default=2, init=False)

    def __post_init__(self):
        self.bounds = (np.full(2, -1.0), np.full(2, 1.0))

    def prior_sample(self, k, rng):
        return rng.uniform(-1.0, 1.0, (k, 2))

    @staticmethod
    def _crescent(k, rng):
        a = rng.uniform(-np.pi / 2, np.pi / 2, k)
        r = rng.normal(0.1, 0.01, k)
        return np.column_stack([r * np.cos(a) + 0.25, r * np.sin(a)])

    def _simulate(self, theta, rng):
        p = self._crescent(len(theta), rng)
        shift = np.column_stack([
            -np.abs(theta[:, 0] + theta[:, 1]) / np.sqrt(2),
            (-theta[:, 0] + theta[:, 1]) / np.sqrt(2),
        ])
        return p + shift

    def posterior_sampler(self, y, n, rng, max_rounds: int = 1000):
        """Exact rejection sampler obtained by inverting the simulator.

        The map from ``theta`` to the shift is measure preserving on each of
        its two branches, so drawing the crescent noise, inverting, and
        rejecting draws outside the prior box gives exact posterior samples.
        """
        y = np.asarray(y, dtype=np.float64).reshape(2)
        out = []
        have = 0
        for _ in range(max_rounds):
            k = max(2 * (n - have), 1000)
            p = self._crescent(k, rng)
            u = y[0] - p[:, 0]
            v = y[1] - p[:, 1]
            ok = u <= 0
            s = -np.sqrt(2) * u * rng.choice([-1.0, 1.0], k)  # theta1 + theta2
            d = np.sqrt(2) * v  # theta2 - theta1
            theta = np.column_stack([(s - d) / 2, (s + d) / 2])
            ok &= np.all(np.abs(theta) <= 1.0, axis=1)
            out.append(theta[ok])
            have += int(ok.sum())
            if have >= n:
                break
        else:
            raise RuntimeError("two moons rejection sampler did not accept enough draws")
        return np.concatenate(out)[:n]


@dataclass
class SLCP(SimulatorModel):
    """Simple likelihood, complex posterior: four 2D Gaussian draws per theta."""

    name: str = field(default="slcp", init=False)
    parameter_dim: int = field(default=5, init=False)
    data_dim: int = field(default=8, init=False)

    def __post_init__(self):
        self.bounds = (np.full(5, -3.0), np.full(5, 3.0))

    def prior_sample(self, k, rng):
        return rng.uniform(-3.0, 3.0, (k, 5))

    @staticmethod
    def _moments(theta):
        s1 = theta[:, 2] ** 2
        s2 = theta[:, 3] ** 2
        rho = np.tanh(theta[:, 4])
        cov = np.empty((len(theta), 2, 2))
        cov[:, 0, 0] = s1**2
        cov[:, 1, 1] = s2**2
        cov[:, 0, 1] = cov[:, 1, 0] = rho * s1 * s2
        return theta[:, :2], cov

    def _simulate(self, theta, rng):
        mean, cov = self._moments(theta)
        s1, s2 = np.sqrt(cov[:, 0, 0]), np.sqrt(cov[:, 1, 1])
        rho = np.tanh(theta[:, 4])
        e = rng.standard_normal((len(theta), 4, 2))
        x0 = s1[:, None] * e[..., 0]
        x1 = s2[:, None] * (rho[:, None] * e[..., 0] + np.sqrt(1 - rho**2)[:, None] * e[..., 1])
        pts = mean[:, None, :] + np.stack([x0, x1], axis=-1)
        return pts.reshape(len(theta), 8)

    def log_likelihood(self, theta, y):
        theta = np.atleast_2d(theta)
        mean, cov = self._moments(theta)
        pts = np.asarray(y, dtype=np.float64).reshape(4, 2)
        det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
        det = np.maximum(det, 1e-300)
        inv = np.empty_like(cov)
        inv[:, 0, 0] = cov[:, 1, 1] / det
        inv[:, 1, 1] = cov[:, 0, 0] / det
        inv[:, 0, 1] = inv[:, 1, 0] = -cov[:, 0, 1] / det
        r = pts[None, :, :] - mean[:, None, :]
        quad = np.einsum("npi,nij,npj->n", r, inv, r)
        return -0.5 * quad - 2.0 * np.log(det) - 4.0 * np.log(2 * np.pi)

    def posterior_sampler(self, y, n, rng, n_proposals: int = 2_000_000, chunk: int = 200_000):
        """Sampling-importance-resampling from the prior (long-run reference)."""
        thetas, logw = [], []
        for start in range(0, n_proposals, chunk):
            th = self.prior_sample(min(chunk, n_proposals - start), rng)
            lw = self.log_likelihood(th, y)
            keep = lw > -np.inf
            thetas.append(th[keep])
            logw.append(lw[keep])
        th = np.concatenate(thetas)
        lw = np.concatenate(logw)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        idx = rng.choice(len(th), size=n, replace=True, p=w)
        return th[idx]


def _se_kernel_cov(n: int, length_scale: float, variance: float = 1.0, jitter: float = 1e-6):
    x = np.arange(n, dtype=np.float64)
    cov = variance * np.exp(-0.5 * (x[:, None] - x[None, :]) ** 2 / length_scale**2)
    return cov + jitter * np.eye(n)


def _moving_average_matrix(n: int, window: int) -> np.ndarray:
    half = window // 2
    a = np.zeros((n, n))
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        a[i, lo:hi] = 1.0 / (hi - lo)
    return a


@dataclass
class GridToy(SimulatorModel):
    """1D grid model: smooth Gaussian-process field observed through a moving average.

    Linear-Gaussian, so the posterior is Gaussian and available in closed form.
    """

    size: int = 40
    length_scale: float = 5.0
    window: int = 3
    noise_sd: float = 0.1
    name: str = field(default="grid_toy", init=False)

    def __post_init__(self):
        self.parameter_dim = self.size
        self.data_dim = self.size
        self.grid = (self.size,)
        self.prior_cov = _se_kernel_cov(self.size, self.length_scale)
        self._prior_chol = np.linalg.cholesky(self.prior_cov)
        self.forward_matrix = _moving_average_matrix(self.size, self.window)
        a, s = self.forward_matrix, self.prior_cov
        noise = self.noise_sd**2 * np.eye(self.size)
        gain = np.linalg.solve(a @ s @ a.T + noise, a @ s).T  # S A^T (A S A^T + N)^-1
        self._gain = gain
        post_cov = s - gain @ a @ s
        self.posterior_cov = 0.5 * (post_cov + post_cov.T)
        self._post_chol = np.linalg.cholesky(self.posterior_cov + 1e-10 * np.eye(self.size))

    def prior_sample(self, k, rng):
        return rng.standard_normal((k, self.size)) @ self._prior_chol.T

    def _simulate(self, theta, rng):
        return theta @ self.forward_matrix.T + self.noise_sd * rng.standard_normal(theta.shape)

    def posterior_mean(self, y):
        return np.asarray(y, dtype=np.float64) @ self._gain.T

    def posterior_sampler(self, y, n, rng):
        mean = self.posterior_mean(np.ravel(y))
        return mean + rng.standard_normal((n, self.size)) @ self._post_chol.T


_MODELS = {
    "conjugate_gaussian": ConjugateGaussian,
    "two_moons": TwoMoons,
    "slcp": SLCP,
    "grid_toy": GridToy,
}


def get_model(name: str, **kwargs) -> SimulatorModel:
    try:
        return _MODELS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_MODELS)}") from None


@dataclass
class Dataset:
    theta: np.ndarray
    y: np.ndarray
    seed: int | None = None
    model_name: str = ""

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if len(self.theta) != len(self.y):
            raise ValueError("theta and y must have the same number of rows")

    def __len__(self):
        return len(self.theta)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.theta[idx], self.y[idx], self.seed, self.model_name)


def prior_sample(model: SimulatorModel, k: int, seed) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    return model.prior_sample(k, _rng(seed))


def simulate(model: SimulatorModel, theta, seed) -> np.ndarray:
    return model.simulate(theta, _rng(seed))


def generate_dataset(model: SimulatorModel, n: int, seed: int) -> Dataset:
    """``n`` i.i.d. pairs ``theta ~ prior``, ``y ~ simulator(theta)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    theta_rng, sim_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    theta = model.prior_sample(n, theta_rng)
    y = model.simulate(theta, sim_rng)
    return Dataset(theta, y, seed, model.name)
