"""Proper scoring rules and their unbiased sample-based estimators.

Estimators take generator draws ``samples`` of shape ``(..., m, p)`` and an
observation ``obs`` of shape ``(..., p)`` and return one score per leading
index, as a differentiable :class:`~srlfi.autodiff.Tensor`. Lower is better.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "EnergyScoreParams",
    "KernelScoreParams",
    "LayoutError",
    "PatchLayout",
    "ScoringRule",
    "energy_score_estimate",
    "exact_energy_score_discrete",
    "exact_kernel_score_discrete",
    "gaussian_kernel_eval",
    "kernel_score_estimate",
    "median_bandwidth",
    "patch_layout_indices",
    "patched_score_estimate",
]

# keeps gradients finite when two draws coincide; values are unaffected
DISTANCE_GRAD_EPS = 1e-12


class LayoutError(ValueError):
    """Patch layout is inconsistent with its grid or with the data."""


@dataclass(frozen=True)
class EnergyScoreParams:
    beta: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta < 2:
            raise ValueError(f"energy score needs 0 < beta < 2, got {self.beta}")


@dataclass(frozen=True)
class KernelScoreParams:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"kernel bandwidth must be positive, got {self.gamma}")


@dataclass(frozen=True)
class PatchLayout:
    """Sliding square windows over a 1D or 2D grid, flattened row-major."""

    grid: tuple[int, ...]
    patch_size: int
    patch_step: int
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        grid = (self.grid,) if isinstance(self.grid, int) else tuple(self.grid)
        object.__setattr__(self, "grid", grid)
        if len(grid) not in (1, 2):
            raise LayoutError(f"grid must be 1D or 2D, got {grid}")
        if self.patch_size < 1 or self.patch_step < 1:
            raise LayoutError("patch_size and patch_step must be positive")
        for extent in grid:
            if self.patch_size > extent:
                raise LayoutError(f"patch_size {self.patch_size} exceeds grid extent {extent}")
            if (extent - self.patch_size) % self.patch_step:
                raise LayoutError(
                    f"(extent - patch_size) = {extent - self.patch_size} is not divisible "
                    f"by patch_step {self.patch_step}")
        if self.w1 < 0 or self.w2 < 0:
            raise LayoutError("patch weights must be non-negative")

    @property
    def size(self) -> int:
        return int(np.prod(self.grid))

    @property
    def n_patches(self) -> int:
        per_axis = [(e - self.patch_size) // self.patch_step + 1 for e in self.grid]
        return int(np.prod(per_axis))


@dataclass(frozen=True)
class ScoringRule:
    """Tagged scoring-rule configuration.

    Use the :meth:`energy`, :meth:`kernel` and :meth:`patched` constructors.
    A kernel rule with ``gamma=None`` is resolved by the trainers with the
    median heuristic.
    """

    variant: str
    beta: float = 1.0
    gamma: float | None = None
    layout: PatchLayout | None = None
    base: "ScoringRule | None" = None

    def __post_init__(self):
        if self.variant == "energy":
            EnergyScoreParams(self.beta)
        elif self.variant == "kernel":
            if self.gamma is not None:
                KernelScoreParams(self.gamma)
        elif self.variant == "patched":
            if self.layout is None or self.base is None:
                raise ValueError("patched rule needs a layout and a base rule")
            if self.base.variant not in ("energy", "kernel"):
                raise ValueError("patched base must be energy or kernel")
        else:
            raise ValueError(f"unknown scoring rule variant {self.variant!r}")

    @classmethod
    def energy(cls, beta: float = 1.0) -> "ScoringRule":
        return cls("energy", beta=beta)

    @classmethod
    def kernel(cls, gamma: float | None = None) -> "ScoringRule":
        return cls("kernel", gamma=gamma)

    @classmethod
    def patched(cls, base: "ScoringRule", layout: PatchLayout) -> "ScoringRule":
        return cls("patched", layout=layout, base=base)

    @property
    def name(self) -> str:
        if self.variant == "patched":
            return f"patched-{self.base.variant}"
        return self.variant

    @property
    def needs_bandwidth(self) -> bool:
        rule = self.base if self.variant == "patched" else self
        return rule.variant == "kernel" and rule.gamma is None

    def with_gamma(self, gamma: float) -> "ScoringRule":
        if self.variant == "patched":
            return ScoringRule.patched(self.base.with_gamma(gamma), self.layout)
        if self.variant == "kernel":
            return ScoringRule.kernel(gamma)
        return self

    def estimate(self, samples, obs) -> Tensor:
        """Unbiased score estimate per leading index of ``samples``."""
        if self.variant == "energy":
            return energy_score_estimate(samples, obs, self.beta)
        if self.variant == "kernel":
            if self.gamma is None:
                raise ValueError("kernel rule has no bandwidth; call with_gamma first")
            return kernel_score_estimate(samples, obs, KernelScoreParams(self.gamma))
        return patched_score_estimate(samples, obs, self.layout, self.base)


def _prepare(samples, obs):
    samples = ad._as_tensor(samples)
    obs = ad._as_tensor(obs)
    if samples.ndim < 2:
        raise ValueError(f"samples must be (..., m, p), got shape {samples.shape}")
    m = samples.shape[-2]
    if m < 2:
        raise ValueError(f"unbiased estimators need m >= 2 draws, got m={m}")
    if obs.shape != samples.shape[:-2] + samples.shape[-1:]:
        raise ValueError(f"obs shape {obs.shape} does not match samples shape {samples.shape}")
    return samples, obs, m


def _offdiag(m: int) -> np.ndarray:
    return 1.0 - np.eye(m)


def _obs_rows(obs: Tensor) -> Tensor:
    # (..., p) -> (..., 1, p)
    return ad.reshape(obs, obs.shape[:-1] + (1,) + obs.shape[-1:])


def energy_score_estimate(samples, obs, beta: float = 1.0) -> Tensor:
    """Unbiased energy score estimate from ``m >= 2`` draws.

    ``2/m sum_j |x_j - y|^beta - 1/(m(m-1)) sum_{j != k} |x_j - x_k|^beta``.
    """
    EnergyScoreParams(beta)
    samples, obs, m = _prepare(samples, obs)
    half = beta / 2.0
    to_obs = ad.pairwise_sqdist(samples, _obs_rows(obs))
    term_obs = ad.sum(ad.power(to_obs, half, grad_eps=DISTANCE_GRAD_EPS), axis=(-2, -1))
    within = ad.pairwise_sqdist(samples, samples)
    within = ad.power(within, half, grad_eps=DISTANCE_GRAD_EPS) * _offdiag(m)
    term_within = ad.sum(within, axis=(-2, -1))
    return term_obs * (2.0 / m) - term_within * (1.0 / (m * (m - 1)))


def gaussian_kernel_eval(a, b, gamma: float) -> float:
    """``exp(-|a - b|^2 / (2 gamma^2))``."""
    KernelScoreParams(gamma)
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.exp(-np.dot(d.ravel(), d.ravel()) / (2.0 * gamma**2)))


def kernel_score_estimate(samples, obs, params: KernelScoreParams | float) -> Tensor:
    """Unbiased Gaussian-kernel score estimate from ``m >= 2`` draws."""
    if not isinstance(params, KernelScoreParams):
        params = KernelScoreParams(float(params))
    samples, obs, m = _prepare(samples, obs)
    scale = -1.0 / (2.0 * params.gamma**2)
    to_obs = ad.pairwise_sqdist(samples, _obs_rows(obs))
    term_obs = ad.sum(ad.exp(to_obs * scale), axis=(-2, -1))
    within = ad.exp(ad.pairwise_sqdist(samples, samples) * scale) * _offdiag(m)
    term_within = ad.sum(within, axis=(-2, -1))
    return term_within * (1.0 / (m * (m - 1))) - term_obs * (2.0 / m)


def patch_layout_indices(layout: PatchLayout) -> list[np.ndarray]:
    """Flat (row-major) index sets of every patch, in scan order."""
    starts = [range(0, e - layout.patch_size + 1, layout.patch_step) for e in layout.grid]
    offsets = np.arange(layout.patch_size)
    patches = []
    if len(layout.grid) == 1:
        for s in starts[0]:
            patches.append(s + offsets)
    else:
        width = layout.grid[1]
        for r, c in itertools.product(*starts):
            rows = (r + offsets)[:, None]
            cols = (c + offsets)[None, :]
            patches.append((rows * width + cols).ravel())
    return patches


def patched_score_estimate(samples, obs, layout: PatchLayout, base: ScoringRule) -> Tensor:
    """``w1 * S(full) + w2 * sum over patches of S(restricted to patch)``."""
    if base.variant not in ("energy", "kernel"):
        raise ValueError("patched base must be energy or kernel")
    samples, obs, _ = _prepare(samples, obs)
    if samples.shape[-1] != layout.size:
        raise LayoutError(f"data dimension {samples.shape[-1]} does not match grid {layout.grid}")
    total = base.estimate(samples, obs) * layout.w1
    if layout.w2 == 0:
        return total
    for idx in patch_layout_indices(layout):
        part = base.estimate(ad.take(samples, idx, axis=-1), ad.take(obs, idx, axis=-1))
        total = total + part * layout.w2
    return total


def median_bandwidth(data, max_rows: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over at most ``max_rows`` rows."""
    x = np.asarray(data.data if isinstance(data, Tensor) else data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise ValueError("median bandwidth needs at least two rows")
    if len(x) > max_rows:
        x = x[np.random.default_rng(seed).choice(len(x), max_rows, replace=False)]
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))[np.triu_indices(len(x), k=1)]
    med = float(np.median(dist))
    if not med > 0:
        raise ValueError("degenerate data: median pairwise distance is zero")
    return med


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
        raise ValueError("probabilities must be non-negative and sum to 1")
    return p


def exact_energy_score_discrete(support, probs, obs, beta: float = 1.0) -> float:
    """Energy score of a finite discrete distribution, by exhaustive summation."""
    p = _check_probs(probs)
    s = np.atleast_2d(np.asarray(support, dtype=np.float64))
    if s.shape[0] != p.size and s.shape[1] == p.size and s.shape[0] == 1:
        s = s.T
    x = np.asarray(obs, dtype=np.float64).reshape(-1)
    to_obs = np.linalg.norm(s - x, axis=1) ** beta
    within = np.linalg.norm(s[:, None, :] - s[None, :, :], axis=2) ** beta
    return float(2.0 * p @ to_obs - p @ within @ p)


def exact_kernel_score_discrete(support, probs, obs, gamma: float) -> float:
    """Gaussian-kernel score of a finite discrete distribution, by exhaustive summation."""
    p = _check_probs(probs)
    s = np.atleast_2d(np.asarray(support, dtype=np.float64))
    if s.shape[0] != p.size and s.shape[1] == p.size and s.shape[0] == 1:
        s = s.T
    x = np.asarray(obs, dtype=np.float64).reshape(-1)
    k_obs = np.array([gaussian_kernel_eval(si, x, gamma) for si in s])
    k_within = np.array([[gaussian_kernel_eval(si, sj, gamma) for sj in s] for si in s])
    return float(p @ k_within @ p - 2.0 * p @ k_obs)
