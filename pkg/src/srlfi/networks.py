"""Conditional generator and critic networks built on :mod:`srlfi.autodiff`.

The generator maps a latent draw ``z`` and an observation ``y`` to a
parameter value; pushing the latent distribution through it gives the
approximate posterior. The critic scores ``(theta, y)`` pairs in ``(0, 1)``
for adversarial training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ACTIVATIONS",
    "CriticNet",
    "GeneratorNet",
    "LatentSpec",
    "MLPArchitecture",
    "critic_score",
    "init_network",
    "make_critic",
    "make_generator",
    "sample_posterior",
]

ACTIVATIONS = {
    "leaky_relu": ad.leaky_relu,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}

OUTPUT_TRANSFORMS = ("identity", "sigmoid_box", "affine")


@dataclass(frozen=True)
class LatentSpec:
    dim: int
    family: str = "normal"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("latent dim must be >= 1")
        if self.family not in ("normal", "uniform"):
            raise ValueError(f"latent family must be 'normal' or 'uniform', got {self.family!r}")

    def draw(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        size = tuple(shape) + (self.dim,)
        if self.family == "normal":
            return rng.standard_normal(size)
        return rng.uniform(-1.0, 1.0, size)


@dataclass(frozen=True)
class MLPArchitecture:
    """Fully connected network description.

    ``low``/``high`` bound the output for ``sigmoid_box``; for ``affine`` they
    act as shift and scale.
    """

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activations: tuple[str, ...] | None = None
    output_transform: str = "identity"
    low: tuple[float, ...] | None = None
    high: tuple[float, ...] | None = None

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        acts = self.activations
        if acts is None:
            acts = ("leaky_relu",) * len(hidden)
        elif isinstance(acts, str):
            acts = (acts,) * len(hidden)
        object.__setattr__(self, "activations", tuple(acts))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in hidden):
            raise ValueError("all layer sizes must be >= 1")
        if len(self.activations) != len(hidden):
            raise ValueError("need one activation per hidden layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ValueError(f"unknown output transform {self.output_transform!r}")
        if self.output_transform != "identity":
            if self.low is None or self.high is None:
                raise ValueError(f"{self.output_transform} needs low and high")
            low = tuple(float(v) for v in np.broadcast_to(self.low, (self.output_dim,)))
            high = tuple(float(v) for v in np.broadcast_to(self.high, (self.output_dim,)))
            if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
                raise ValueError("output bounds must be finite")
            if self.output_transform == "sigmoid_box" and not np.all(np.array(high) > np.array(low)):
                raise ValueError("box needs high > low")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activations": list(self.activations),
            "output_transform": self.output_transform,
            "low": None if self.low is None else list(self.low),
            "high": None if self.high is None else list(self.high),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPArchitecture":
        return cls(
            input_dim=d["input_dim"],
            hidden=tuple(d["hidden"]),
            output_dim=d["output_dim"],
            activations=tuple(d["activations"]),
            output_transform=d["output_transform"],
            low=None if d.get("low") is None else tuple(d["low"]),
            high=None if d.get("high") is None else tuple(d["high"]),
        )


def init_network(arch: MLPArchitecture, seed: int) -> list[Tensor]:
    """Glorot-uniform weights and zero biases, as ``[W1, b1, W2, b2, ...]``."""
    rng = np.random.default_rng(seed)
    weights = []
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), requires_grad=True))
        weights.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return weights


def _mlp_forward(arch: MLPArchitecture, weights: list[Tensor], x) -> Tensor:
    h = x
    n_layers = len(weights) // 2
    for i in range(n_layers):
        h = ad.matmul(h, weights[2 * i]) + weights[2 * i + 1]
        if i < n_layers - 1:
            h = ACTIVATIONS[arch.activations[i]](h)
    if arch.output_transform == "sigmoid_box":
        low = np.asarray(arch.low)
        h = ad.sigmoid(h) * (np.asarray(arch.high) - low) + low
    elif arch.output_transform == "affine":
        h = h * np.asarray(arch.high) + np.asarray(arch.low)
    return h


def _check_weights(arch: MLPArchitecture, weights: list[Tensor]):
    sizes = arch.layer_sizes
    if len(weights) != 2 * (len(sizes) - 1):
        raise ValueError("weight list does not match architecture depth")
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if weights[2 * i].shape != (a, b) or weights[2 * i + 1].shape != (b,):
            raise ValueError(f"layer {i} weights do not match architecture sizes {a}->{b}")


@dataclass
class GeneratorNet:
    """Conditional generator ``g(z, y)`` over the concatenation ``[z, y]``."""

    arch: MLPArchitecture
    latent: LatentSpec
    weights: list[Tensor] = field(repr=False)

    def __post_init__(self):
        if self.arch.input_dim <= self.latent.dim:
            raise ValueError("generator input must cover latent dim plus data dim")
        _check_weights(self.arch, self.weights)

    @property
    def data_dim(self) -> int:
        return self.arch.input_dim - self.latent.dim

    @property
    def parameter_dim(self) -> int:
        return self.arch.output_dim

    def forward(self, z, y) -> Tensor:
        """Map latents ``(..., m, dz)`` and observations ``(..., dy)`` to ``(..., m, p)``."""
        z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
        y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
        if z.shape[-1] != self.latent.dim or y.shape[-1] != self.data_dim:
            raise ValueError(
                f"generator expects latent dim {self.latent.dim} and data dim {self.data_dim}, "
                f"got {z.shape[-1]} and {y.shape[-1]}")
        y_rows = np.broadcast_to(y[..., None, :], z.shape[:-1] + (y.shape[-1],))
        x = np.concatenate([z, y_rows], axis=-1)
        return _mlp_forward(self.arch, self.weights, Tensor(x))

    def sample(self, y, m: int, rng: np.random.Generator) -> Tensor:
        """``m`` pushforward draws for each row of ``y`` (shape ``(..., m, p)``)."""
        y = np.asarray(y, dtype=np.float64)
        z = self.latent.draw(rng, y.shape[:-1] + (m,))
        return self.forward(z, y)

    def copy_weights(self) -> list[np.ndarray]:
        return [w.data.copy() for w in self.weights]

    def set_weights(self, arrays: list[np.ndarray]):
        for w, a in zip(self.weights, arrays):
            w.data[...] = a


@dataclass
class CriticNet:
    """Critic over ``[theta, y]``; its output is squashed into ``(0, 1)``."""

    arch: MLPArchitecture
    weights: list[Tensor] = field(repr=False)
    parameter_dim: int = 1

    def __post_init__(self):
        if self.arch.output_dim != 1 or self.arch.output_transform != "identity":
            raise ValueError("critic needs a scalar identity-output architecture")
        _check_weights(self.arch, self.weights)

    @property
    def data_dim(self) -> int:
        return self.arch.input_dim - self.parameter_dim

    def logits(self, theta, y) -> Tensor:
        theta = theta if isinstance(theta, Tensor) else Tensor(theta)
        y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
        if theta.shape[-1] != self.parameter_dim or y.shape[-1] != self.data_dim:
            raise ValueError(
                f"critic expects parameter dim {self.parameter_dim} and data dim {self.data_dim}, "
                f"got {theta.shape[-1]} and {y.shape[-1]}")
        y = np.broadcast_to(y, theta.shape[:-1] + (y.shape[-1],))
        x = ad.concat([theta, Tensor(y)], axis=-1)
        return _mlp_forward(self.arch, self.weights, x)

    def __call__(self, theta, y) -> Tensor:
        return ad.sigmoid(self.logits(theta, y))


def make_generator(parameter_dim: int, data_dim: int, hidden=(128, 128, 128),
                   latent_dim: int | None = None, latent_family: str = "normal",
                   activation: str = "leaky_relu", bounds=None, seed: int = 0) -> GeneratorNet:
    """Generator with the default layout; ``bounds=(low, high)`` selects a sigmoid box output."""
    latent = LatentSpec(latent_dim or parameter_dim, latent_family)
    kwargs = {}
    if bounds is not None:
        kwargs = {"output_transform": "sigmoid_box", "low": tuple(np.broadcast_to(bounds[0], (parameter_dim,))),
                  "high": tuple(np.broadcast_to(bounds[1], (parameter_dim,)))}
    arch = MLPArchitecture(latent.dim + data_dim, tuple(hidden), parameter_dim,
                           activations=activation, **kwargs)
    return GeneratorNet(arch, latent, init_network(arch, seed))


def make_critic(parameter_dim: int, data_dim: int, hidden=(128, 128, 128),
                activation: str = "leaky_relu", seed: int = 0) -> CriticNet:
    arch = MLPArchitecture(parameter_dim + data_dim, tuple(hidden), 1, activations=activation)
    return CriticNet(arch, init_network(arch, seed), parameter_dim=parameter_dim)


def sample_posterior(g: GeneratorNet, y, m: int, seed) -> Tensor:
    """Draw ``m`` samples from the generator's posterior at one observation ``y``.

    Returns an ``m x parameter_dim`` tensor. Under an active tape the draws
    stay differentiable with respect to the generator weights.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64).reshape(-1)
    if y.size != g.data_dim:
        raise ValueError(f"y has dimension {y.size}, generator expects {g.data_dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return g.forward(g.latent.draw(rng, (m,)), y)


def critic_score(c: CriticNet, theta, y) -> Tensor:
    """Critic probability that ``(theta, y)`` is a real pair."""
    return c(theta, y)
