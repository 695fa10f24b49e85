"""Experiment configuration: INI-style sections, one per concern.

Example::

    [experiment]
    model = two_moons
    method = energy, gan
    n_train = 10000
    seeds = 0, 1, 2

    [training]
    max_epochs = 100

Unknown keys and malformed values raise :class:`ConfigError` naming the
offending ``section.key``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .simulators import get_model

__all__ = ["ConfigError", "ExperimentConfig", "METHODS", "load_config"]

METHODS = ("energy", "kernel", "patched-energy", "patched-kernel", "gan")


class ConfigError(ValueError):
    """Configuration failed to parse or validate."""


@dataclass
class ExperimentConfig:
    # [experiment]
    model: str = "conjugate_gaussian"
    methods: tuple[str, ...] = ("energy",)
    n_train: int = 10000
    m: int = 10
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    # [network]
    hidden: tuple[int, ...] = (128, 128, 128)
    critic_hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "leaky_relu"
    latent_dim: int | None = None
    bounded_output: bool = True
    # [training]
    learning_rate: float = 1e-3
    critic_lr: float = 1e-3
    critic_steps: int = 1
    batch_size: int = 128
    max_epochs: int = 100
    early_stopping: bool = False
    patience: int = 10
    validation_fraction: float = 0.1
    # [scoring]
    beta: float = 1.0
    gamma: float | None = None
    patch_size: int | None = None
    patch_step: int | None = None
    w1: float = 1.0
    w2: float = 1.0
    # [evaluation]
    n_test: int = 200
    n_post: int = 1000
    sbc_priors: int = 200
    sbc_draws: int = 100
    c2st_observations: int = 0
    c2st_samples: int = 1000
    model_options: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        def fail(path, msg):
            raise ConfigError(f"{path}: {msg}")

        try:
            get_model(self.model, **self.model_options)
        except (ValueError, TypeError) as exc:
            fail("experiment.model", str(exc))
        if not self.methods:
            fail("experiment.method", "at least one method is required")
        for method in self.methods:
            if method not in METHODS:
                fail("experiment.method", f"unknown method {method!r}; choose from {METHODS}")
        uses_kernel = any(m.endswith("kernel") for m in self.methods)
        if uses_kernel and self.gamma is None and self.n_train < 2:
            fail("scoring.gamma", "missing and no training data for the median heuristic")
        if self.n_train < 2:
            fail("experiment.n_train", "must be >= 2")
        if self.m < 2:
            fail("experiment.m", "must be >= 2 (unbiased estimators need two draws)")
        if not self.seeds:
            fail("experiment.seeds", "at least one seed is required")
        for name in ("batch_size", "max_epochs", "patience", "critic_steps", "n_test", "n_post",
                     "sbc_draws"):
            if getattr(self, name) < (0 if name == "max_epochs" else 1):
                fail(f"{_SECTION_OF[name]}.{name}", "must be positive")
        if not 0 < self.beta < 2:
            fail("scoring.beta", "must lie in (0, 2)")
        if self.gamma is not None and self.gamma <= 0:
            fail("scoring.gamma", "must be positive")
        if self.early_stopping and not 0 < self.validation_fraction < 1:
            fail("training.validation_fraction", "must lie in (0, 1) with early stopping")
        if any(m.startswith("patched") for m in self.methods):
            if self.patch_size is None or self.patch_step is None:
                fail("scoring.patch_size", "patched methods need patch_size and patch_step")
            if get_model(self.model, **self.model_options).grid is None:
                fail("experiment.model", f"{self.model} has no grid structure for patched scores")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs).validate()

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_SECTIONS = {
    "experiment": {"model": "str", "method": "methods", "n_train": "int", "m": "int",
                   "seeds": "ints", "out_dir": "str"},
    "network": {"hidden": "ints", "critic_hidden": "ints", "activation": "str",
                "latent_dim": "opt_int", "bounded_output": "bool"},
    "training": {"learning_rate": "float", "critic_lr": "float", "critic_steps": "int",
                 "batch_size": "int", "max_epochs": "int", "early_stopping": "bool",
                 "patience": "int", "validation_fraction": "float"},
    "scoring": {"beta": "float", "gamma": "opt_float", "patch_size": "opt_int",
                "patch_step": "opt_int", "w1": "float", "w2": "float"},
    "evaluation": {"n_test": "int", "n_post": "int", "sbc_priors": "int", "sbc_draws": "int",
                   "c2st_observations": "int", "c2st_samples": "int"},
}
_SECTION_OF = {key: sec for sec, keys in _SECTIONS.items() for key in keys}


def _convert(kind: str, raw: str, path: str):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "methods":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if kind == "opt_int":
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if kind == "opt_float":
            return None if raw.lower() in ("", "none", "auto", "median") else float(raw)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {kind}") from None
    raise AssertionError(kind)


def load_config(path) -> ExperimentConfig:
    """Read an INI config, or the ``config`` block of a run manifest (``.json``)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return ExperimentConfig.from_dict(d.get("config", d))
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section == "model":
            values["model_options"] = {k: _model_option(v) for k, v in parser[section].items()}
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            field_name = "methods" if key == "method" else key
            values[field_name] = _convert(_SECTIONS[section][key], raw, f"{section}.{key}")
    return ExperimentConfig(**values).validate()


def _model_option(raw: str):
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw
