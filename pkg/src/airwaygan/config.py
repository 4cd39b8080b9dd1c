"""Layered run configuration: defaults <- config file <- command-line flags.

The fully resolved tree is serialized next to every artifact a command
produces, so each manifest, checkpoint and report records the exact
parameter set that made it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .depth import BackendConfig
from .errors import InputError
from .losses import LossWeights
from .metrics import FeatureEmbedder
from .networks import DiscriminatorConfig, GeneratorConfig
from .segmentation import SegParams
from .training import TrainConfig


@dataclass
class DataConfig:
    resolution: int = 256
    crop_fraction: float | None = None
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    n_scenes: int = 100

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "crop_fraction": self.crop_fraction,
                "split_fractions": list(self.split_fractions),
                "n_scenes": self.n_scenes}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)


@dataclass
class OptimConfig:
    epochs: int = 1
    batch_size: int = 4
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    dice_mode: str = "differentiable"
    checkpoint_every: int = 1
    eval_every: int = 1
    val_limit: int = 8

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr_g": self.lr_g, "lr_d": self.lr_d, "beta1": self.beta1,
                "beta2": self.beta2, "dice_mode": self.dice_mode,
                "checkpoint_every": self.checkpoint_every,
                "eval_every": self.eval_every, "val_limit": self.val_limit}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        return cls(**d)


@dataclass
class GlobalConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    seg: SegParams = field(default_factory=SegParams)
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    embedder: FeatureEmbedder = field(default_factory=FeatureEmbedder)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"backend": self.backend.to_dict(), "seg": self.seg.to_dict(),
                "weights": self.weights.to_dict(),
                "generator": self.generator.to_dict(),
                "discriminator": self.discriminator.to_dict(),
                "optim": self.optim.to_dict(), "data": self.data.to_dict(),
                "embedder": self.embedder.to_dict(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalConfig":
        base = cls()
        merged = _merge(base.to_dict(), d)
        return cls(backend=BackendConfig(**merged["backend"]),
                   seg=SegParams.from_dict(merged["seg"]),
                   weights=LossWeights.from_dict(merged["weights"]),
                   generator=GeneratorConfig.from_dict(merged["generator"]),
                   discriminator=DiscriminatorConfig.from_dict(merged["discriminator"]),
                   optim=OptimConfig.from_dict(merged["optim"]),
                   data=DataConfig.from_dict(merged["data"]),
                   embedder=FeatureEmbedder(**merged["embedder"]),
                   seed=merged["seed"])

    def train_config(self) -> TrainConfig:
        o = self.optim
        return TrainConfig(epochs=o.epochs, batch_size=o.batch_size,
                           lr_g=o.lr_g, lr_d=o.lr_d, beta1=o.beta1, beta2=o.beta2,
                           weights=self.weights, seg=self.seg,
                           generator=self.generator,
                           discriminator=self.discriminator,
                           dice_mode=o.dice_mode, seed=self.seed,
                           checkpoint_every=o.checkpoint_every,
                           eval_every=o.eval_every, val_limit=o.val_limit)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in out:
            raise InputError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> GlobalConfig:
    """Resolve defaults <- file <- overrides into one config tree."""
    tree = GlobalConfig().to_dict()
    if path is not None:
        if not os.path.exists(path):
            raise InputError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                file_tree = json.load(fh)
        except json.JSONDecodeError as e:
            raise InputError(f"config file {path} is not valid JSON: {e}") from e
        tree = _merge(tree, file_tree)
    if overrides:
        tree = _merge(tree, overrides)
    return GlobalConfig.from_dict(tree)


def write_resolved(config: GlobalConfig, out_dir: str,
                   name: str = "config.resolved.json") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
