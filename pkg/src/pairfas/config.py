"""Run configuration: one JSON document grouping every hyperparameter."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping

from .augment import AugmentConfig
from .datamodel import SynthConfig
from .errors import ConfigError
from .losses import LossConfig


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    features: int = 64
    proj_hidden: int = 64
    proj_dim: int = 128

    def __post_init__(self):
        if min(self.hidden, self.features, self.proj_hidden, self.proj_dim) < 1:
            raise ConfigError("model widths must be positive")


@dataclass(frozen=True)
class OptimConfig:
    peak_lr: float = 1.82e-4
    floor_lr: float = 6.8e-7
    warmup_fraction: float = 0.05
    weight_decay: float = 1.1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 20
    batch_size: int = 32

    def __post_init__(self):
        if not 0 < self.floor_lr < self.peak_lr:
            raise ConfigError("need 0 < floor_lr < peak_lr")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must be in (0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must be in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size % 2 or self.batch_size < 4:
            raise ConfigError("batch_size must be even and >= 4")


# What each default stands for; shown in --help.
CITATIONS: Dict[str, str] = {
    "tau_sim": "cosine-similarity threshold for pair mining (0.9)",
    "optim.peak_lr": "warm-up cosine schedule start rate (1.82e-4)",
    "optim.floor_lr": "cosine schedule end rate (6.8e-7)",
    "optim.warmup_fraction": "5% warm-up",
    "optim.weight_decay": "AdamW weight decay (1.1e-5)",
    "optim.epochs": "20 nominal epochs",
    "optim.batch_size": "mini-batches of 32 images",
    "loss.focal_alpha": "focal class-balancing factor (0.5)",
    "loss.focal_gamma": "focal focusing parameter (0.7)",
    "loss.supcon_temperature": "contrastive temperature (0.14)",
    "loss.supcon_weight": "contrastive loss weight lambda (0.3)",
    "augment.cutmix_prob": "CutMix probability (0.3)",
    "augment.cutmix_alpha": "CutMix Beta alpha (0.6)",
    "augment.brightness_limit": "brightness +-10%",
    "augment.contrast_limit": "contrast +-10%",
    "augment.hue_shift_limit": "hue +-10",
    "augment.sat_shift_limit": "saturation +-10",
    "augment.gamma_range": "gamma 80-120",
    "augment.jpeg_quality_range": "JPEG quality 40-60",
    "model.proj_dim": "128-d projection head",
}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tau_sim: float = 0.9
    n_val_identities: int = 20
    seed: int = 0

    def __post_init__(self):
        if not -1.0 <= self.tau_sim <= 1.0:
            raise ConfigError("tau_sim must be in [-1, 1]")
        if self.n_val_identities < 1:
            raise ConfigError("n_val_identities must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "synth": self.synth.to_dict(),
            "augment": self.augment.to_dict(),
            "loss": self.loss.to_dict(),
            "optim": asdict(self.optim),
            "model": asdict(self.model),
            "tau_sim": self.tau_sim,
            "n_val_identities": self.n_val_identities,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw: Dict[str, Any] = {}
        try:
            if "synth" in d:
                kw["synth"] = SynthConfig.from_dict(d["synth"])
            if "augment" in d:
                kw["augment"] = AugmentConfig.from_dict(d["augment"])
            if "loss" in d:
                kw["loss"] = LossConfig.from_dict(d["loss"])
            if "optim" in d:
                kw["optim"] = _build(OptimConfig, d["optim"])
            if "model" in d:
                kw["model"] = _build(ModelConfig, d["model"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        for key in ("tau_sim", "n_val_identities", "seed"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"loss.supcon_weight": 0.0}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(d)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _build(cls, d):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def config_hash(d: Mapping[str, Any]) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> RunConfig:
    try:
        with Path(path).open("r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(data)
