"""Run configuration: one flat record covering data, model and schedule."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError
from .model import ModelConfig
from .sampler import SamplerKind
from .synthetic import coerce_fields, parse_kv
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # data: either JSONL paths or a synthetic-generator config file
    train_path: str = ""
    test_path: str = ""
    synthetic: str = ""
    n_categories: int = 1000  # cid3 range when reading JSONL
    # model
    d: int = 90
    h: int = 90
    v: int = 64
    L: int = 10
    use_time: bool = True
    # schedule and sampler
    sampler: str = "rgan"
    epochs: int = 50
    steps_per_epoch: int = 30
    lr_d: float = 0.02
    lr_g: float = 0.01
    lr_decay_every: int = 10
    lr_decay: float = 0.5
    gamma: float = 1.0
    lambda_i: float = 3.0
    lambda_h: float = 5.0
    C: int = 20
    T0: float = 20.0
    T_decay: float = 0.98
    K: int = 1
    pretrain_epochs: int = 2
    under_ratio: int = 5
    tau_diagnostic: bool = True
    eval_every: int = 1
    seed: int = 0

    def validate(self) -> "RunConfig":
        if bool(self.synthetic) == bool(self.train_path):
            raise ConfigurationError("give exactly one of train_path or synthetic")
        for name in ("d", "h", "v", "L", "n_categories"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        try:
            kind = SamplerKind(self.sampler)
        except ValueError:
            raise ConfigurationError(
                f"unknown sampler {self.sampler!r}; choose from "
                f"{', '.join(k.value for k in SamplerKind)}") from None
        if kind.adversarial and self.T0 <= 0:
            raise ConfigurationError("T0 must be positive")
        self.train_config().validate()
        return self

    def train_config(self) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def model_config(self, n_categories: int, aux_dim: int) -> ModelConfig:
        return ModelConfig(n_categories=n_categories, aux_dim=aux_dim, L=self.L,
                           d=self.d, h=self.h, v=self.v, use_time=self.use_time)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        return cls(**coerce_fields(cls, values))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_mapping(parse_kv(Path(path).read_text()))


def model_config_hash(cfg: ModelConfig) -> str:
    """Stable digest of the model architecture; equal across samplers."""
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
