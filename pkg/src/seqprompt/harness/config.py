"""Run configuration: nested dataclasses with JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..backbone import BackboneConfig
from ..errors import ConfigError
from ..spa import SpaConfig


@dataclass
class StreamConfig:
    num_sessions: int = 5
    classes_per_session: int = 4
    samples_per_class: int = 50
    input_dim: int = 16
    cluster_spread: float = 1.0
    path: Optional[str] = None  # load from disk instead of generating


@dataclass
class NkaConfig:
    mode: str = "nka"  # "nka" or "fixed"
    alpha0: float = 0.99
    gamma: float = 0.9
    lam: float = 12500.0
    theta_max: float = 0.999
    theta_min: float = 0.7
    sigmoid_center: float = 100.0
    sigmoid_scale: float = 25.0


@dataclass
class HeadConfig:
    proj_dim: int = 128
    ridge: float = 1.0


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    spa: SpaConfig = field(default_factory=SpaConfig)
    nka: NkaConfig = field(default_factory=NkaConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 0.05
    min_lr: float = 0.0
    momentum: float = 0.9
    seed: int = 0
    output_dir: Optional[str] = None

    def validate(self) -> None:
        self.backbone.validate()
        self.spa.validate()
        if self.spa.d != self.backbone.d:
            raise ConfigError("prompt encoder width must match the backbone width")
        if self.spa.depth != self.backbone.prefix_blocks:
            raise ConfigError("one prompt token stack per prefixed backbone block: depth must equal prefix_blocks")
        if self.spa.num_sessions != self.stream.num_sessions:
            raise ConfigError("pool session count must match the stream")
        if self.nka.mode not in ("nka", "fixed"):
            raise ConfigError(f"unknown alpha mode {self.nka.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")

    def seeds(self) -> dict:
        """Independent sub-seeds derived from the master seed."""
        children = np.random.SeedSequence(self.seed).generate_state(5)
        return dict(zip(("backbone", "spa", "head", "stream", "shuffle"), (int(c) for c in children)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        nested = {"backbone": BackboneConfig, "spa": SpaConfig, "nka": NkaConfig, "head": HeadConfig, "stream": StreamConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in nested and dataclasses.is_dataclass(value):
                kwargs[key] = nested[key](**asdict(value))
            elif key in nested:
                sub = nested[key]
                bad = set(value) - {f.name for f in dataclasses.fields(sub)}
                if bad:
                    raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "RunConfig":
        """Deep-ish copy with top-level fields replaced."""
        return RunConfig.from_dict({**self.to_dict(), **changes})


def full_preset() -> RunConfig:
    """Large prompt pool (M=100) on the desk stream with 10 sessions."""
    cfg = RunConfig()
    cfg.stream.num_sessions = 10
    cfg.spa.num_sessions = 10
    cfg.spa.pool_size = 100
    return cfg
