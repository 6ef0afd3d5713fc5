from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

from navfuse.errors import InvalidConfig
from navfuse.prediction import NUM_MODES
from navfuse.scene import FUTURE_STEPS


class Variant(str, enum.Enum):
    BASELINE = "Baseline"
    A1 = "A1_EarlyFusion"
    A2 = "A2_EarlyFusionNavLoss"
    A3 = "A3_LateFusionNavLoss"

    @property
    def early_fusion(self) -> bool:
        return self in (Variant.A1, Variant.A2)

    @property
    def late_fusion(self) -> bool:
        return self is Variant.A3

    @property
    def nav_loss(self) -> bool:
        return self in (Variant.A2, Variant.A3)

    @classmethod
    def parse(cls, name: str) -> "Variant":
        for v in cls:
            if name in (v.value, v.name, v.value.split("_")[0]):
                return v
        raise InvalidConfig(f"unknown variant {name!r}; expected one of {[v.value for v in cls]}")


def _from_dict(cls, d: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise InvalidConfig(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    modes: int = NUM_MODES
    max_focal: int = 8
    reduction_queries: int = 16
    waypoints: int = FUTURE_STEPS
    ff_mult: int = 2
    # token budget per agent-centric view
    max_map_tokens: int = 48
    max_agent_tokens: int = 12
    max_route_tokens: int = 64
    map_radius: float = 70.0
    agent_radius: float = 60.0
    pos_scale: float = 20.0

    def __post_init__(self):
        if self.modes != NUM_MODES:
            raise InvalidConfig(f"modes must be {NUM_MODES}")
        if self.hidden_dim % self.heads:
            raise InvalidConfig("hidden_dim must be divisible by heads")
        if not 1 <= self.max_focal <= 8:
            raise InvalidConfig("max_focal must be in [1, 8]")
        if self.reduction_queries < 1:
            raise InvalidConfig("reduction_queries must be >= 1")
        if not 1 <= self.waypoints <= FUTURE_STEPS:
            raise InvalidConfig(f"waypoints must be in [1, {FUTURE_STEPS}]")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise InvalidConfig("need at least one encoder and one decoder layer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _from_dict(cls, d)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 0.01
    lr_step_epochs: int = 20
    lr_gamma: float = 0.5
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    nav_weight: float = 1.0
    nav_alpha: float = -5.0
    nav_c: float = 3.0
    dtype: str = "float32"
    grad_clip: float = 5.0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfig("learning rate must be > 0")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.nav_weight < 0:
            raise InvalidConfig("nav_weight must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfig("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d)

    def lr_at(self, epoch: int) -> float:
        """Step schedule; ``epoch`` is 1-based."""
        return self.lr * self.lr_gamma ** ((epoch - 1) // self.lr_step_epochs)
