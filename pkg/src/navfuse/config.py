"""Run configuration: one YAML file with a block per command.

Every block has explicit defaults; unknown keys anywhere are rejected and the
top-level ``seed`` is mandatory.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from navfuse.errors import InvalidConfig
from navfuse.predictor.config import ModelConfig, TrainConfig, Variant
from navfuse.synth import GenParams


def _reject_unknown(cls, d: dict, where: str) -> None:
    if not isinstance(d, dict):
        raise InvalidConfig(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {sorted(unknown)}")


@dataclass
class GenBlock:
    n: int = 1000
    output: str = "dataset.jsonl"
    split: list[float] | None = None
    params: GenParams = field(default_factory=GenParams)


@dataclass
class TrainBlock:
    variant: str = "Baseline"
    dataset: str = "dataset.jsonl"
    val_dataset: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class EvalBlock:
    # "oracle" selects the debug predictor that emits ground truth as mode 0
    checkpoint: str | None = None
    checkpoints: list[str] = field(default_factory=list)
    dataset: str = "dataset.jsonl"
    limit: int | None = None


@dataclass
class GradcheckBlock:
    variants: list[str] = field(default_factory=lambda: [v.value for v in Variant])
    scenes: int = 1


@dataclass
class RunConfig:
    seed: int
    threads: int = 1
    out: str | None = None
    gen: GenBlock = field(default_factory=GenBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    gradcheck: GradcheckBlock = field(default_factory=GradcheckBlock)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "out": self.out,
            "gen": {"n": self.gen.n, "output": self.gen.output, "split": self.gen.split,
                    "params": self.gen.params.to_dict()},
            "train": {"variant": self.train.variant, "dataset": self.train.dataset,
                      "val_dataset": self.train.val_dataset, "model": self.train.model.to_dict(),
                      "train": self.train.train.to_dict()},
            "eval": dataclasses.asdict(self.eval),
            "gradcheck": dataclasses.asdict(self.gradcheck),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _build(factory, d: dict, where: str):
    try:
        return factory(d)
    except InvalidConfig:
        raise
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"{where}: {e}") from None


def from_dict(d: dict) -> RunConfig:
    _reject_unknown(RunConfig, d, "config")
    if "seed" not in d or not isinstance(d["seed"], int):
        raise InvalidConfig("config: 'seed' is mandatory and must be an integer")
    gen = dict(d.get("gen") or {})
    _reject_unknown(GenBlock, gen, "gen")
    if "params" in gen:
        gen["params"] = _build(GenParams.from_dict, gen["params"] or {}, "gen.params")
    train = dict(d.get("train") or {})
    _reject_unknown(TrainBlock, train, "train")
    if "model" in train:
        train["model"] = _build(ModelConfig.from_dict, train["model"] or {}, "train.model")
    if "train" in train:
        train["train"] = _build(TrainConfig.from_dict, train["train"] or {}, "train.train")
    ev = dict(d.get("eval") or {})
    _reject_unknown(EvalBlock, ev, "eval")
    gc = dict(d.get("gradcheck") or {})
    _reject_unknown(GradcheckBlock, gc, "gradcheck")
    top = {k: v for k, v in d.items() if k in ("seed", "threads", "out")}
    cfg = RunConfig(**top, gen=_build(lambda x: GenBlock(**x), gen, "gen"),
                    train=_build(lambda x: TrainBlock(**x), train, "train"),
                    eval=_build(lambda x: EvalBlock(**x), ev, "eval"),
                    gradcheck=_build(lambda x: GradcheckBlock(**x), gc, "gradcheck"))
    Variant.parse(cfg.train.variant)
    for v in cfg.gradcheck.variants:
        Variant.parse(v)
    if cfg.threads < 1:
        raise InvalidConfig("threads must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InvalidConfig(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise InvalidConfig(f"{path}: not valid YAML ({e})") from None
    if data is None:
        data = {}
    return from_dict(data)
