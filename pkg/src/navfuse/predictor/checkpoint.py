"""Checkpoint container.

Layout (all integers little-endian)::

    b"NAVFUSE-CKPT\\n"            magic
    uint64                         length of the JSON header in bytes
    JSON header                    {"version", "variant", "seed", "model_config",
                                    "train_config", "arrays": [{"name", "shape"}...], ...}
    float64 data                   every array, row-major, in header order
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from navfuse.errors import CheckpointError
from navfuse.fsutil import atomic_write
from navfuse.predictor.config import ModelConfig, TrainConfig, Variant
from navfuse.predictor.model import ModelParams, param_shapes

MAGIC = b"NAVFUSE-CKPT\n"
VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    model_config: ModelConfig
    train_config: TrainConfig
    variant: Variant
    seed: int
    extra: dict = field(default_factory=dict)


def save_checkpoint(ck: Checkpoint, path) -> Path:
    header = {
        "version": VERSION,
        "variant": ck.variant.value,
        "seed": ck.seed,
        "model_config": ck.model_config.to_dict(),
        "train_config": ck.train_config.to_dict(),
        "extra": ck.extra,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in ck.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(blob)), blob]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in ck.params.values()]
    return atomic_write(path, b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a navfuse checkpoint (bad magic)")
    off = len(MAGIC)
    try:
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        header = json.loads(data[off:off + n].decode("utf-8"))
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    off += n
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')} unsupported (expected {VERSION})")
    variant = Variant(header["variant"])
    mc = ModelConfig.from_dict(header["model_config"])
    tc = TrainConfig.from_dict(header["train_config"])
    expected = param_shapes(mc, variant)
    params = ModelParams()
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        if off + 8 * size > len(data):
            raise CheckpointError(f"{path}: truncated array data")
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
        params[entry["name"]] = arr
    if off != len(data):
        raise CheckpointError(f"{path}: trailing or missing data")
    if {k: tuple(v) for k, v in expected.items()} != {k: v.shape for k, v in params.items()}:
        raise CheckpointError(f"{path}: parameter shapes do not match the stored config")
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise CheckpointError(f"{path}: non-finite parameter values")
    return Checkpoint(params, mc, tc, variant, int(header["seed"]), header.get("extra", {}))
