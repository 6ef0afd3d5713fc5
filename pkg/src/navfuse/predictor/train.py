from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from navfuse.errors import DivergedTraining
from navfuse.focal import select_focal_agents
from navfuse.prediction import PredictionOutput
from navfuse.predictor.config import ModelConfig, TrainConfig, Variant
from navfuse.predictor.features import SceneFeatures, collate, encode_scene
from navfuse.predictor.losses import total_loss
from navfuse.predictor.model import ModelParams, forward, init_params, to_predictions
from navfuse.robust import NavLossConfig, RobustParams

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def prepare(scenes, variant: Variant, cfg: ModelConfig) -> list[SceneFeatures]:
    return [encode_scene(s, select_focal_agents(s, cfg.max_focal), variant, cfg) for s in scenes]


def nav_config(tc: TrainConfig) -> NavLossConfig:
    return NavLossConfig(RobustParams(tc.nav_alpha, tc.nav_c), tc.nav_weight)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)


def _batches(n: int, size: int, order: np.ndarray):
    for i in range(0, n, size):
        yield order[i:i + size]


def evaluate_loss(params, feats, mc: ModelConfig, tc: TrainConfig, variant: Variant, dtype=torch.float32,
                  batch_size: int = 32) -> float:
    nav = nav_config(tc)
    total, n = 0.0, 0
    with torch.no_grad():
        for idx in _batches(len(feats), batch_size, np.arange(len(feats))):
            chunk = [feats[i] for i in idx]
            b = collate(chunk)
            out = forward(params, b, mc, variant, dtype)
            terms = total_loss(out, b.gt, [f.ego_route for f in chunk], variant, nav)
            total += float(terms.total) * len(chunk)
            n += len(chunk)
    return total / max(n, 1)


def train(train_feats: list[SceneFeatures], mc: ModelConfig, tc: TrainConfig, variant: Variant,
          val_feats: list[SceneFeatures] | None = None, threads: int = 1, max_steps: int | None = None,
          on_epoch=None) -> TrainResult:
    """AdamW with a step learning-rate schedule; deterministic for fixed seed and one thread."""
    if not train_feats:
        raise ValueError("training set is empty")
    variant = Variant(variant)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)
    dtype = _DTYPES[tc.dtype]
    params = init_params(mc, variant, tc.seed).to_torch(dtype, requires_grad=True)
    opt = torch.optim.AdamW(list(params.values()), lr=tc.lr, weight_decay=tc.weight_decay)
    rng = np.random.default_rng(tc.seed)
    nav = nav_config(tc)
    history = []
    step = 0
    for epoch in range(1, tc.epochs + 1):
        lr = tc.lr_at(epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        order = rng.permutation(len(train_feats))
        sums = np.zeros(3)
        seen = 0
        for idx in _batches(len(train_feats), tc.batch_size, order):
            chunk = [train_feats[i] for i in idx]
            b = collate(chunk)
            out = forward(params, b, mc, variant, dtype)
            terms = total_loss(out, b.gt, [f.ego_route for f in chunk], variant, nav)
            value = float(terms.total.detach())
            if not math.isfinite(value):
                raise DivergedTraining(epoch, step, value)
            opt.zero_grad(set_to_none=True)
            terms.total.backward()
            if tc.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(list(params.values()), tc.grad_clip)
            opt.step()
            step += 1
            sums += np.array([value, float(terms.imitation.detach()), float(terms.navigation.detach())]) * len(chunk)
            seen += len(chunk)
            if max_steps is not None and step >= max_steps:
                break
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": sums[0] / seen,
            "train_imitation": sums[1] / seen,
            "train_nav": sums[2] / seen,
            "val_loss": evaluate_loss(params, val_feats, mc, tc, variant, dtype) if val_feats else float("nan"),
        }
        history.append(row)
        log.info("epoch %d lr %.3g train %.4f val %.4f", epoch, lr, row["train_loss"], row["val_loss"])
        if on_epoch is not None:
            on_epoch(row)
        if max_steps is not None and step >= max_steps:
            break
    return TrainResult(ModelParams.from_torch(params), history)


def predict(params: ModelParams, feats: list[SceneFeatures], mc: ModelConfig, variant: Variant,
            batch_size: int = 32) -> list[PredictionOutput]:
    """Inference in double precision."""
    p = params.to_torch(torch.float64)
    preds = []
    with torch.no_grad():
        for i in range(0, len(feats), batch_size):
            chunk = feats[i:i + batch_size]
            out = forward(p, collate(chunk), mc, variant, torch.float64)
            preds += to_predictions(out, chunk)
    return preds
