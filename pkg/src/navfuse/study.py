"""Variant comparison on held-out synthetic scenes, across training seeds.

Used by the direction-of-effect check: for each variant and seed, train on the
training scenes, predict the test scenes, and record the ego's minFDE (mean of
the 3/5/8 s horizons, as in the Ego row of the report) and, per scene, the
confidence mass on route-consistent modes.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from navfuse.evaluate import route_consistent_mass
from navfuse.metrics import HORIZONS, gt_in_frames, min_metrics
from navfuse.predictor.config import ModelConfig, TrainConfig, Variant
from navfuse.predictor.train import predict, prepare, train

log = logging.getLogger(__name__)


@dataclass
class SeedOutcome:
    ego_min_fde: float
    route_mass: np.ndarray
    train_log: list = field(default_factory=list)


def ego_min_fde(pred, scene) -> float:
    gt = gt_in_frames(pred, scene)
    ego = pred.agent_index(scene.ego_id)
    return float(np.mean([min_metrics(pred.trajectories[:, ego:ego + 1], gt[ego:ego + 1], h)[1][0]
                          for h in HORIZONS]))


def run_variant(train_scenes, test_scenes, variant: Variant, seed: int, mc: ModelConfig = ModelConfig(),
                tc: TrainConfig = TrainConfig(), threads: int = 1) -> SeedOutcome:
    variant = Variant(variant)
    tc = dataclasses.replace(tc, seed=seed)
    res = train(prepare(train_scenes, variant, mc), mc, tc, variant, threads=threads)
    preds = predict(res.params, prepare(test_scenes, variant, mc), mc, variant)
    fde = np.mean([ego_min_fde(p, s) for p, s in zip(preds, test_scenes)])
    mass = np.array([route_consistent_mass(p, s) for p, s in zip(preds, test_scenes)])
    log.info("%s seed %d: ego minFDE %.4f, route mass %.4f", variant.value, seed, fde, mass.mean())
    return SeedOutcome(float(fde), mass, res.log)


def compare_variants(train_scenes, test_scenes, variants, seeds, mc: ModelConfig = ModelConfig(),
                     tc: TrainConfig = TrainConfig(), threads: int = 1, on_result=None) -> dict:
    """``{variant: [SeedOutcome per seed]}``."""
    out = {}
    for v in variants:
        v = Variant(v)
        out[v] = []
        for seed in seeds:
            r = run_variant(train_scenes, test_scenes, v, seed, mc, tc, threads)
            out[v].append(r)
            if on_result is not None:
                on_result(v, seed, r)
    return out
