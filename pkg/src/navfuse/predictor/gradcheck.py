"""Finite-difference check of the analytic gradient of ``total_loss``."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from navfuse.focal import select_focal_agents
from navfuse.predictor.config import ModelConfig, Variant
from navfuse.predictor.features import SceneFeatures, collate, encode_scene
from navfuse.predictor.losses import total_loss
from navfuse.predictor.model import ModelParams, forward, init_params
from navfuse.robust import NavLossConfig
from navfuse.route import lateral_distance_to_route
from navfuse.synth import GenParams, gen_scene

STEP = 1e-5
# Gradients below this magnitude are compared in absolute terms; central
# differences on an O(1) loss carry roughly 1e-11 of round-off noise.
REL_FLOOR = 1e-6

TINY_CONFIG = ModelConfig(
    hidden_dim=8, encoder_layers=1, decoder_layers=1, heads=2, max_focal=2, reduction_queries=2,
    waypoints=10, ff_mult=2, max_map_tokens=4, max_agent_tokens=2, max_route_tokens=4,
)


@dataclass
class GradCheckResult:
    max_rel_error: float
    param: str
    index: tuple
    checked: int
    ego_lateral_distance: float

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "param": self.param,
            "index": list(self.index),
            "checked": self.checked,
            "ego_lateral_distance": self.ego_lateral_distance,
        }


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def tiny_scenes(seed: int = 0, n: int = 1) -> list:
    """Small generated scenes (two vehicles, one pedestrian) for the check."""
    p = GenParams(n_vehicles=2, n_pedestrians=1, n_cyclists=0)
    return [gen_scene(dataclasses.replace(p, seed=seed + i), f"gc-{i}") for i in range(n)]


def tiny_features(scenes, variant: Variant, cfg: ModelConfig = TINY_CONFIG) -> list[SceneFeatures]:
    return [encode_scene(s, select_focal_agents(s, cfg.max_focal), variant, cfg) for s in scenes]


def grad_check(params: ModelParams, feats: list[SceneFeatures], cfg: ModelConfig, variant: Variant,
               nav: NavLossConfig = NavLossConfig(), step: float = STEP) -> GradCheckResult:
    """Compare the autograd gradient with central differences for every parameter element."""
    variant = Variant(variant)
    batch = collate(feats)
    routes = [f.ego_route for f in feats]

    def loss(tensors) -> torch.Tensor:
        out = forward(tensors, batch, cfg, variant, torch.float64)
        return total_loss(out, batch.gt, routes, variant, nav).total

    tensors = params.to_torch(torch.float64, requires_grad=True)
    out = forward(tensors, batch, cfg, variant, torch.float64)
    total_loss(out, batch.gt, routes, variant, nav).total.backward()
    analytic = {k: t.grad.detach().numpy().copy() if t.grad is not None else np.zeros(t.shape)
                for k, t in tensors.items()}

    k = int(torch.argmax(out["logits"][0]))
    end = out["traj"][0, k, 0, -1, :2].detach().numpy()
    d_lat = lateral_distance_to_route(end, routes[0])

    worst = (0.0, "", ())
    checked = 0
    with torch.no_grad():
        probe = params.to_torch(torch.float64)
        for name, t in probe.items():
            flat = t.view(-1)
            g = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(loss(probe))
                flat[i] = orig - step
                down = float(loss(probe))
                flat[i] = orig
                num = (up - down) / (2.0 * step)
                err = float(relative_error(g[i], num))
                checked += 1
                if err > worst[0] or not worst[1]:
                    worst = (err, name, np.unravel_index(i, t.shape))
    return GradCheckResult(worst[0], worst[1], tuple(int(j) for j in worst[2]), checked, float(d_lat))


def run_tiny(scenes, variant: Variant, seed: int = 0, nav: NavLossConfig = NavLossConfig()) -> GradCheckResult:
    """grad_check on the tiny double-precision config for the given scenes."""
    variant = Variant(variant)
    feats = tiny_features(scenes, variant)
    params = init_params(TINY_CONFIG, variant, seed)
    return grad_check(params, feats, TINY_CONFIG, variant, nav)
