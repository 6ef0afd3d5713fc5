from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from navfuse.errors import NoValidSteps, UndefinedGradient
from navfuse.predictor.config import Variant
from navfuse.robust import NavLossConfig
from navfuse.route import RouteGeometry, lateral_distance_grad, lateral_distance_to_route


@dataclass
class LossTerms:
    total: torch.Tensor
    regression: torch.Tensor
    classification: torch.Tensor
    navigation: torch.Tensor
    best_mode: torch.Tensor

    @property
    def imitation(self) -> torch.Tensor:
        return self.regression + self.classification


def best_joint_modes(traj: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """argmin over modes of the mean displacement over all focal agents and valid steps."""
    valid = gt[..., 3]
    count = valid.sum(dim=(1, 2))
    if bool((count == 0).any()):
        raise NoValidSteps("a scene has no valid ground-truth steps")
    disp = torch.linalg.vector_norm(traj[..., :2] - gt[:, None, ..., :2], dim=-1)  # (B, K, A, T)
    mean = (disp * valid[:, None]).sum(dim=(2, 3)) / count[:, None]
    return torch.argmin(mean.detach(), dim=1)


def imitation_loss(traj: torch.Tensor, logits: torch.Tensor, gt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Joint winner-takes-all loss.

    ``traj`` is ``(B, K, A, T, 4)`` with x, y, cos, sin; ``gt`` is ``(B, A, T, 4)``
    with x, y, heading, valid. Returns ``(regression, cross_entropy, k_star)``.
    """
    gt = torch.as_tensor(gt, dtype=traj.dtype)
    k_star = best_joint_modes(traj, gt)
    valid = gt[..., 3]
    target = torch.stack([gt[..., 0], gt[..., 1], torch.cos(gt[..., 2]), torch.sin(gt[..., 2])], dim=-1)
    chosen = traj[torch.arange(traj.shape[0]), k_star]  # (B, A, T, 4)
    err = F.smooth_l1_loss(chosen, target, reduction="none", beta=1.0)
    per_scene = (err * valid[..., None]).sum(dim=(1, 2, 3)) / (4.0 * valid.sum(dim=(1, 2)))
    regression = per_scene.mean()
    ce = F.cross_entropy(logits, k_star)
    return regression, ce, k_star


class _LateralDistance(torch.autograd.Function):
    """d_lat of one point with the hand-derived gradient of the route geometry."""

    @staticmethod
    def forward(ctx, point, route):
        p = point.detach().to(torch.float64).numpy()
        d = lateral_distance_to_route(p, route)
        try:
            g = lateral_distance_grad(p, route)
        except UndefinedGradient:
            g = np.zeros(2)
        ctx.save_for_backward(torch.as_tensor(g, dtype=point.dtype))
        return point.new_tensor(d)

    @staticmethod
    def backward(ctx, grad_out):
        (g,) = ctx.saved_tensors
        return grad_out * g, None


def lateral_distance(point: torch.Tensor, route: RouteGeometry) -> torch.Tensor:
    return _LateralDistance.apply(point, route)


def robust_value_t(x: torch.Tensor, alpha: float, c: float) -> torch.Tensor:
    b = abs(alpha - 2.0)
    return (b / alpha) * (torch.pow((x / c) ** 2 / b + 1.0, alpha / 2.0) - 1.0)


def navigation_term(traj: torch.Tensor, logits: torch.Tensor, routes: list[RouteGeometry],
                    cfg: NavLossConfig, ego_index: int = 0) -> torch.Tensor:
    """Mean over scenes of ``weight * f(d_lat)`` for the ego endpoint of the most probable mode."""
    k = torch.argmax(logits.detach(), dim=1)
    vals = []
    for b, route in enumerate(routes):
        end = traj[b, k[b], ego_index, -1, :2]
        d = lateral_distance(end, route)
        vals.append(cfg.weight * robust_value_t(d, cfg.params.alpha, cfg.params.c))
    return torch.stack(vals).mean()


def total_loss(out: dict, gt, routes: list[RouteGeometry], variant: Variant,
               nav: NavLossConfig = NavLossConfig()) -> LossTerms:
    """Imitation loss, plus the navigation term for variants that train with it."""
    traj, logits = out["traj"], out["logits"]
    reg, ce, k_star = imitation_loss(traj, logits, gt)
    if Variant(variant).nav_loss and nav.weight > 0:
        nav_t = navigation_term(traj, logits, routes, nav)
    else:
        nav_t = torch.zeros((), dtype=traj.dtype)
    return LossTerms(reg + ce + nav_t, reg, ce, nav_t, k_star)
