"""General robust function f(x, alpha, c), its derivative, and the navigation loss.

The prefactor is ``|alpha - 2| / alpha`` so the function is a non-negative
penalty that grows with ``|x|``; for negative alpha it saturates at
``|alpha - 2| / -alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from navfuse.errors import InvalidConfig, UndefinedGradient
from navfuse.prediction import PredictionOutput
from navfuse.route import RouteGeometry, lateral_distance_grad, lateral_distance_to_route
from navfuse.scene import from_agent_frame


@dataclass(frozen=True)
class RobustParams:
    alpha: float = -5.0
    c: float = 3.0

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidConfig(f"robust scale c must be > 0, got {self.c}")
        if self.alpha in (0.0, 2.0):
            raise InvalidConfig(f"alpha={self.alpha} is a removable singularity and is not supported")


@dataclass(frozen=True)
class NavLossConfig:
    params: RobustParams = field(default_factory=RobustParams)
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight >= 0:
            raise InvalidConfig(f"navigation loss weight must be >= 0, got {self.weight}")


def robust_value(x, p: RobustParams = RobustParams()):
    x = np.asarray(x, dtype=np.float64)
    b = abs(p.alpha - 2.0)
    out = (b / p.alpha) * (np.power((x / p.c) ** 2 / b + 1.0, p.alpha / 2.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def robust_grad(x, p: RobustParams = RobustParams()):
    x = np.asarray(x, dtype=np.float64)
    b = abs(p.alpha - 2.0)
    out = (x / p.c**2) * np.power((x / p.c) ** 2 / b + 1.0, p.alpha / 2.0 - 1.0)
    return float(out) if out.ndim == 0 else out


def navigation_loss(pred: PredictionOutput, route: RouteGeometry, ego_index: int = 0,
                    cfg: NavLossConfig = NavLossConfig()) -> tuple[float, np.ndarray]:
    """Weighted robust penalty on the lateral route distance of the ego endpoint.

    Only the last waypoint of the ego's most probable mode is scored. Returns
    the loss and its gradient with respect to ``pred.trajectories[..., :2]``
    (zero everywhere except that one waypoint, expressed in the ego frame).
    """
    k = pred.most_probable_mode
    frame = pred.frames[ego_index]
    end_local = pred.trajectories[k, ego_index, -1, :2]
    end = from_agent_frame(end_local, frame)
    d = lateral_distance_to_route(end, route)
    loss = cfg.weight * robust_value(d, cfg.params)
    grad = np.zeros(pred.trajectories.shape[:-1] + (2,))
    try:
        g_world = lateral_distance_grad(end, route)
    except UndefinedGradient:
        return loss, grad
    c, s = np.cos(frame.heading), np.sin(frame.heading)
    # d(world)/d(local) is the frame rotation, so pull back with its transpose
    g_local = np.array([c * g_world[0] + s * g_world[1], -s * g_world[0] + c * g_world[1]])
    grad[k, ego_index, -1] = cfg.weight * robust_grad(d, cfg.params) * g_local
    return loss, grad
