"""Prediction pipelines feeding the metrics: trained checkpoints and the debug oracle."""
from __future__ import annotations

import numpy as np

from navfuse.focal import select_focal_agents
from navfuse.prediction import NUM_MODES, PredictionOutput
from navfuse.predictor.checkpoint import Checkpoint
from navfuse.predictor.train import predict, prepare
from navfuse.route import RouteGeometry, lateral_distance_to_route, route_geometry
from navfuse.scene import FUTURE_STEPS, PolylineClass, Scene, to_agent_frame, wrap_angle

ORACLE = "oracle"
# the oracle's confidence vector: mode 0 (ground truth) dominates
_ORACLE_CONF = np.array([0.5, 0.1, 0.1, 0.1, 0.1, 0.1])


def oracle_prediction(s: Scene, max_focal: int = 8) -> PredictionOutput:
    """Debug predictor: mode 0 is the ground truth, the other modes stand still."""
    ids = tuple(select_focal_agents(s, max_focal))
    agents = {a.id: a for a in s.agents}
    frames = tuple(agents[i].current_pose for i in ids)
    traj = np.zeros((NUM_MODES, len(ids), FUTURE_STEPS, 3))
    for a, (aid, f) in enumerate(zip(ids, frames)):
        fut = agents[aid].future_gt
        traj[0, a, :, :2] = to_agent_frame(fut[:, :2], f)
        traj[0, a, :, 2] = wrap_angle(fut[:, 2] - f.heading)
    return PredictionOutput(traj, _ORACLE_CONF.copy(), ids, frames)


def predictions(source, scenes: list[Scene], batch_size: int = 32) -> list[PredictionOutput]:
    """``source`` is a :class:`Checkpoint` or the string ``"oracle"``."""
    if isinstance(source, str):
        if source != ORACLE:
            raise ValueError(f"unknown prediction source {source!r}")
        return [oracle_prediction(s) for s in scenes]
    ck: Checkpoint = source
    feats = prepare(scenes, ck.variant, ck.model_config)
    return predict(ck.params, feats, ck.model_config, ck.variant, batch_size)


def _off_route_geometry(s: Scene) -> RouteGeometry:
    segs, keys = [], []
    for p in sorted(s.polylines, key=lambda p: p.id):
        if p.cls is PolylineClass.LANE_CENTERLINE and not p.on_route:
            for i in range(len(p.points) - 1):
                segs.append(p.points[i:i + 2])
                keys.append((p.id, i))
    return RouteGeometry(np.asarray(segs, dtype=np.float64).reshape(-1, 2, 2), tuple(keys))


def route_consistent_modes(pred: PredictionOutput, s: Scene) -> np.ndarray:
    """Per mode: the ego endpoint lies closer to the route than to any off-route lane."""
    ego = pred.agent_index(s.ego_id)
    ends = pred.global_trajectories()[:, ego, -1, :2]
    on = route_geometry(s)
    off = _off_route_geometry(s)
    if len(off) == 0:
        return np.ones(len(ends), dtype=bool)
    return np.array([lateral_distance_to_route(e, on) < lateral_distance_to_route(e, off) for e in ends])


def route_consistent_mass(pred: PredictionOutput, s: Scene) -> float:
    """Total confidence on route-consistent modes."""
    return float(pred.confidences[route_consistent_modes(pred, s)].sum())
