"""Agent-centric token features for the predictor.

For every focal agent the scene is re-expressed in that agent's frame (its last
history pose) and turned into fixed-width feature rows:

* map tokens   -- 20 local points, class one-hot, plus the route bit under early fusion
* agent tokens -- 11 history steps of (x, y, cos, sin, speed, valid), type one-hot,
  extent and an is-self flag; the focal agent's own token is always row 0
* goal token   -- ``goal_feature`` (early and late fusion)
* route tokens -- on-route centerlines, late fusion only
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from navfuse.errors import InvalidConfig
from navfuse.predictor.config import ModelConfig, Variant
from navfuse.route import RouteGeometry, goal_feature, route_geometry
from navfuse.scene import (
    AGENT_TYPES,
    POLYLINE_CLASSES,
    AgentType,
    PolylineClass,
    Pose2D,
    Scene,
    to_agent_frame,
    validate_scene,
    wrap_angle,
)

POLY_FEATS = 40 + len(POLYLINE_CLASSES)
AGENT_FEATS = 11 * 6 + len(AGENT_TYPES) + 2 + 1
GOAL_FEATS = 4
_SPEED_SCALE = 10.0
_EXTENT_SCALE = 5.0


def map_feature_dim(variant: Variant) -> int:
    return POLY_FEATS + (1 if variant.early_fusion else 0)


@dataclass(eq=False)
class SceneFeatures:
    scene_id: str
    agent_ids: tuple[str, ...]
    frames: tuple[Pose2D, ...]
    agent_types: tuple[AgentType, ...]
    map_tokens: np.ndarray      # (A, Nm, Fm)
    map_mask: np.ndarray        # (A, Nm)
    agent_tokens: np.ndarray    # (A, Na, Fa)
    agent_mask: np.ndarray      # (A, Na)
    goal: np.ndarray | None     # (A, 4), scaled
    route_tokens: np.ndarray | None  # (A, Nr, Fr)
    route_mask: np.ndarray | None
    gt: np.ndarray              # (A, T, 4) x, y, heading, valid in the agent frame
    ego_route: RouteGeometry    # route segments in the ego frame
    init_speed: np.ndarray      # (A,)

    @property
    def num_focal(self) -> int:
        return len(self.agent_ids)

    def token_counts(self) -> np.ndarray:
        """Tokens seen by the encoder per focal view."""
        n = self.map_mask.sum(1) + self.agent_mask.sum(1)
        if self.goal is not None and self.route_tokens is None:
            n = n + 1
        return n


def _one_hot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def _poly_distance(points: np.ndarray, frame: Pose2D) -> float:
    return float(np.min(np.hypot(points[:, 0] - frame.x, points[:, 1] - frame.y)))


def _pick(items, dists, radius, limit):
    # order-independent: nearest first, ties by id
    keep = sorted((d, key) for d, key in zip(dists, items) if d <= radius)
    return [key for _, key in keep[:limit]]


def encode_scene(s: Scene, focal_ids, variant: Variant, cfg: ModelConfig = ModelConfig(),
                 check: bool = True) -> SceneFeatures:
    """Build the agent-centric token sets of one scene."""
    if check:
        problems = validate_scene(s)
        if problems:
            raise InvalidConfig(f"scene {s.id} is invalid: {problems}")
    variant = Variant(variant)
    focal_ids = list(focal_ids)[: cfg.max_focal]
    agents = {a.id: a for a in s.agents}
    polys = {p.id: p for p in s.polylines}
    T = cfg.waypoints
    A = len(focal_ids)
    scale = cfg.pos_scale

    frames = tuple(agents[i].current_pose for i in focal_ids)
    map_rows, agent_rows, route_rows = [], [], []
    goals = np.zeros((A, GOAL_FEATS))
    gt = np.zeros((A, T, 4))

    route_ids = sorted(p.id for p in s.polylines if p.on_route)

    for a, (aid, f) in enumerate(zip(focal_ids, frames)):
        pids = sorted(polys)
        chosen = _pick(pids, [_poly_distance(polys[p].points, f) for p in pids], cfg.map_radius,
                       cfg.max_map_tokens)
        rows = []
        for pid in chosen:
            p = polys[pid]
            local = to_agent_frame(p.points, f) / scale
            parts = [local.reshape(-1), _one_hot(POLYLINE_CLASSES.index(p.cls), len(POLYLINE_CLASSES))]
            if variant.early_fusion:
                parts.append([1.0 if p.on_route else 0.0])
            rows.append(np.concatenate(parts))
        map_rows.append(np.asarray(rows).reshape(len(rows), map_feature_dim(variant)))

        others = sorted(i for i in agents if i != aid and agents[i].history[-1, 4] > 0.5)
        near = _pick(others, [float(np.hypot(*(agents[i].history[-1, :2] - f.xy))) for i in others],
                     cfg.agent_radius, cfg.max_agent_tokens - 1)
        rows = [_agent_row(agents[i], f, scale, i == aid) for i in [aid] + near]
        agent_rows.append(np.asarray(rows))

        if variant.early_fusion or variant.late_fusion:
            g = goal_feature(s.goal, f)
            goals[a] = [g[0] / scale, g[1] / scale, g[2], g[3]]

        if variant.late_fusion:
            rows = []
            for pid in route_ids[: cfg.max_route_tokens]:
                local = to_agent_frame(polys[pid].points, f) / scale
                rows.append(np.concatenate([local.reshape(-1), _one_hot(0, len(POLYLINE_CLASSES))]))
            route_rows.append(np.asarray(rows).reshape(len(rows), POLY_FEATS))

        fut = agents[aid].future_gt[:T]
        gt[a, :, :2] = to_agent_frame(fut[:, :2], f)
        gt[a, :, 2] = wrap_angle(fut[:, 2] - f.heading)
        gt[a, :, 3] = fut[:, 3]

    map_tokens, map_mask = _pad(map_rows, map_feature_dim(variant))
    agent_tokens, agent_mask = _pad(agent_rows, AGENT_FEATS)
    route_tokens = route_mask = None
    if variant.late_fusion:
        route_tokens, route_mask = _pad(route_rows, POLY_FEATS)

    ego_idx = focal_ids.index(s.ego_id) if s.ego_id in focal_ids else 0
    ego_route = route_geometry(s).transformed(frames[ego_idx])
    return SceneFeatures(
        scene_id=s.id,
        agent_ids=tuple(focal_ids),
        frames=frames,
        agent_types=tuple(agents[i].type for i in focal_ids),
        map_tokens=map_tokens,
        map_mask=map_mask,
        agent_tokens=agent_tokens,
        agent_mask=agent_mask,
        goal=goals if (variant.early_fusion or variant.late_fusion) else None,
        route_tokens=route_tokens,
        route_mask=route_mask,
        gt=gt,
        ego_route=ego_route,
        init_speed=np.array([agents[i].current_speed for i in focal_ids]),
    )


def _agent_row(track, frame: Pose2D, scale: float, is_self: bool) -> np.ndarray:
    h = track.history
    xy = to_agent_frame(h[:, :2], frame) / scale
    head = h[:, 2] - frame.heading
    valid = h[:, 4:5]
    steps = np.concatenate([xy, np.cos(head)[:, None], np.sin(head)[:, None], h[:, 3:4] / _SPEED_SCALE, valid], 1)
    steps = steps * valid  # zero invalid steps entirely
    return np.concatenate([
        steps.reshape(-1),
        _one_hot(AGENT_TYPES.index(track.type), len(AGENT_TYPES)),
        np.asarray(track.extent) / _EXTENT_SCALE,
        [1.0 if is_self else 0.0],
    ])


def _pad(rows: list[np.ndarray], width: int) -> tuple[np.ndarray, np.ndarray]:
    n = max([r.shape[0] for r in rows] + [1])
    out = np.zeros((len(rows), n, width))
    mask = np.zeros((len(rows), n), dtype=bool)
    for i, r in enumerate(rows):
        out[i, : r.shape[0]] = r
        mask[i, : r.shape[0]] = True
    return out, mask


@dataclass(eq=False)
class Batch:
    """Padded stack of :class:`SceneFeatures` as numpy arrays."""

    feats: list[SceneFeatures]
    map_tokens: np.ndarray      # (B, A, Nm, Fm)
    map_mask: np.ndarray
    agent_tokens: np.ndarray    # (B, A, Na, Fa)
    agent_mask: np.ndarray
    focal_mask: np.ndarray      # (B, A)
    goal: np.ndarray | None     # (B, A, 4)
    route_tokens: np.ndarray | None
    route_mask: np.ndarray | None
    gt: np.ndarray              # (B, A, T, 4)


def _stack(arrays, shape_tail_dims: int, fill=0.0, dtype=np.float64):
    lead = [max(a.shape[i] for a in arrays) for i in range(arrays[0].ndim - shape_tail_dims)]
    tail = list(arrays[0].shape[arrays[0].ndim - shape_tail_dims:])
    out = np.full([len(arrays)] + lead + tail, fill, dtype=dtype)
    for i, a in enumerate(arrays):
        out[(i,) + tuple(slice(0, d) for d in a.shape)] = a
    return out


def collate(feats: list[SceneFeatures]) -> Batch:
    A = max(f.num_focal for f in feats)
    focal = np.zeros((len(feats), A), dtype=bool)
    for i, f in enumerate(feats):
        focal[i, : f.num_focal] = True
    late = feats[0].route_tokens is not None
    has_goal = feats[0].goal is not None
    return Batch(
        feats=list(feats),
        map_tokens=_stack([f.map_tokens for f in feats], 1),
        map_mask=_stack([f.map_mask for f in feats], 0, False, bool),
        agent_tokens=_stack([f.agent_tokens for f in feats], 1),
        agent_mask=_stack([f.agent_mask for f in feats], 0, False, bool),
        focal_mask=focal,
        goal=_stack([f.goal for f in feats], 1) if has_goal else None,
        route_tokens=_stack([f.route_tokens for f in feats], 1) if late else None,
        route_mask=_stack([f.route_mask for f in feats], 0, False, bool) if late else None,
        gt=_stack([f.gt for f in feats], 2),
    )
