"""Route membership, route flags on polylines, goal features and lateral distance to the route."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from navfuse.errors import EmptyRoute, UndefinedGradient
from navfuse.scene import LaneGraph, Polyline, PolylineClass, Pose2D, Scene, to_agent_frame


def route_lanes(g: LaneGraph) -> set[str]:
    """Lanes from which ``g.goal_lane`` is reachable along successor edges.

    Reachability is reflexive, so the goal lane itself is included.
    """
    if g.goal_lane not in g.lanes:
        return set()
    preds: dict[str, list[str]] = {}
    for a, succ in g.successors.items():
        for b in succ:
            preds.setdefault(b, []).append(a)
    seen = {g.goal_lane}
    queue = deque([g.goal_lane])
    while queue:
        lane = queue.popleft()
        for p in preds.get(lane, ()):
            if p not in seen and p in g.lanes:
                seen.add(p)
                queue.append(p)
    return seen


def mark_route_polylines(s: Scene) -> Scene:
    """Flag exactly the centerlines of ``s.route_lane_ids`` as on-route."""
    route_pids = {s.lane_graph.lanes[l] for l in s.route_lane_ids if l in s.lane_graph.lanes}
    polys = tuple(
        Polyline(p.id, p.cls, p.points, p.cls is PolylineClass.LANE_CENTERLINE and p.id in route_pids)
        for p in s.polylines
    )
    return s.with_(polylines=polys)


@dataclass(frozen=True, eq=False)
class RouteGeometry:
    """Route centerline segments, sorted by (polyline id, segment index).

    ``segments`` has shape ``(n, 2, 2)``: start/end point of each segment.
    """

    segments: np.ndarray
    keys: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64).reshape(-1, 2, 2)
        if seg.shape[0] and np.any(np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1) <= 0):
            raise ValueError("route segments must have positive length")
        seg.setflags(write=False)
        object.__setattr__(self, "segments", seg)

    def __len__(self):
        return self.segments.shape[0]

    def transformed(self, frame: Pose2D) -> "RouteGeometry":
        """Same geometry expressed in ``frame``; distances are unchanged."""
        return RouteGeometry(to_agent_frame(self.segments, frame), self.keys)


def route_geometry(s: Scene) -> RouteGeometry:
    route_pids = sorted({s.lane_graph.lanes[l] for l in s.route_lane_ids if l in s.lane_graph.lanes})
    by_id = {p.id: p for p in s.polylines}
    segs, keys = [], []
    for pid in route_pids:
        pts = by_id[pid].points
        for i in range(len(pts) - 1):
            if np.any(pts[i + 1] != pts[i]):
                segs.append((pts[i], pts[i + 1]))
                keys.append((pid, i))
    return RouteGeometry(np.asarray(segs, dtype=np.float64).reshape(-1, 2, 2), tuple(keys))


def _closest_points(p: np.ndarray, seg: np.ndarray) -> np.ndarray:
    a, b = seg[:, 0], seg[:, 1]
    ab = b - a
    t = np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    return a + t[:, None] * ab


def _nearest(p, r: RouteGeometry) -> tuple[float, np.ndarray]:
    if len(r) == 0:
        raise EmptyRoute("route has no segments")
    p = np.asarray(p, dtype=np.float64).reshape(2)
    foot = _closest_points(p, r.segments)
    d = np.hypot(p[0] - foot[:, 0], p[1] - foot[:, 1])
    i = int(np.argmin(d))  # first minimum: smallest (polyline id, segment index)
    return float(d[i]), foot[i]


def lateral_distance_to_route(p, r: RouteGeometry) -> float:
    """Minimum Euclidean distance from ``p`` to any route centerline segment."""
    return _nearest(p, r)[0]


def lateral_distance_grad(p, r: RouteGeometry) -> np.ndarray:
    """Unit vector from the nearest route point toward ``p``."""
    d, foot = _nearest(p, r)
    if d == 0.0:
        raise UndefinedGradient("point lies on the route")
    return (np.asarray(p, dtype=np.float64).reshape(2) - foot) / d


def goal_feature(goal: Pose2D, agent_frame: Pose2D) -> np.ndarray:
    """``[x, y, cos(heading), sin(heading)]`` of the goal in the agent's frame."""
    local = to_agent_frame(goal, agent_frame)
    return np.array([local.x, local.y, np.cos(local.heading), np.sin(local.heading)])
