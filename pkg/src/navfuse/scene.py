"""Scene, agent and polyline types plus frame/resampling helpers.

Array layouts used throughout the package:

* ``AgentTrack.history``   -- ``(11, 5)`` rows of ``x, y, heading, speed, valid``
* ``AgentTrack.future_gt`` -- ``(80, 4)`` rows of ``x, y, heading, valid``
* ``Polyline.points``      -- ``(20, 2)``
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from navfuse.errors import DegeneratePolyline

HISTORY_STEPS = 11
FUTURE_STEPS = 80
POLYLINE_POINTS = 20
DT = 0.1


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2.0 * np.pi)
    if np.ndim(out) == 0:
        return float(out)
    return out


class AgentType(str, enum.Enum):
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"


AGENT_TYPES = (AgentType.VEHICLE, AgentType.PEDESTRIAN, AgentType.CYCLIST)


class PolylineClass(str, enum.Enum):
    LANE_CENTERLINE = "LaneCenterline"
    ROAD_BOUNDARY = "RoadBoundary"
    CROSSWALK = "Crosswalk"


POLYLINE_CLASSES = (PolylineClass.LANE_CENTERLINE, PolylineClass.ROAD_BOUNDARY, PolylineClass.CROSSWALK)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    heading: float
    t_index: int

    def __post_init__(self):
        if self.t_index < 0:
            raise ValueError("t_index must be >= 0")
        object.__setattr__(self, "heading", wrap_angle(self.heading))


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AgentTrack:
    id: str
    type: AgentType
    extent: tuple[float, float]
    history: np.ndarray
    future_gt: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "type", AgentType(self.type))
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))
        object.__setattr__(self, "history", _frozen(self.history))
        object.__setattr__(self, "future_gt", _frozen(self.future_gt))

    @property
    def current_pose(self) -> Pose2D:
        x, y, h = self.history[-1, :3]
        return Pose2D(x, y, h)

    @property
    def current_speed(self) -> float:
        return float(self.history[-1, 3])

    @property
    def history_valid(self) -> np.ndarray:
        return self.history[:, 4] > 0.5

    @property
    def future_valid(self) -> np.ndarray:
        return self.future_gt[:, 3] > 0.5


@dataclass(frozen=True, eq=False)
class Polyline:
    id: str
    cls: PolylineClass
    points: np.ndarray
    on_route: bool = False

    def __post_init__(self):
        object.__setattr__(self, "cls", PolylineClass(self.cls))
        object.__setattr__(self, "points", _frozen(self.points))
        object.__setattr__(self, "on_route", bool(self.on_route))


@dataclass(frozen=True)
class LaneGraph:
    lanes: dict[str, str]
    successors: dict[str, frozenset[str]]
    goal_lane: str

    def __post_init__(self):
        object.__setattr__(self, "lanes", dict(self.lanes))
        succ = {k: frozenset(v) for k, v in self.successors.items()}
        object.__setattr__(self, "successors", succ)

    def successors_of(self, lane_id: str) -> frozenset[str]:
        return self.successors.get(lane_id, frozenset())


@dataclass(frozen=True, eq=False)
class Scene:
    id: str
    polylines: tuple[Polyline, ...]
    lane_graph: LaneGraph
    agents: tuple[AgentTrack, ...]
    ego_id: str
    goal: Pose2D
    route_lane_ids: frozenset[str] = field(default_factory=frozenset)
    dt: float = DT

    def __post_init__(self):
        object.__setattr__(self, "polylines", tuple(self.polylines))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "route_lane_ids", frozenset(self.route_lane_ids))

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def ego(self) -> AgentTrack:
        return self.agent(self.ego_id)

    def polyline(self, polyline_id: str) -> Polyline:
        for p in self.polylines:
            if p.id == polyline_id:
                return p
        raise KeyError(polyline_id)

    def with_(self, **changes) -> "Scene":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# frames


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_agent_frame(p, frame: Pose2D):
    """Express a pose or an ``(..., 2)`` point array in ``frame``.

    Translate by the negated frame position, then rotate by ``-frame.heading``.
    """
    if isinstance(p, Pose2D):
        xy = to_agent_frame(p.xy, frame)
        return Pose2D(xy[0], xy[1], p.heading - frame.heading)
    pts = np.asarray(p, dtype=np.float64)
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    dx = pts[..., 0] - frame.x
    dy = pts[..., 1] - frame.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def from_agent_frame(p, frame: Pose2D):
    """Inverse of :func:`to_agent_frame`."""
    if isinstance(p, Pose2D):
        xy = from_agent_frame(p.xy, frame)
        return Pose2D(xy[0], xy[1], p.heading + frame.heading)
    pts = np.asarray(p, dtype=np.float64)
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    x = c * pts[..., 0] - s * pts[..., 1] + frame.x
    y = s * pts[..., 0] + c * pts[..., 1] + frame.y
    return np.stack([x, y], axis=-1)


# ---------------------------------------------------------------------------
# resampling


def arc_lengths(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points, n_points: int = POLYLINE_POINTS) -> np.ndarray:
    """Resample a point chain to ``n_points`` points equally spaced in arc length.

    The first and last input points are reproduced exactly.
    """
    pts = np.asarray(points, dtype=np.float64)
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DegeneratePolyline("need at least two points")
    # drop zero-length segments so the arc-length table is strictly increasing
    keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0.0, axis=1)])
    pts = pts[keep]
    if pts.shape[0] < 2:
        raise DegeneratePolyline("polyline has zero arc length")
    s = arc_lengths(pts)
    total = s[-1]
    if not total > 0.0:
        raise DegeneratePolyline("polyline has zero arc length")
    targets = np.linspace(0.0, total, n_points)
    out = np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=-1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


# ---------------------------------------------------------------------------
# validation


def _heading_ok(h: np.ndarray) -> bool:
    h = np.asarray(h)
    return bool(np.all((h > -np.pi) & (h <= np.pi)))


def validate_scene(s: Scene) -> list[str]:
    """Return one ``"<field>: <rule>"`` string per violated invariant."""
    v: list[str] = []
    ids = [a.id for a in s.agents]
    if s.ego_id not in ids:
        v.append(f"ego_id: {s.ego_id!r} not present in agents")
    if len(set(ids)) != len(ids):
        v.append("agents: duplicate agent ids")
    if not math.isclose(s.dt, DT):
        v.append(f"dt: expected {DT}, got {s.dt}")
    if not _heading_ok([s.goal.heading]):
        v.append("goal.heading: not normalized to (-pi, pi]")

    for i, a in enumerate(s.agents):
        tag = f"agents[{i}]"
        if a.history.ndim != 2 or a.history.shape != (HISTORY_STEPS, 5):
            v.append(f"{tag}.history: length {a.history.shape[0]} != {HISTORY_STEPS}")
        elif not _heading_ok(a.history[:, 2]):
            v.append(f"{tag}.history: heading not normalized")
        if a.future_gt.ndim != 2 or a.future_gt.shape != (FUTURE_STEPS, 4):
            v.append(f"{tag}.future_gt: future length {a.future_gt.shape[0]} != {FUTURE_STEPS}")
        elif not _heading_ok(a.future_gt[:, 2]):
            v.append(f"{tag}.future_gt: heading not normalized")
        if not (a.extent[0] > 0 and a.extent[1] > 0):
            v.append(f"{tag}.extent: components must be > 0")
        if not (np.all(np.isfinite(a.history)) and np.all(np.isfinite(a.future_gt))):
            v.append(f"{tag}: non-finite values")

    if s.ego_id in ids:
        ego = s.ego
        if ego.history.shape[0] >= 1 and not ego.history[-1, 4] > 0.5:
            v.append("agents(ego).history: last history step must be valid")

    poly_ids = {p.id for p in s.polylines}
    if len(poly_ids) != len(s.polylines):
        v.append("polylines: duplicate polyline ids")
    for i, p in enumerate(s.polylines):
        tag = f"polylines[{i}]"
        if p.points.shape != (POLYLINE_POINTS, 2):
            v.append(f"{tag}.points: length {p.points.shape[0]} != {POLYLINE_POINTS}")
        elif np.all(p.points == p.points[0]):
            v.append(f"{tag}.points: all points identical")
        if p.on_route and p.cls is not PolylineClass.LANE_CENTERLINE:
            v.append(f"{tag}.on_route: only lane centerlines may be on the route")

    g = s.lane_graph
    by_id = {p.id: p for p in s.polylines}
    for lane, pid in g.lanes.items():
        if pid not in by_id:
            v.append(f"lane_graph.lanes: lane {lane!r} references unknown polyline {pid!r}")
        elif by_id[pid].cls is not PolylineClass.LANE_CENTERLINE:
            v.append(f"lane_graph.lanes: lane {lane!r} polyline is not a centerline")
    bad_edges = sorted(
        f"{a}->{b}" for a, succ in g.successors.items() for b in succ if a not in g.lanes or b not in g.lanes
    )
    if bad_edges:
        v.append(f"lane_graph.successors: edges reference unknown lanes {bad_edges}")
    if g.goal_lane not in g.lanes:
        v.append(f"lane_graph.goal_lane: {g.goal_lane!r} not in lanes")
    extra = sorted(set(s.route_lane_ids) - set(g.lanes))
    if extra:
        v.append(f"route_lane_ids: lanes not in lane_graph {extra}")

    if s.ego_id in ids and s.ego.history.shape == (HISTORY_STEPS, 5):
        origin = s.ego.history[-1, :2]
        goal_d = float(np.hypot(*(s.goal.xy - origin)))
        far = 0.0
        for a in s.agents:
            if a.future_gt.ndim == 2 and a.future_gt.shape[1] == 4:
                valid = np.nonzero(a.future_gt[:, 3] > 0.5)[0]
                if valid.size:
                    far = max(far, float(np.hypot(*(a.future_gt[valid[-1], :2] - origin))))
        if not goal_d > far:
            v.append(f"goal: distance {goal_d:.3f} m not beyond farthest ground-truth endpoint {far:.3f} m")
    return v


# ---------------------------------------------------------------------------
# JSON Lines


def scene_to_dict(s: Scene) -> dict:
    g = s.lane_graph
    return {
        "id": s.id,
        "polylines": [
            {"id": p.id, "class": p.cls.value, "points": p.points.tolist(), "on_route": p.on_route}
            for p in s.polylines
        ],
        "lane_graph": {
            "lanes": dict(sorted(g.lanes.items())),
            "successors": {k: sorted(v) for k, v in sorted(g.successors.items())},
            "goal_lane": g.goal_lane,
        },
        "agents": [
            {
                "id": a.id,
                "type": a.type.value,
                "extent": list(a.extent),
                "history": a.history.tolist(),
                "future_gt": a.future_gt.tolist(),
            }
            for a in s.agents
        ],
        "ego_id": s.ego_id,
        "goal": {"x": s.goal.x, "y": s.goal.y, "heading": s.goal.heading},
        "route_lane_ids": sorted(s.route_lane_ids),
        "dt": s.dt,
    }


def scene_from_dict(d: dict) -> Scene:
    g = d["lane_graph"]
    return Scene(
        id=d["id"],
        polylines=tuple(
            Polyline(p["id"], PolylineClass(p["class"]), np.asarray(p["points"]), p["on_route"])
            for p in d["polylines"]
        ),
        lane_graph=LaneGraph(g["lanes"], {k: frozenset(v) for k, v in g["successors"].items()}, g["goal_lane"]),
        agents=tuple(
            AgentTrack(a["id"], AgentType(a["type"]), tuple(a["extent"]), np.asarray(a["history"]),
                       np.asarray(a["future_gt"]))
            for a in d["agents"]
        ),
        ego_id=d["ego_id"],
        goal=Pose2D(**d["goal"]),
        route_lane_ids=frozenset(d["route_lane_ids"]),
        dt=d.get("dt", DT),
    )


def dumps_scene(s: Scene) -> str:
    # json emits the shortest repr that round-trips each float exactly
    return json.dumps(scene_to_dict(s), separators=(",", ":"), allow_nan=False)


def write_jsonl(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(dumps_scene(s))
            fh.write("\n")


def iter_jsonl(path) -> Iterator[Scene]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield scene_from_dict(json.loads(line))


def read_jsonl(path) -> list[Scene]:
    return list(iter_jsonl(Path(path)))
