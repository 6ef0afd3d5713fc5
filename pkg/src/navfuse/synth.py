"""Deterministic synthetic lane-graph scenarios (straight road, T and four-way intersections).

Geometry is built in a canonical frame with the intersection at the origin and
then moved by a random rigid transform. Right-hand traffic. Every lane of an
arm is cut into fixed-length segments; each segment is one lane-graph node and
one centerline polyline. Turn connectors are cubic Bezier curves.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from navfuse.errors import BadRatios, InfeasibleLayout
from navfuse.fsutil import atomic_write
from navfuse.metrics import boxes_overlap
from navfuse.route import mark_route_polylines, route_lanes
from navfuse.scene import (
    DT,
    FUTURE_STEPS,
    HISTORY_STEPS,
    POLYLINE_POINTS,
    AgentTrack,
    AgentType,
    LaneGraph,
    Polyline,
    PolylineClass,
    Pose2D,
    Scene,
    dumps_scene,
    resample_polyline,
    validate_scene,
    wrap_angle,
)


class Layout(str, enum.Enum):
    STRAIGHT = "Straight"
    T_INTERSECTION = "TIntersection"
    FOUR_WAY = "FourWay"


_ARMS = {"E": 0.0, "N": math.pi / 2, "W": math.pi, "S": -math.pi / 2}
_LAYOUT_ARMS = {
    Layout.STRAIGHT: ("E", "W"),
    Layout.T_INTERSECTION: ("E", "S", "W"),
    Layout.FOUR_WAY: ("E", "N", "S", "W"),
}


@dataclass(frozen=True)
class GenParams:
    layout: Layout = Layout.FOUR_WAY
    lanes_per_arm: int = 1
    lane_width: float = 3.5
    arm_length: float = 260.0
    segment_length: float = 52.0
    n_vehicles: int = 6
    n_pedestrians: int = 2
    n_cyclists: int = 2
    ego_speed: tuple[float, float] = (5.0, 11.0)
    vehicle_speed: tuple[float, float] = (4.0, 12.0)
    cyclist_speed: tuple[float, float] = (3.0, 6.0)
    pedestrian_speed: tuple[float, float] = (0.8, 1.8)
    max_accel: float = 0.4
    lateral_jitter: float = 0.15
    min_branches: int = 1
    crosswalks: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layout", Layout(self.layout))
        for name in ("ego_speed", "vehicle_speed", "cyclist_speed", "pedestrian_speed"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if min(self.n_vehicles, self.n_pedestrians, self.n_cyclists) < 0:
            raise ValueError("agent counts must be >= 0")
        if self.n_vehicles < 1:
            raise ValueError("at least one vehicle (the ego) is required")
        if self.lanes_per_arm < 1 or self.lane_width <= 0 or self.segment_length <= 0:
            raise ValueError("lane geometry must be positive")
        if self.arm_length < 2 * self.segment_length:
            raise ValueError("arm_length must cover at least two segments")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layout"] = self.layout.value
        d["ego_speed"] = list(self.ego_speed)
        d["vehicle_speed"] = list(self.vehicle_speed)
        d["cyclist_speed"] = list(self.cyclist_speed)
        d["pedestrian_speed"] = list(self.pedestrian_speed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown GenParams keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# paths


class _Path:
    """Dense 2D path with arc-length lookup, extended straight at both ends."""

    _EXT = 400.0

    def __init__(self, pts: np.ndarray):
        pts = np.asarray(pts, dtype=np.float64)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9])
        pts = pts[keep]
        d0 = pts[1] - pts[0]
        d1 = pts[-1] - pts[-2]
        d0 /= np.linalg.norm(d0)
        d1 /= np.linalg.norm(d1)
        pts = np.vstack([pts[0] - self._EXT * d0, pts, pts[-1] + self._EXT * d1])
        seg = np.diff(pts, axis=0)
        seg_h = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(seg, axis=1))])
        vert_h = np.concatenate([[seg_h[0]], 0.5 * (seg_h[:-1] + seg_h[1:]), [seg_h[-1]]])
        self.pts = pts
        self.s = s - self._EXT  # arc length 0 at the first real point
        self.h = vert_h
        self.length = float(self.s[-1] - self._EXT)

    def pose(self, s: np.ndarray, lateral: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.interp(s, self.s, self.pts[:, 0])
        y = np.interp(s, self.s, self.pts[:, 1])
        h = np.interp(s, self.s, self.h)
        x = x - np.sin(h) * lateral
        y = y + np.cos(h) * lateral
        return x, y, h


def _kinematics(s0: float, v0: float, a: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constant-acceleration arc length and speed with speed clamped at zero."""
    v = v0 + a * t
    if a == 0.0:
        return s0 + v0 * t, np.full_like(t, v0)
    t_stop = -v0 / a
    s = s0 + v0 * t + 0.5 * a * t**2
    if a < 0:
        past = t > t_stop
        s = np.where(past, s0 + v0 * t_stop + 0.5 * a * t_stop**2, s)
    else:
        past = t < t_stop
        s = np.where(past, s0 + v0 * t_stop + 0.5 * a * t_stop**2, s)
    return s, np.where(past, 0.0, v)


def _bezier(p0, d0, p3, d1, n=40):
    k = 0.5 * float(np.linalg.norm(p3 - p0))
    p1 = p0 + k * d0
    p2 = p3 - k * d1
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


# ---------------------------------------------------------------------------
# road network


@dataclass
class _Network:
    lane_pts: dict[str, np.ndarray] = field(default_factory=dict)
    successors: dict[str, set[str]] = field(default_factory=dict)
    boundaries: list[np.ndarray] = field(default_factory=list)
    crosswalks: list[np.ndarray] = field(default_factory=list)
    sidewalks: list[np.ndarray] = field(default_factory=list)
    # (arm, lane) -> incoming segment ids ordered far-to-near
    incoming: dict[tuple[str, int], list[str]] = field(default_factory=dict)
    # (arm, lane) -> outgoing segment ids ordered near-to-far
    outgoing: dict[tuple[str, int], list[str]] = field(default_factory=dict)
    # (arm, lane) -> [(connector id, target arm, target lane)]
    branches: dict[tuple[str, int], list[tuple[str, str, int]]] = field(default_factory=dict)
    box: float = 0.0


def _turn(arm_from: str, arm_to: str) -> float:
    return wrap_angle(_ARMS[arm_to] - (_ARMS[arm_from] + math.pi))


def _build_network(p: GenParams) -> _Network:
    net = _Network()
    arms = _LAYOUT_ARMS[p.layout]
    L, w = p.lanes_per_arm, p.lane_width
    half = L * w
    box = half + 3.0 if p.layout is not Layout.STRAIGHT else 0.5
    net.box = box
    n_seg = int(math.ceil(p.arm_length / p.segment_length - 1e-9))
    edges = np.linspace(box, box + p.arm_length, n_seg + 1)

    for arm in arms:
        th = _ARMS[arm]
        u = np.array([math.cos(th), math.sin(th)])
        n = np.array([-math.sin(th), math.cos(th)])
        for i in range(L):
            off_out = -n * (i + 0.5) * w
            off_in = n * (i + 0.5) * w
            out_ids, in_ids = [], []
            for j in range(n_seg):
                oid = f"{arm}_out{i}_s{j}"
                net.lane_pts[oid] = np.array([edges[j] * u + off_out, edges[j + 1] * u + off_out])
                out_ids.append(oid)
            for j in reversed(range(n_seg)):
                iid = f"{arm}_in{i}_s{j}"
                net.lane_pts[iid] = np.array([edges[j + 1] * u + off_in, edges[j] * u + off_in])
                in_ids.append(iid)
            for a, b in zip(out_ids[:-1], out_ids[1:]):
                net.successors.setdefault(a, set()).add(b)
            for a, b in zip(in_ids[:-1], in_ids[1:]):
                net.successors.setdefault(a, set()).add(b)
            net.outgoing[(arm, i)] = out_ids
            net.incoming[(arm, i)] = in_ids
        for side in (-1.0, 1.0):
            edge_off = side * n * half
            for j in range(n_seg):
                net.boundaries.append(np.array([edges[j] * u + edge_off, edges[j + 1] * u + edge_off]))
            walk_off = side * n * (half + 2.0)
            net.sidewalks.append(np.array([(box + 2.0) * u + walk_off, (box + 60.0) * u + walk_off]))
        if p.crosswalks and p.layout is not Layout.STRAIGHT:
            r = box + 1.5
            net.crosswalks.append(np.array([r * u - n * (half + 1.0), r * u + n * (half + 1.0)]))

    if p.layout is not Layout.STRAIGHT:
        for arm in set(_ARMS) - set(arms):
            th = _ARMS[arm]
            u = np.array([math.cos(th), math.sin(th)])
            n = np.array([-math.sin(th), math.cos(th)])
            net.boundaries.append(np.array([box * u - n * box, box * u + n * box]))

    for a in arms:
        for b in arms:
            if a == b:
                continue
            turn = _turn(a, b)
            for i in range(L):
                if abs(turn) < 1e-6:
                    targets = [i]
                elif turn > 0:  # left turn from the leftmost lane
                    targets = [0] if i == 0 else []
                else:  # right turn from the rightmost lane
                    targets = [L - 1] if i == L - 1 else []
                for k in targets:
                    src = net.incoming[(a, i)][-1]
                    dst = net.outgoing[(b, k)][0]
                    p0 = net.lane_pts[src][-1]
                    p3 = net.lane_pts[dst][0]
                    d0 = -np.array([math.cos(_ARMS[a]), math.sin(_ARMS[a])])
                    d1 = np.array([math.cos(_ARMS[b]), math.sin(_ARMS[b])])
                    cid = f"{a}{i}_to_{b}{k}"
                    net.lane_pts[cid] = _bezier(p0, d0, p3, d1) if abs(turn) > 1e-6 else np.array([p0, p3])
                    net.successors.setdefault(src, set()).add(cid)
                    net.successors.setdefault(cid, set()).add(dst)
                    net.branches.setdefault((a, i), []).append((cid, b, k))
    for k in net.branches:
        net.branches[k].sort()
    return net


def _lane_path(net: _Network, arm: str, lane: int, branch: tuple[str, str, int]) -> tuple[_Path, float]:
    """Path through the intersection; returns it with the arc length of the stop line."""
    cid, b, k = branch
    chunks = [net.lane_pts[l] for l in net.incoming[(arm, lane)]]
    stop = float(sum(np.linalg.norm(c[-1] - c[0]) for c in chunks))
    chunks.append(net.lane_pts[cid])
    chunks += [net.lane_pts[l] for l in net.outgoing[(b, k)]]
    return _Path(np.vstack(chunks)), stop


# ---------------------------------------------------------------------------
# agents


_T = np.arange(-(HISTORY_STEPS - 1), FUTURE_STEPS + 1) * DT  # 91 stamps, t=0 is the last history step


def _track(agent_id, agent_type, extent, path: _Path, s0, v0, a, rng, jitter) -> AgentTrack:
    s, v = _kinematics(s0, v0, a, _T)
    amp = rng.uniform(0.0, 0.5) * jitter
    centre = rng.uniform(-0.5, 0.5) * jitter
    omega = rng.uniform(0.3, 1.2)
    phase = rng.uniform(0.0, 2 * math.pi)
    lat = centre + amp * np.sin(omega * _T + phase)
    dlat = amp * omega * np.cos(omega * _T + phase)
    x, y, h = path.pose(s, lat)
    h = wrap_angle(h + np.arctan2(dlat, np.maximum(v, 0.5)))
    hist = np.stack([x, y, h, v, np.ones_like(x)], axis=1)[:HISTORY_STEPS]
    fut = np.stack([x, y, h, np.ones_like(x)], axis=1)[HISTORY_STEPS:]
    return AgentTrack(agent_id, agent_type, extent, hist, fut)


def _accel(rng, p: GenParams) -> float:
    return float(rng.uniform(-p.max_accel, p.max_accel))


def _place_lane_agent(net, rng, p, arms, speed, near, far):
    lanes = sorted(k for k in net.branches if k[0] in arms)
    arm, lane = lanes[rng.integers(len(lanes))]
    br = net.branches[(arm, lane)]
    branch = br[rng.integers(len(br))]
    path, stop = _lane_path(net, arm, lane, branch)
    d0 = rng.uniform(near, far)
    return path, stop - d0, float(rng.uniform(*speed))


def _transform(xy, rot, shift):
    c, s = math.cos(rot), math.sin(rot)
    return np.stack([c * xy[..., 0] - s * xy[..., 1] + shift[0], s * xy[..., 0] + c * xy[..., 1] + shift[1]], -1)


def _q_xy(a):
    # micrometre grid keeps the JSON compact
    return np.round(a, 6)


def _q_heading(h):
    return wrap_angle(np.round(wrap_angle(h), 9))


def _move_track(t: AgentTrack, rot, shift) -> AgentTrack:
    hist = t.history.copy()
    fut = t.future_gt.copy()
    hist[:, :2] = _q_xy(_transform(hist[:, :2], rot, shift))
    fut[:, :2] = _q_xy(_transform(fut[:, :2], rot, shift))
    hist[:, 2] = _q_heading(hist[:, 2] + rot)
    fut[:, 2] = _q_heading(fut[:, 2] + rot)
    hist[:, 3] = np.round(hist[:, 3], 6)
    ext = (round(t.extent[0], 6), round(t.extent[1], 6))
    return AgentTrack(t.id, t.type, ext, hist, fut)


def _full_states(t: AgentTrack) -> np.ndarray:
    return np.concatenate([t.history[:, :3], t.future_gt[:, :3]])


def ego_branch_options(p: GenParams) -> int:
    """Largest number of branch alternatives an ego lane offers in this layout."""
    net = _build_network(p)
    return max(len(v) for v in net.branches.values())


def _attempt(p: GenParams, rng: np.random.Generator, scene_id: str) -> Scene:
    net = _build_network(p)
    arms = _LAYOUT_ARMS[p.layout]
    candidates = sorted(k for k, v in net.branches.items() if len(v) >= max(p.min_branches, 1))
    if not candidates:
        raise InfeasibleLayout(
            f"{p.layout.value} with {p.lanes_per_arm} lane(s) per arm offers fewer than {p.min_branches} branches"
        )
    if p.layout is Layout.STRAIGHT:
        candidates = [k for k in candidates if k[0] == "W"]
    ego_arm, ego_lane = candidates[rng.integers(len(candidates))]
    options = net.branches[(ego_arm, ego_lane)]
    ego_branch = options[rng.integers(len(options))]
    ego_path, stop = _lane_path(net, ego_arm, ego_lane, ego_branch)
    ego_d0 = rng.uniform(6.0, 30.0)
    ego_v = float(rng.uniform(*p.ego_speed))
    tracks = [
        _track("ego", AgentType.VEHICLE, (4.7, 1.9), ego_path, stop - ego_d0, ego_v, _accel(rng, p), rng,
               p.lateral_jitter)
    ]

    def clear(track: AgentTrack) -> bool:
        # agents are not reactive, so reject placements whose boxes ever touch another's
        here = track.history[-1, :2]
        if any(np.linalg.norm(o.history[-1, :2] - here) <= 6.0 for o in tracks):
            return False
        xyh = _full_states(track)
        for o in tracks:
            other = _full_states(o)
            if boxes_overlap(xyh[:, :2], xyh[:, 2], track.extent, other[:, :2], other[:, 2], o.extent).any():
                return False
        return True

    def add(make):
        for _ in range(50):
            t = make()
            if clear(t):
                tracks.append(t)
                return

    for i in range(p.n_vehicles - 1):
        def make(i=i):
            path, s0, v = _place_lane_agent(net, rng, p, arms, p.vehicle_speed, -15.0, 60.0)
            ext = (float(rng.uniform(4.2, 5.2)), float(rng.uniform(1.7, 2.0)))
            return _track(f"veh{i}", AgentType.VEHICLE, ext, path, s0, v, _accel(rng, p), rng, p.lateral_jitter)
        add(make)
    for i in range(p.n_cyclists):
        def make(i=i):
            path, s0, v = _place_lane_agent(net, rng, p, arms, p.cyclist_speed, -10.0, 40.0)
            # keep right of the lane centre
            track = _track(f"cyc{i}", AgentType.CYCLIST, (1.8, 0.6), _shift_path(path, -0.9), s0, v,
                           0.5 * _accel(rng, p), rng, p.lateral_jitter)
            return track
        add(make)
    for i in range(p.n_pedestrians):
        def make(i=i):
            path = _pedestrian_path(net, rng)
            v = float(rng.uniform(*p.pedestrian_speed))
            s0 = float(rng.uniform(2.0, 12.0))
            return _track(f"ped{i}", AgentType.PEDESTRIAN, (0.5, 0.5), path, s0, v, 0.25 * _accel(rng, p), rng,
                          0.5 * p.lateral_jitter)
        add(make)

    # goal near the far end of the ego's exit lane
    exit_ids = net.outgoing[(ego_branch[1], ego_branch[2])]
    goal_r = net.box + p.arm_length - 0.3 * p.segment_length
    gth = _ARMS[ego_branch[1]]
    gu = np.array([math.cos(gth), math.sin(gth)])
    gn = np.array([-math.sin(gth), math.cos(gth)])
    goal_xy = goal_r * gu - gn * (ego_branch[2] + 0.5) * p.lane_width
    goal_seg = min(int((goal_r - net.box) // p.segment_length), len(exit_ids) - 1)
    goal_lane = exit_ids[goal_seg]

    rot = float(rng.uniform(-math.pi, math.pi))
    shift = rng.uniform(-1000.0, 1000.0, size=2)

    polylines = []
    lanes = {}
    for lid in sorted(net.lane_pts):
        pid = f"cl_{lid}"
        polylines.append(Polyline(pid, PolylineClass.LANE_CENTERLINE,
                                  _q_xy(resample_polyline(_transform(net.lane_pts[lid], rot, shift), POLYLINE_POINTS))))
        lanes[lid] = pid
    for j, b in enumerate(net.boundaries):
        polylines.append(Polyline(f"rb_{j}", PolylineClass.ROAD_BOUNDARY,
                                  _q_xy(resample_polyline(_transform(b, rot, shift), POLYLINE_POINTS))))
    for j, c in enumerate(net.crosswalks):
        polylines.append(Polyline(f"cw_{j}", PolylineClass.CROSSWALK,
                                  _q_xy(resample_polyline(_transform(c, rot, shift), POLYLINE_POINTS))))

    graph = LaneGraph(lanes, {k: frozenset(v) for k, v in net.successors.items()}, goal_lane)
    gxy = _q_xy(_transform(goal_xy, rot, shift))
    scene = Scene(
        id=scene_id,
        polylines=tuple(polylines),
        lane_graph=graph,
        agents=tuple(_move_track(t, rot, shift) for t in tracks),
        ego_id="ego",
        goal=Pose2D(gxy[0], gxy[1], _q_heading(gth + rot)),
        route_lane_ids=frozenset(route_lanes(graph)),
    )
    return mark_route_polylines(scene)


def _shift_path(path: _Path, lateral: float) -> _Path:
    n = np.stack([-np.sin(path.h), np.cos(path.h)], axis=1)
    inner = path.pts[1:-1] + lateral * n[1:-1]
    return _Path(inner)


def _pedestrian_path(net: _Network, rng) -> _Path:
    if net.crosswalks and rng.uniform() < 0.5:
        cw = net.crosswalks[rng.integers(len(net.crosswalks))]
        a, b = (cw[0], cw[1]) if rng.uniform() < 0.5 else (cw[1], cw[0])
        d = (b - a) / np.linalg.norm(b - a)
        return _Path(np.array([a - 4.0 * d, b + 30.0 * d]))
    sw = net.sidewalks[rng.integers(len(net.sidewalks))]
    return _Path(sw if rng.uniform() < 0.5 else sw[::-1])


def gen_scene(p: GenParams, scene_id: str | None = None) -> Scene:
    """Generate one scene; the seed in ``p`` determines every byte of the output."""
    rng = np.random.default_rng(p.seed)
    sid = scene_id or f"{p.layout.value}-{p.seed}"
    last = []
    for _ in range(20):
        s = _attempt(p, rng, sid)
        last = validate_scene(s)
        if not last:
            return s
    raise InfeasibleLayout(f"could not generate a valid scene for seed {p.seed}: {last}")


# ---------------------------------------------------------------------------
# datasets


def scene_seeds(n: int, seed: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def gen_dataset(n: int, p: GenParams, seed: int, path, threads: int = 1) -> tuple[Path, Path]:
    """Write ``n`` scenes as JSON Lines to ``path`` plus ``<path>.manifest.json``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = scene_seeds(n, seed)
    jobs = [(dataclasses.replace(p, seed=s), f"scene-{i:05d}") for i, s in enumerate(seeds)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as ex:
            lines = list(ex.map(_gen_line, jobs, chunksize=8))
    else:
        lines = [_gen_line(j) for j in jobs]
    data = "".join(l + "\n" for l in lines).encode("utf-8")
    path = Path(path)
    atomic_write(path, data)
    manifest = {
        "params": p.to_dict(),
        "seed": seed,
        "count": n,
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    mpath = path.with_name(path.name + ".manifest.json")
    atomic_write(mpath, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return path, mpath


def _gen_line(job) -> str:
    p, sid = job
    return dumps_scene(gen_scene(p, sid))


def split_dataset(path, ratios=(0.8, 0.1, 0.1), seed: int = 0, out_dir=None,
                  names=("train", "val", "test")) -> list[Path]:
    """Disjoint, exhaustive, seed-deterministic split of a JSONL file."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(names) or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be {len(names)} non-negative values summing to 1, got {ratios}")
    path = Path(path)
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
    n = len(lines)
    sizes = [int(round(r * n)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    if sizes[-1] < 0:
        raise BadRatios("ratios produce negative split size")
    order = np.random.default_rng(seed).permutation(n)
    out_dir = Path(out_dir) if out_dir else path.parent
    outs, start = [], 0
    for name, size in zip(names, sizes):
        idx = np.sort(order[start:start + size])
        start += size
        target = out_dir / f"{path.stem}.{name}.jsonl"
        atomic_write(target, "".join(lines[i] + "\n" for i in idx).encode("utf-8"))
        outs.append(target)
    return outs
