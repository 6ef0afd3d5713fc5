"""Interest scoring and focal-agent selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from navfuse.errors import InsufficientTrack
from navfuse.scene import AGENT_TYPES, DT, AgentTrack, Scene, wrap_angle

MAX_FOCAL = 8
MIN_PER_TYPE = 2
_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class InterestScore:
    heading_change: float
    lateral_deviation: float
    acceleration: float
    progress: float
    total: float = float("nan")

    def components(self) -> np.ndarray:
        return np.array([self.heading_change, self.lateral_deviation, self.acceleration, self.progress])


def interest_score(track: AgentTrack, dt: float = DT) -> InterestScore:
    """Raw interest components of the ground-truth future.

    ``total`` is left as NaN; it only exists relative to the other agents of a
    scene, see :func:`scene_interest_scores`.
    """
    fut = track.future_gt
    valid = fut[:, 3] > 0.5
    idx = np.nonzero(valid)[0]
    if idx.size < 2:
        raise InsufficientTrack(f"agent {track.id}: {idx.size} valid future steps, need 2")
    pair = valid[:-1] & valid[1:]
    xy = fut[:, :2]
    step = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    dh = np.abs(wrap_angle(np.diff(fut[:, 2])))
    heading_change = float(np.sum(dh[pair]))
    progress = float(np.sum(step[pair]))

    speed = np.where(pair, step / dt, np.nan)
    dv = np.abs(np.diff(speed)) / dt
    dv = dv[np.isfinite(dv)]
    acceleration = float(dv.max()) if dv.size else 0.0

    start, end = xy[idx[0]], xy[idx[-1]]
    pts = xy[idx]
    chord = end - start
    length = math.hypot(*chord)
    if length > 0:
        lat = np.abs(chord[0] * (pts[:, 1] - start[1]) - chord[1] * (pts[:, 0] - start[0])) / length
    else:
        lat = np.linalg.norm(pts - start, axis=1)
    return InterestScore(heading_change, float(lat.max()), acceleration, progress)


def scene_interest_scores(agents, dt: float = DT) -> dict[str, InterestScore]:
    """Interest scores with totals from per-scene z-normalized components.

    Agents with fewer than two valid future steps are omitted.
    """
    raw: dict[str, InterestScore] = {}
    for a in agents:
        try:
            raw[a.id] = interest_score(a, dt)
        except InsufficientTrack:
            continue
    if not raw:
        return {}
    ids = sorted(raw)
    comp = np.stack([raw[i].components() for i in ids])
    mu = comp.mean(axis=0)
    sd = np.maximum(comp.std(axis=0), _STD_FLOOR)
    totals = ((comp - mu) / sd).sum(axis=1)
    return {i: replace(raw[i], total=float(t)) for i, t in zip(ids, totals)}


def select_focal_agents(s: Scene, max_n: int = MAX_FOCAL) -> list[str]:
    """Ego first, then up to two top-scoring agents per type, then global score order."""
    scores = scene_interest_scores(s.agents, s.dt)
    eligible = [a for a in s.agents if a.id == s.ego_id or a.history[-1, 4] > 0.5]

    def key(a: AgentTrack):
        sc = scores.get(a.id)
        total = sc.total if sc is not None else -math.inf
        return (-total, a.id)

    ranked = sorted((a for a in eligible if a.id != s.ego_id), key=key)
    chosen = [s.ego]
    for t in AGENT_TYPES:
        for a in ranked:
            if len(chosen) >= max_n or sum(c.type is t for c in chosen) >= MIN_PER_TYPE:
                break
            if a.type is t and a not in chosen:
                chosen.append(a)
    for a in ranked:
        if len(chosen) >= max_n:
            break
        if a not in chosen:
            chosen.append(a)
    return [a.id for a in chosen]
