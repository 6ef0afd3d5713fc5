from __future__ import annotations

import numpy as np
import pytest

from navfuse.scene import (
    FUTURE_STEPS,
    HISTORY_STEPS,
    AgentTrack,
    AgentType,
    LaneGraph,
    Polyline,
    PolylineClass,
    Pose2D,
    Scene,
)
from navfuse.synth import GenParams, gen_scene


def straight_track(agent_id="a", agent_type=AgentType.VEHICLE, x0=0.0, y0=0.0, heading=0.0, speed=5.0,
                   extent=(4.5, 1.8), dt=0.1) -> AgentTrack:
    """Constant-velocity track whose last history step sits at (x0, y0)."""
    t = (np.arange(HISTORY_STEPS + FUTURE_STEPS) - (HISTORY_STEPS - 1)) * dt
    x = x0 + speed * t * np.cos(heading)
    y = y0 + speed * t * np.sin(heading)
    h = np.full_like(t, heading)
    hist = np.stack([x, y, h, np.full_like(t, speed), np.ones_like(t)], 1)[:HISTORY_STEPS]
    fut = np.stack([x, y, h, np.ones_like(t)], 1)[HISTORY_STEPS:]
    return AgentTrack(agent_id, agent_type, extent, hist, fut)


def line(pid, x0, y0, x1, y1, cls=PolylineClass.LANE_CENTERLINE, on_route=False) -> Polyline:
    pts = np.stack([np.linspace(x0, x1, 20), np.linspace(y0, y1, 20)], 1)
    return Polyline(pid, cls, pts, on_route)


def toy_scene(**kw) -> Scene:
    """Two parallel lanes along +x; the ego drives the lower one (on the route)."""
    polys = (line("p0", -50, 0, 150, 0, on_route=True), line("p1", -50, 3.5, 150, 3.5),
             line("rb", -50, -2, 150, -2, PolylineClass.ROAD_BOUNDARY))
    graph = LaneGraph({"L0": "p0", "L1": "p1"}, {"L0": frozenset(), "L1": frozenset()}, "L0")
    agents = (straight_track("ego", speed=5.0), straight_track("v1", y0=3.5, x0=10.0, speed=4.0),
              straight_track("ped", AgentType.PEDESTRIAN, x0=5.0, y0=-4.0, heading=np.pi / 2, speed=1.0,
                             extent=(0.5, 0.5)))
    base = dict(id="toy", polylines=polys, lane_graph=graph, agents=agents, ego_id="ego",
                goal=Pose2D(140.0, 0.0, 0.0), route_lane_ids=frozenset({"L0"}))
    base.update(kw)
    return Scene(**base)


@pytest.fixture(scope="session")
def scene():
    return gen_scene(GenParams(seed=7))


@pytest.fixture(scope="session")
def scenes():
    return [gen_scene(GenParams(seed=s), f"s{s}") for s in range(6)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
