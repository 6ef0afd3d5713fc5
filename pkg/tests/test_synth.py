import json

import numpy as np
import pytest

from navfuse.errors import BadRatios, InfeasibleLayout
from navfuse.route import lateral_distance_to_route, route_geometry
from navfuse.scene import AgentType, dumps_scene, read_jsonl, validate_scene
from navfuse.synth import GenParams, Layout, ego_branch_options, gen_dataset, gen_scene, split_dataset


def test_same_seed_same_bytes():
    p = GenParams(layout=Layout.FOUR_WAY, seed=7)
    assert dumps_scene(gen_scene(p)) == dumps_scene(gen_scene(p))
    assert dumps_scene(gen_scene(p)) != dumps_scene(gen_scene(GenParams(seed=8)))


@pytest.mark.parametrize("layout", list(Layout))
def test_layouts_generate_valid_scenes(layout):
    for seed in range(5):
        s = gen_scene(GenParams(layout=layout, seed=seed))
        assert validate_scene(s) == []
        ego = s.ego
        # ego follows its route branch
        assert lateral_distance_to_route(ego.future_gt[-1, :2], route_geometry(s)) < 0.5
        # goal beyond every endpoint and beyond 1.5 x (max ego speed x 8 s)
        start = ego.history[-1, :2]
        goal_d = np.hypot(*(s.goal.xy - start))
        assert goal_d > max(np.hypot(*(a.future_gt[-1, :2] - start)) for a in s.agents)
        assert goal_d >= 1.5 * 11.0 * 8.0


def test_ground_truth_is_kinematically_continuous(scenes):
    for s in scenes:
        for a in s.agents:
            xy = np.concatenate([a.history[:, :2], a.future_gt[:, :2]])
            step = np.linalg.norm(np.diff(xy, axis=0), axis=1)
            assert step.max() < 2.0  # < 20 m/s at 10 Hz, no jumps at the history/future seam
            assert np.abs(np.diff(step)).max() < 0.05


@pytest.mark.parametrize("layout", [Layout.FOUR_WAY, Layout.T_INTERSECTION])
def test_intersections_offer_branch_choices(layout):
    p = GenParams(layout=layout, min_branches=2)
    assert ego_branch_options(p) >= 2
    for seed in range(5):
        s = gen_scene(GenParams(layout=layout, min_branches=2, seed=seed))
        g = s.lane_graph
        assert any(len(g.successors_of(l)) >= 2 for l in s.route_lane_ids)


def test_infeasible_branch_demand():
    with pytest.raises(InfeasibleLayout):
        gen_scene(GenParams(layout=Layout.STRAIGHT, min_branches=2))


def test_invalid_params():
    with pytest.raises(ValueError):
        GenParams(n_vehicles=0)
    with pytest.raises(ValueError):
        GenParams(n_pedestrians=-1)
    with pytest.raises(ValueError):
        GenParams.from_dict({"bogus": 1})


def test_dataset_and_manifest(tmp_path):
    p = GenParams(n_vehicles=3, n_pedestrians=1, n_cyclists=1)
    a, ma = gen_dataset(10, p, 5, tmp_path / "a.jsonl")
    b, mb = gen_dataset(10, p, 5, tmp_path / "b.jsonl")
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 10
    ja, jb = json.loads(ma.read_text()), json.loads(mb.read_text())
    assert ja == jb and ja["count"] == 10 and ja["seed"] == 5 and len(ja["sha256"]) == 64
    assert ja["params"] == p.to_dict()
    scenes = read_jsonl(a)
    assert all(validate_scene(s) == [] for s in scenes)
    assert len({s.id for s in scenes}) == 10


def test_requested_pedestrians_appear(tmp_path):
    path, _ = gen_dataset(1000, GenParams(), 11, tmp_path / "d.jsonl")
    scenes = read_jsonl(path)
    with_ped = sum(any(a.type is AgentType.PEDESTRIAN for a in s.agents) for s in scenes)
    assert with_ped >= 950


def test_split(tmp_path):
    path, _ = gen_dataset(100, GenParams(n_vehicles=1, n_pedestrians=0, n_cyclists=0), 1, tmp_path / "d.jsonl")
    outs = split_dataset(path, (0.8, 0.1, 0.1), 3)
    lines = [set(o.read_text().splitlines()) for o in outs]
    assert [len(l) for l in lines] == [80, 10, 10]
    assert set().union(*lines) == set(path.read_text().splitlines())
    assert not (lines[0] & lines[1] or lines[0] & lines[2] or lines[1] & lines[2])
    again = split_dataset(path, (0.8, 0.1, 0.1), 3, tmp_path / "again")
    assert [o.read_bytes() for o in outs] == [o.read_bytes() for o in again]
    with pytest.raises(BadRatios):
        split_dataset(path, (0.5, 0.1, 0.1), 3)
