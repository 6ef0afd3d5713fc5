import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import straight_track, toy_scene
from oracles import (
    brute_average_precision,
    brute_best_joint_mode,
    brute_is_miss,
    brute_min_metrics,
    shapely_overlap,
)
from navfuse.errors import NoValidSteps
from navfuse.evaluate import oracle_prediction
from navfuse.metrics import (
    CSV_HEADER,
    HORIZONS,
    aggregate_report,
    average_precision,
    best_joint_mode,
    boxes_overlap,
    displacement_errors,
    evaluate_dataset,
    evaluate_scene,
    heading_errors,
    is_miss,
    mean_average_precision,
    min_metrics,
    open_loop_score,
    overlap_rate,
    speed_scale,
)
from navfuse.prediction import PredictionOutput
from navfuse.scene import Pose2D


def _gt(T=80, A=1, seed=0):
    rng = np.random.default_rng(seed)
    gt = np.zeros((A, T, 4))
    gt[..., :2] = np.cumsum(rng.normal(size=(A, T, 2)), axis=1)
    gt[..., 2] = rng.uniform(-3, 3, size=(A, T))
    gt[..., 3] = 1
    return gt


def random_instance(rng, K=6, A=None, T=80):
    A = A or int(rng.integers(1, 5))
    gt = np.zeros((A, T, 4))
    gt[..., :2] = np.cumsum(rng.normal(size=(A, T, 2)), axis=1)
    gt[..., 2] = rng.uniform(-math.pi, math.pi, size=(A, T))
    gt[..., 3] = rng.uniform(size=(A, T)) < 0.9
    gt[:, 0, 3] = 1
    for h in HORIZONS:
        gt[:, h - 1, 3] = 1
    traj = gt[None, ..., :3] + rng.normal(scale=rng.uniform(0.2, 4.0), size=(K, A, T, 3))
    return traj, gt


# --- displacement -----------------------------------------------------------


def test_displacement_examples():
    gt = _gt()[0]
    assert displacement_errors(gt[:, :3], gt, 80) == (0.0, 0.0)
    off = gt[:, :3].copy()
    off[:, 1] += 1
    assert displacement_errors(off, gt, 30) == pytest.approx((1.0, 1.0))
    bad = gt.copy()
    bad[:30, 3] = 0
    with pytest.raises(NoValidSteps):
        displacement_errors(off, bad, 30)


def test_fde_uses_last_valid_step():
    gt = _gt()[0]
    gt[29, 3] = 0
    pred = gt[:, :3].copy()
    pred[28, 0] += 2.0
    assert displacement_errors(pred, gt, 30)[1] == pytest.approx(2.0)


def test_best_joint_mode_examples():
    gt = _gt(A=2)
    traj = np.repeat(gt[None, ..., :3], 6, axis=0) + 5.0
    traj[3] = gt[..., :3]
    assert best_joint_mode(traj, gt) == 3
    # mode 0 is better for agent 0, mode 1 jointly
    traj = np.repeat(gt[None, ..., :3], 2, axis=0)
    traj[0, 0, :, 0] += 0.5
    traj[0, 1, :, 0] += 10.0
    traj[1, 0, :, 0] += 1.0
    traj[1, 1, :, 0] += 1.0
    assert best_joint_mode(traj, gt) == 1 == brute_best_joint_mode(traj, gt, 80)
    assert min_metrics(traj, gt, 80)[0][0] == pytest.approx(0.5)
    # tie between modes 2 and 4
    traj = np.repeat(gt[None, ..., :3], 6, axis=0) + 3.0
    traj[2, ..., 0] -= 2.0
    traj[4, ..., 0] -= 2.0
    assert best_joint_mode(traj, gt) == 2


def test_min_metrics_examples():
    gt = _gt(A=1)
    traj = np.repeat(gt[None, ..., :3], 6, axis=0) + 2.0
    traj[5] = gt[..., :3]
    ade, fde = min_metrics(traj, gt, 80)
    assert ade[0] == 0.0 and fde[0] == 0.0


def test_min_fde_never_exceeds_best_ade_mode_fde(rng):
    for _ in range(50):
        traj, gt = random_instance(rng)
        ade, fde = min_metrics(traj, gt, 80)
        for a in range(gt.shape[0]):
            per = [displacement_errors(traj[k, a], gt[a], 80) for k in range(6)]
            k_ade = int(np.argmin([p[0] for p in per]))
            assert fde[a] <= per[k_ade][1]


def test_random_instances_match_brute_force(rng):
    for _ in range(200):
        traj, gt = random_instance(rng)
        speeds = rng.uniform(0, 15, size=gt.shape[0])
        for h in HORIZONS:
            ade, fde = min_metrics(traj, gt, h)
            bade, bfde = brute_min_metrics(traj, gt, h)
            assert np.allclose(ade, bade, rtol=0, atol=1e-12) and np.allclose(fde, bfde, rtol=0, atol=1e-12)
            assert best_joint_mode(traj, gt, h) == brute_best_joint_mode(traj, gt, h)
            assert np.array_equal(is_miss(traj, gt, h, speeds), brute_is_miss(traj, gt, h, speeds))


# --- miss rate ---------------------------------------------------------------


def test_speed_scale():
    assert speed_scale(0.0) == 0.5 and speed_scale(1.4) == 0.5
    assert speed_scale(11.0) == 1.0 and speed_scale(30.0) == 1.0
    assert speed_scale(6.2) == pytest.approx(0.75)


def test_miss_examples():
    gt = _gt(A=1)
    gt[0, :, 2] = 0.0
    traj = np.repeat(gt[None, ..., :3], 6, axis=0)
    assert not is_miss(traj, gt, 30, [15.0])[0]
    traj[..., 1] += 5.0  # 5 m lateral everywhere
    assert is_miss(traj, gt, 30, [15.0])[0]
    # v = 1 m/s halves both gates: 0.6 m lateral passes at v=15, fails at v=1
    near = np.repeat(gt[None, ..., :3], 6, axis=0)
    near[..., 1] += 0.6
    assert not is_miss(near, gt, 30, [15.0])[0]
    assert is_miss(near, gt, 30, [1.0])[0]
    bad = gt.copy()
    bad[0, 29, 3] = 0
    with pytest.raises(NoValidSteps):
        is_miss(traj, bad, 30, [1.0])


def test_miss_gate_is_in_heading_frame():
    gt = _gt(A=1)
    gt[0, 29, 2] = math.pi / 2  # heading north: longitudinal is +y
    traj = np.repeat(gt[None, ..., :3], 6, axis=0)
    traj[:, 0, 29, 1] += 1.9  # within the 2.0 m longitudinal gate
    assert not is_miss(traj, gt, 30, [11.0])[0]
    traj[:, 0, 29, :2] = gt[0, 29, :2] + [1.1, 0.0]  # beyond the 1.0 m lateral gate
    assert is_miss(traj, gt, 30, [11.0])[0]


# --- mAP -----------------------------------------------------------------------


def test_ap_examples():
    conf = [np.array([0.5, 0.2, 0.1, 0.1, 0.05, 0.05])] * 4
    top_hit = [np.array([1, 0, 0, 0, 0, 0], bool)] * 4
    assert average_precision(conf, top_hit) == pytest.approx(1.0)
    never = [np.zeros(6, bool)] * 4
    assert average_precision(conf, never) == 0.0


def test_ap_matches_brute_force(rng):
    for _ in range(200):
        n = 20
        confs, hits = [], []
        for _ in range(n):
            c = rng.dirichlet(np.ones(6))
            if rng.uniform() < 0.3:
                c = np.round(c, 1)  # force tied scores
            confs.append(c)
            hits.append(rng.uniform(size=6) < 0.3)
        assert abs(average_precision(confs, hits) - brute_average_precision(confs, hits)) < 1e-9


def test_map_skips_empty_classes():
    conf = [np.full(6, 1 / 6)]
    m, aps, empty = mean_average_precision({"vehicle": (conf, [np.ones(6, bool)]), "cyclist": ([], [])})
    assert empty == ["cyclist"] and set(aps) == {"vehicle"} and m == aps["vehicle"]


# --- overlap --------------------------------------------------------------------


def test_boxes_overlap_matches_shapely(rng):
    for _ in range(2000):
        c1, c2 = rng.uniform(-4, 4, size=(2, 2))
        h1, h2 = rng.uniform(-math.pi, math.pi, 2)
        e1, e2 = rng.uniform(0.3, 5, size=(2, 2))
        assert bool(boxes_overlap(c1, h1, e1, c2, h2, e2)) == shapely_overlap(c1, h1, e1, c2, h2, e2)


def _single(scene_agents, traj):
    frames = tuple(a.current_pose for a in scene_agents)
    return PredictionOutput(traj, np.array([0.5, 0.1, 0.1, 0.1, 0.1, 0.1]),
                            tuple(a.id for a in scene_agents), frames)


def test_overlap_examples():
    s = toy_scene()
    ego_only = s.with_(agents=(s.agents[0],))
    assert overlap_rate(oracle_prediction(ego_only), ego_only, 80) == 0.0
    # drive the ego straight into v1's ground-truth position at step 10
    pred = oracle_prediction(s)
    traj = pred.trajectories.copy()
    v1 = s.agent("v1")
    traj[0, 0, 10, :2] = v1.future_gt[10, :2] - s.ego.history[-1, :2]
    p = PredictionOutput(traj, pred.confidences, pred.agent_ids, pred.frames)
    flags = overlap_rate(p, s, 30)
    assert flags == pytest.approx(1 / len(pred.agent_ids))


def test_overlap_rate_matches_shapely_oracle(scenes, rng):
    for s in scenes[:3]:
        pred = oracle_prediction(s)
        traj = pred.trajectories + rng.normal(scale=3.0, size=pred.trajectories.shape)
        p = PredictionOutput(traj, pred.confidences, pred.agent_ids, pred.frames)
        glob = p.global_trajectories()[p.most_probable_mode]
        for h in HORIZONS:
            want = 0
            for a, aid in enumerate(p.agent_ids):
                me = s.agent(aid)
                want += any(
                    shapely_overlap(glob[a, t, :2], glob[a, t, 2], me.extent, o.future_gt[t, :2], o.future_gt[t, 2],
                                    o.extent)
                    for o in s.agents if o.id != aid for t in range(h) if o.future_gt[t, 3] > 0.5)
            assert overlap_rate(p, s, h) == want / len(p.agent_ids)


# --- heading and OLS ------------------------------------------------------------


def test_heading_error_examples():
    gt = _gt()[0]
    assert heading_errors(gt[:, :3], gt, 80) == (0.0, 0.0)
    off = gt[:, :3].copy()
    off[:, 2] += math.pi / 2
    assert heading_errors(off, gt, 80) == pytest.approx((math.pi / 2, math.pi / 2))
    g = gt.copy()
    g[:, 2] = math.pi - 0.1
    p = gt[:, :3].copy()
    p[:, 2] = -math.pi + 0.1
    assert heading_errors(p, g, 30) == pytest.approx((0.2, 0.2))


def _ego_gt():
    gt = np.zeros((80, 4))
    gt[:, 0] = np.arange(1, 81) * 1.0
    gt[:, 3] = 1
    return gt


def test_ols_anchors():
    gt = _ego_gt()
    assert open_loop_score(gt[:, :3], gt) == 100.0
    far = gt[:, :3].copy()
    far[:, 1] += 20.0
    assert open_loop_score(far, gt) == 0.0
    miss8 = gt[:, :3].copy()
    miss8[79, 1] = 20.0
    assert open_loop_score(miss8, gt) == 0.0
    # constant 4 m offset and 0.4 rad heading error: every sub-score is one half
    plug = gt[:, :3].copy()
    plug[:, 1] += 4.0
    plug[:, 2] += 0.4
    assert abs(open_loop_score(plug, gt) - 50.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 7.9), st.floats(0, 1.0), st.floats(0.0, 1.0))
def test_ols_monotone_in_errors(offset, heading, shrink):
    gt = _ego_gt()
    a = gt[:, :3].copy()
    a[:, 1] += offset
    a[:, 2] += heading
    b = gt[:, :3].copy()
    b[:, 1] += offset * shrink
    b[:, 2] += heading
    sa, sb = open_loop_score(a, gt), open_loop_score(b, gt)
    assert 0.0 <= sa <= 100.0 and sb >= sa - 1e-12


# --- reports ---------------------------------------------------------------------


def test_oracle_report_is_perfect(scenes):
    report = aggregate_report(evaluate_dataset([oracle_prediction(s) for s in scenes], scenes))
    for (h, c), vals in report.rows.items():
        assert vals["minADE"] == 0.0 and vals["minFDE"] == 0.0 and vals["MR"] == 0.0
    assert "OR" not in report.get("avg", "ego")


def test_report_structure_and_ranges(scenes, rng):
    preds = []
    for s in scenes:
        p = oracle_prediction(s)
        traj = p.trajectories + rng.normal(scale=2.0, size=p.trajectories.shape)
        preds.append(PredictionOutput(traj, rng.dirichlet(np.ones(6)), p.agent_ids, p.frames))
    results = evaluate_dataset(preds, scenes)
    rep = aggregate_report(results)
    for c in ("vehicle", "pedestrian", "cyclist", "all"):
        for k in ("mAP", "minADE", "minFDE", "MR", "OR"):
            mean = np.mean([rep.get(h, c)[k] for h in ("3", "5", "8")])
            assert abs(rep.get("avg", c)[k] - mean) < 1e-12
    for vals in rep.rows.values():
        assert vals["minADE"] >= 0 and vals["minFDE"] >= 0
        for k in ("mAP", "MR", "OR"):
            if k in vals:
                assert 0.0 <= vals[k] <= 1.0
    # order independence
    shuffled = aggregate_report(results[::-1])
    for key, vals in rep.rows.items():
        for k, v in vals.items():
            assert shuffled.rows[key][k] == pytest.approx(v, rel=1e-12, abs=1e-15)
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[-1].startswith("avg,ego,") and lines[-1].endswith(",")
    assert all(len(l.split(",")) == 7 for l in lines)


def test_single_scene_report_equals_scene_metrics(scene):
    p = oracle_prediction(scene)
    traj = p.trajectories.copy()
    traj[0, :, :, 0] += 1.5
    p = PredictionOutput(traj, p.confidences, p.agent_ids, p.frames)
    r = evaluate_scene(p, scene)
    rep = aggregate_report([r])
    ego = [a for a in r.agents if a.is_ego][0]
    assert rep.get("avg", "ego")["minFDE"] == pytest.approx(np.mean([ego.min_fde[h] for h in HORIZONS]))
    veh = [a for a in r.agents if a.cls == "vehicle"]
    assert rep.get("3", "vehicle")["minADE"] == pytest.approx(np.mean([a.min_ade[30] for a in veh]))
