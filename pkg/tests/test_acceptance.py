"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line."""
import dataclasses
import math
import time

import numpy as np
import pytest
import yaml

from conftest import toy_scene
from oracles import (
    brute_average_precision,
    brute_best_joint_mode,
    brute_is_miss,
    brute_min_metrics,
    random_dag,
    robust_reference,
    route_by_enumeration,
    shapely_overlap,
)
from test_predictor import SMALL, _predict, rigid
from navfuse.cli import main
from navfuse.evaluate import oracle_prediction
from navfuse.metrics import (
    HORIZONS,
    average_precision,
    best_joint_mode,
    boxes_overlap,
    is_miss,
    min_metrics,
    open_loop_score,
)
from navfuse.prediction import PredictionOutput
from navfuse.predictor import ModelConfig, TrainConfig, Variant
from navfuse.predictor.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from navfuse.predictor.gradcheck import run_tiny, tiny_scenes
from navfuse.predictor.model import init_params
from navfuse.predictor.train import prepare, train
from navfuse.robust import navigation_loss, robust_grad, robust_value
from navfuse.route import route_geometry, route_lanes
from navfuse.scene import read_jsonl
from navfuse.study import compare_variants
from navfuse.synth import GenParams, gen_dataset


def verdict(capsys, n, checks: dict, detail: str = ""):
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  {detail}"
    if failed:
        line += f"  failed: {', '.join(failed)}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_1_robust_values(capsys):
    t = time.perf_counter()
    ref = float(robust_reference(3.0, -5, 3))
    x = np.linspace(0, 50, 10_000)
    f = robust_value(x)
    checks = {
        "f(0)=0": robust_value(0.0) == 0.0,
        "f(3) vs high precision": abs(robust_value(3.0) - ref) <= 1e-6,
        "f(1e6)->1.4": abs(robust_value(1e6) - 1.4) <= 1e-3,
        "even": np.array_equal(f, robust_value(-x)),
        "monotone": bool(np.all(np.diff(f) >= 0)),
    }
    dt = time.perf_counter() - t
    checks["runtime < 1 s"] = dt < 1.0
    verdict(capsys, 1, checks, f"f(3)={robust_value(3.0):.12f} ref={ref:.12f} ({dt:.3f} s)")


def test_criterion_2_gradients(capsys):
    t = time.perf_counter()
    xs = np.linspace(0.1, 10.0, 1000)
    h = 1e-5
    num = (robust_value(xs + h) - robust_value(xs - h)) / (2 * h)
    rob = float(np.max(np.abs(robust_grad(xs) - num) / np.abs(num)))
    scenes = tiny_scenes(0, 1)
    model = {v.value: run_tiny(scenes, v).max_rel_error for v in Variant}
    dt = time.perf_counter() - t
    checks = {"robust_grad <= 1e-8": rob <= 1e-8, "runtime < 2 min": dt < 120}
    checks.update({f"{k} <= 1e-4": e <= 1e-4 for k, e in model.items()})
    detail = f"robust {rob:.1e}; " + ", ".join(f"{k} {e:.1e}" for k, e in model.items()) + f" ({dt:.0f} s)"
    verdict(capsys, 2, checks, detail)


def _instance(rng):
    K, A, T = 6, int(rng.integers(1, 5)), 80
    gt = np.zeros((A, T, 4))
    gt[..., :2] = np.cumsum(rng.normal(size=(A, T, 2)), axis=1)
    gt[..., 2] = rng.uniform(-math.pi, math.pi, size=(A, T))
    gt[..., 3] = rng.uniform(size=(A, T)) < 0.9
    gt[:, 0, 3] = 1
    for hz in HORIZONS:
        gt[:, hz - 1, 3] = 1
    traj = gt[None, ..., :3] + rng.normal(scale=rng.uniform(0.2, 4.0), size=(K, A, T, 3))
    return traj, gt


def test_criterion_3_metric_oracles(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(20240)
    bad = {"minADE/minFDE": 0, "best_joint_mode": 0, "is_miss": 0, "mAP": 0, "OR": 0}
    worst = 0.0
    for _ in range(200):
        traj, gt = _instance(rng)
        speeds = rng.uniform(0, 15, size=gt.shape[0])
        for hz in HORIZONS:
            ade, fde = min_metrics(traj, gt, hz)
            bade, bfde = brute_min_metrics(traj, gt, hz)
            diff = max(float(np.max(np.abs(ade - bade))), float(np.max(np.abs(fde - bfde))))
            worst = max(worst, diff)
            bad["minADE/minFDE"] += diff > 1e-12
            bad["best_joint_mode"] += best_joint_mode(traj, gt, hz) != brute_best_joint_mode(traj, gt, hz)
            bad["is_miss"] += not np.array_equal(is_miss(traj, gt, hz, speeds), brute_is_miss(traj, gt, hz, speeds))
        confs = [rng.dirichlet(np.ones(6)) for _ in range(10)]
        confs = [np.round(c, 1) if rng.uniform() < 0.3 else c for c in confs]
        hits = [rng.uniform(size=6) < 0.3 for _ in range(10)]
        bad["mAP"] += abs(average_precision(confs, hits) - brute_average_precision(confs, hits)) > 1e-12
        for _ in range(10):
            c1, c2 = rng.uniform(-4, 4, size=(2, 2))
            h1, h2 = rng.uniform(-math.pi, math.pi, 2)
            e1, e2 = rng.uniform(0.3, 5, size=(2, 2))
            bad["OR"] += bool(boxes_overlap(c1, h1, e1, c2, h2, e2)) != shapely_overlap(c1, h1, e1, c2, h2, e2)
    dt = time.perf_counter() - t
    checks = {k: v == 0 for k, v in bad.items()}
    checks["runtime < 1 min"] = dt < 60
    verdict(capsys, 3, checks, f"200 instances, max displacement diff {worst:.1e} ({dt:.1f} s)")


def test_criterion_4_ols_anchors(capsys):
    gt = np.zeros((80, 4))
    gt[:, 0] = np.arange(1, 81, dtype=float)
    gt[:, 3] = 1
    perfect = open_loop_score(gt[:, :3], gt)
    miss = gt[:, :3].copy()
    miss[:, 1] += 20.0
    plug = gt[:, :3].copy()
    plug[:, 1] += 4.0
    plug[:, 2] += 0.4
    half = open_loop_score(plug, gt)
    checks = {"perfect=100": perfect == 100.0, "all-miss=0": open_loop_score(miss, gt) == 0.0,
              "plug=50": abs(half - 50.0) <= 1e-9}
    verdict(capsys, 4, checks, f"perfect {perfect}, plug {half!r}")


def test_criterion_5_route_membership(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    wrong = sum(route_lanes(g) != route_by_enumeration(g) for g in (random_dag(rng, 10) for _ in range(500)))
    dt = time.perf_counter() - t
    verdict(capsys, 5, {"500 DAGs exact": wrong == 0, "runtime < 10 s": dt < 10}, f"{wrong} mismatches ({dt:.2f} s)")


@pytest.mark.slow
def test_criterion_6_direction_of_effect(capsys, tmp_path):
    t = time.perf_counter()
    p = GenParams(min_branches=2)
    tr_path, _ = gen_dataset(1000, p, 1, tmp_path / "train.jsonl", threads=1)
    te_path, _ = gen_dataset(500, p, 2, tmp_path / "test.jsonl", threads=1)
    train_scenes, test_scenes = read_jsonl(tr_path), read_jsonl(te_path)
    res = compare_variants(train_scenes, test_scenes, [Variant.BASELINE, Variant.A1], [0, 1, 2],
                           ModelConfig(), TrainConfig(epochs=20, batch_size=16))
    base = float(np.mean([r.ego_min_fde for r in res[Variant.BASELINE]]))
    a1 = float(np.mean([r.ego_min_fde for r in res[Variant.A1]]))
    mb = np.mean([r.route_mass for r in res[Variant.BASELINE]], axis=0)
    ma = np.mean([r.route_mass for r in res[Variant.A1]], axis=0)
    share = float(np.mean(ma > mb))
    dt = time.perf_counter() - t
    checks = {"(a) A1 <= 0.95 x baseline": a1 <= 0.95 * base, "(b) mass share >= 0.6": share >= 0.6,
              "runtime <= 30 min per variant": dt <= 2 * 30 * 60}
    detail = (f"ego minFDE baseline {base:.3f} A1 {a1:.3f} (ratio {a1 / base:.3f}); "
              f"A1 mass higher in {share:.1%} of {len(mb)} scenes ({dt / 60:.1f} min)")
    verdict(capsys, 6, checks, detail)


def test_criterion_7_lr_schedule(capsys, scene):
    feats = prepare([scene], Variant.BASELINE, SMALL)
    log = train(feats, SMALL, TrainConfig(epochs=41, batch_size=1), Variant.BASELINE).log
    lrs = [r["lr"] for r in log]
    checks = {"2e-4 for 1..20": all(v == 2e-4 for v in lrs[:20]),
              "1e-4 for 21..40": all(v == 1e-4 for v in lrs[20:40]), "5e-5 at 41": lrs[40] == 5e-5}
    verdict(capsys, 7, checks, f"lr at epochs 20/21/40/41: {lrs[19]}, {lrs[20]}, {lrs[39]}, {lrs[40]}")


def _pipeline(root, tag):
    out = root / tag
    cfg = {
        "seed": 11, "threads": 1,
        "gen": {"n": 10, "split": [0.6, 0.2, 0.2]},
        "train": {"variant": "A2", "dataset": f"{tag}/data/dataset.train.jsonl",
                  "val_dataset": f"{tag}/data/dataset.val.jsonl",
                  "model": dataclasses.asdict(SMALL), "train": {"epochs": 2, "batch_size": 3}},
        "eval": {"checkpoint": f"{tag}/train/model.ckpt", "dataset": f"{tag}/data/dataset.test.jsonl"},
    }
    path = root / f"{tag}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    codes = [main([cmd, "--config", str(path), "--out", str(out / sub), "--threads", "1"])
             for cmd, sub in (("gen-data", "data"), ("train", "train"), ("eval-pred", "eval"), ("eval-ols", "ols"))]
    return out, codes


def test_criterion_8_determinism(capsys, tmp_path):
    a, ca = _pipeline(tmp_path, "a")
    b, cb = _pipeline(tmp_path, "b")
    files = ["data/dataset.jsonl", "data/dataset.train.jsonl", "data/dataset.val.jsonl", "data/dataset.test.jsonl",
             "train/train_log.csv", "train/model.ckpt", "eval/metrics.csv", "ols/ols.csv"]
    checks = {"exit codes": ca == cb == [0, 0, 0, 0]}
    checks.update({f: (a / f).read_bytes() == (b / f).read_bytes() for f in files})
    verdict(capsys, 8, checks, f"{len(files)} files compared")


def test_criterion_9_invariance(capsys, scene, tmp_path):
    translation = 0.0
    permutation = 0.0
    for v in Variant:
        params = init_params(SMALL, v, 0)
        ref = _predict(scene, v, params)
        moved = _predict(rigid(scene, 512.0, -1024.0, 0.0), v, params)
        translation = max(translation, float(np.max(np.abs(moved.trajectories - ref.trajectories))))
        perm = scene.with_(polylines=tuple(np.random.default_rng(3).permutation(np.array(scene.polylines,
                                                                                          dtype=object))))
        got = _predict(perm, v, params)
        permutation = max(permutation, float(np.max(np.abs(got.trajectories - ref.trajectories))))
    s = toy_scene()
    pred = oracle_prediction(s)
    traj = pred.trajectories.copy()
    traj[3, 0, -1, 1] += 2.5
    conf = np.array([0.1, 0.1, 0.1, 0.4, 0.2, 0.1])
    route = route_geometry(s)
    ref_loss = navigation_loss(PredictionOutput(traj, conf, pred.agent_ids, pred.frames), route)
    rescaled = [navigation_loss(PredictionOutput(traj, conf * k, pred.agent_ids, pred.frames), route)
                for k in (1e-3, 7.0, 1e5)]
    params = init_params(SMALL, Variant.A3, 4)
    ck = Checkpoint(params, SMALL, TrainConfig(), Variant.A3, 4)
    back = load_checkpoint(save_checkpoint(ck, tmp_path / "m.ckpt"))
    checks = {
        "translation <= 1e-6": translation <= 1e-6,
        "polyline permutation <= 1e-9": permutation <= 1e-9,
        "confidence rescaling exact": all(r[0] == ref_loss[0] and np.array_equal(r[1], ref_loss[1])
                                          for r in rescaled),
        "checkpoint bit-exact": list(back.params) == list(params)
        and all(np.array_equal(back.params[k], params[k]) for k in params),
    }
    verdict(capsys, 9, checks, f"translation {translation:.1e}, permutation {permutation:.1e}")
