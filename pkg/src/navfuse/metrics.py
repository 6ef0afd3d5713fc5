"""Prediction metrics (mAP, minADE, minFDE, MR, OR) at 3/5/8 s and the open-loop score.

Array conventions: a scene prediction is ``(K, A, T, 3)`` (x, y, heading) and
ground truth is ``(A, T, 4)`` (x, y, heading, valid), both in the same frame.
Horizons are given in steps at 10 Hz; step ``h`` means indices ``0 .. h-1``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from navfuse.errors import NoValidSteps
from navfuse.prediction import PredictionOutput
from navfuse.scene import AGENT_TYPES, AgentType, Scene, to_agent_frame, wrap_angle

HORIZONS = (30, 50, 80)
HORIZON_SECONDS = {30: 3, 50: 5, 80: 8}
LAT_GATE = {30: 1.0, 50: 1.8, 80: 3.0}
LON_GATE = {30: 2.0, 50: 3.6, 80: 6.0}

OLS_THRESHOLDS = {"ade": 8.0, "fde": 8.0, "ahe": 0.8, "fhe": 0.8}
OLS_WEIGHTS = {"ade": 1.0, "fde": 1.0, "ahe": 2.0, "fhe": 2.0}
OLS_MISS = {30: 6.0, 50: 8.0, 80: 16.0}

CLASS_NAMES = {AgentType.VEHICLE: "vehicle", AgentType.PEDESTRIAN: "pedestrian", AgentType.CYCLIST: "cyclist"}
CSV_HEADER = ("horizon", "class", "mAP", "minADE", "minFDE", "MR", "OR")


def _valid_upto(gt: np.ndarray, horizon: int) -> np.ndarray:
    return gt[..., :horizon, 3] > 0.5


# ---------------------------------------------------------------------------
# displacement


def best_joint_mode(traj, gt, horizon: int = HORIZONS[-1]) -> int:
    """Mode with the lowest mean displacement over all focal agents and valid steps."""
    traj = np.asarray(traj)
    gt = np.asarray(gt)
    valid = _valid_upto(gt, horizon)
    if not valid.any():
        raise NoValidSteps("no valid ground-truth step within the horizon")
    d = np.linalg.norm(traj[:, :, :horizon, :2] - gt[None, :, :horizon, :2], axis=-1)
    mean = (d * valid).sum(axis=(1, 2)) / valid.sum()
    return int(np.argmin(mean))


def displacement_errors(mode_traj, gt, horizon: int) -> tuple[float, float]:
    """(ADE, FDE) of one agent's single-mode trajectory ``(T, >=2)`` against ``(T, 4)``."""
    mode_traj = np.asarray(mode_traj)
    gt = np.asarray(gt)
    valid = np.nonzero(_valid_upto(gt, horizon))[0]
    if valid.size == 0:
        raise NoValidSteps("no valid ground-truth step within the horizon")
    d = np.linalg.norm(mode_traj[valid, :2] - gt[valid, :2], axis=-1)
    return float(d.mean()), float(d[-1])


def min_metrics(traj, gt, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent minADE and minFDE, each minimized independently over modes.

    Agents without a valid step in the horizon get NaN.
    """
    traj = np.asarray(traj)
    gt = np.asarray(gt)
    valid = _valid_upto(gt, horizon)  # (A, h)
    if not valid.any():
        raise NoValidSteps("no valid ground-truth step within the horizon")
    d = np.linalg.norm(traj[:, :, :horizon, :2] - gt[None, :, :horizon, :2], axis=-1)  # (K, A, h)
    count = valid.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ade = (d * valid).sum(axis=2) / count
    A = gt.shape[0]
    last = np.where(count > 0, horizon - 1 - np.argmax(valid[:, ::-1], axis=1), 0)
    fde = d[:, np.arange(A), last]
    min_ade = np.where(count > 0, ade.min(axis=0), np.nan)
    min_fde = np.where(count > 0, fde.min(axis=0), np.nan)
    return min_ade, min_fde


def heading_errors(mode_traj, gt, horizon: int) -> tuple[float, float]:
    """(AHE, FHE): mean and final absolute wrapped heading error over valid steps."""
    mode_traj = np.asarray(mode_traj)
    gt = np.asarray(gt)
    valid = np.nonzero(_valid_upto(gt, horizon))[0]
    if valid.size == 0:
        raise NoValidSteps("no valid ground-truth step within the horizon")
    e = np.abs(wrap_angle(mode_traj[valid, 2] - gt[valid, 2]))
    e = np.atleast_1d(e)
    return float(e.mean()), float(e[-1])


# ---------------------------------------------------------------------------
# miss rate and mAP


def speed_scale(v) -> np.ndarray:
    """0.5 up to 1.4 m/s, 1.0 from 11 m/s, linear in between."""
    return np.interp(np.asarray(v, dtype=np.float64), [1.4, 11.0], [0.5, 1.0])


def mode_hits(traj, gt, horizon: int, initial_speed) -> np.ndarray:
    """``(K, A)`` flags: mode endpoint inside the speed-scaled gate around the gt endpoint."""
    traj = np.asarray(traj)
    gt = np.asarray(gt)
    end = horizon - 1
    if not np.all(gt[:, end, 3] > 0.5):
        raise NoValidSteps(f"ground-truth endpoint at step {horizon} is not valid for every agent")
    scale = speed_scale(initial_speed)  # (A,)
    d = traj[:, :, end, :2] - gt[None, :, end, :2]  # (K, A, 2)
    h = gt[:, end, 2]
    lon = d[..., 0] * np.cos(h) + d[..., 1] * np.sin(h)
    lat = -d[..., 0] * np.sin(h) + d[..., 1] * np.cos(h)
    return (np.abs(lon) <= LON_GATE[horizon] * scale) & (np.abs(lat) <= LAT_GATE[horizon] * scale)


def is_miss(traj, gt, horizon: int, initial_speed) -> np.ndarray:
    """Per agent: True iff no mode's endpoint lies within the gate."""
    return ~mode_hits(traj, gt, horizon, initial_speed).any(axis=0)


def average_precision(confidences: list[np.ndarray], hits: list[np.ndarray]) -> float:
    """AP over agents; each agent contributes K scored predictions.

    Within an agent, modes are ranked by confidence (ties by mode index); the
    first hit is the single true positive and every other mode is a false
    positive. Precision/recall are evaluated at each distinct score threshold
    and AP is the area under the interpolated (monotone) precision curve.
    """
    n = len(confidences)
    if n == 0:
        raise ValueError("no agents")
    scores, tp = [], []
    for conf, hit in zip(confidences, hits):
        conf = np.asarray(conf, dtype=np.float64)
        order = np.lexsort((np.arange(conf.size), -conf))
        flag = np.zeros(conf.size, dtype=bool)
        ranked_hits = np.asarray(hit, dtype=bool)[order]
        if ranked_hits.any():
            flag[order[np.argmax(ranked_hits)]] = True
        scores.append(conf)
        tp.append(flag)
    scores = np.concatenate(scores)
    tp = np.concatenate(tp)
    thresholds = np.unique(scores)[::-1]
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    tp_cum = np.cumsum(tp[order])
    # number of predictions with score >= threshold
    upto = np.searchsorted(-s_sorted, -thresholds, side="right")
    tps = tp_cum[upto - 1]
    precision = tps / upto
    recall = tps / n
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * interp))


def mean_average_precision(per_class: dict) -> tuple[float, dict, list]:
    """``per_class`` maps class -> (confidences list, hits list).

    Returns (mAP over non-empty classes, AP per class, empty classes).
    """
    aps, empty = {}, []
    for cls, (confs, hits) in per_class.items():
        if len(confs) == 0:
            empty.append(cls)
            continue
        aps[cls] = average_precision(confs, hits)
    m = float(np.mean(list(aps.values()))) if aps else float("nan")
    return m, aps, empty


# ---------------------------------------------------------------------------
# overlap


def boxes_overlap(c1, h1, ext1, c2, h2, ext2) -> np.ndarray:
    """Separating-axis test for oriented rectangles; broadcasts over leading dims.

    ``c*`` are ``(..., 2)`` centres, ``h*`` headings, ``ext*`` ``(..., 2)`` (length, width).
    Touching boxes count as overlapping.
    """
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    h1, h2 = np.asarray(h1, float), np.asarray(h2, float)
    e1, e2 = np.asarray(ext1, float) / 2.0, np.asarray(ext2, float) / 2.0
    u1 = np.stack([np.cos(h1), np.sin(h1)], -1)
    v1 = np.stack([-np.sin(h1), np.cos(h1)], -1)
    u2 = np.stack([np.cos(h2), np.sin(h2)], -1)
    v2 = np.stack([-np.sin(h2), np.cos(h2)], -1)
    d = c2 - c1
    overlap = np.ones(np.broadcast(d[..., 0], u1[..., 0], u2[..., 0]).shape, dtype=bool)
    for axis in (u1, v1, u2, v2):
        r1 = np.abs(e1[..., 0] * np.sum(u1 * axis, -1)) + np.abs(e1[..., 1] * np.sum(v1 * axis, -1))
        r2 = np.abs(e2[..., 0] * np.sum(u2 * axis, -1)) + np.abs(e2[..., 1] * np.sum(v2 * axis, -1))
        overlap &= np.abs(np.sum(d * axis, -1)) <= r1 + r2
    return overlap


def overlap_flags(pred: PredictionOutput, scene: Scene, horizon: int) -> np.ndarray:
    """Per focal agent: does its most probable mode overlap another agent's ground truth?"""
    k = pred.most_probable_mode
    glob = pred.global_trajectories()[k]  # (A, T, 3)
    agents = {a.id: a for a in scene.agents}
    flags = np.zeros(len(pred.agent_ids), dtype=bool)
    for a, aid in enumerate(pred.agent_ids):
        me = agents[aid]
        for other in scene.agents:
            if other.id == aid:
                continue
            ok = other.future_gt[:horizon, 3] > 0.5
            if not ok.any():
                continue
            hit = boxes_overlap(glob[a, :horizon, :2], glob[a, :horizon, 2], me.extent,
                                other.future_gt[:horizon, :2], other.future_gt[:horizon, 2], other.extent)
            if np.any(hit & ok):
                flags[a] = True
                break
    return flags


def overlap_rate(pred: PredictionOutput, scene: Scene, horizon: int) -> float:
    return float(overlap_flags(pred, scene, horizon).mean())


# ---------------------------------------------------------------------------
# open-loop score


def open_loop_score(ego_traj, ego_gt) -> float:
    """Open-loop score in [0, 100] of one ego plan ``(T, 3)`` against ``(T, 4)``."""
    ego_traj = np.asarray(ego_traj)
    ego_gt = np.asarray(ego_gt)
    subs = []
    for h in HORIZONS:
        valid = np.nonzero(_valid_upto(ego_gt, h))[0]
        if valid.size == 0:
            raise NoValidSteps("no valid ego ground-truth step within the horizon")
        d = np.linalg.norm(ego_traj[valid, :2] - ego_gt[valid, :2], axis=-1)
        if d.max() > OLS_MISS[h]:
            return 0.0
        ade, fde = displacement_errors(ego_traj, ego_gt, h)
        ahe, fhe = heading_errors(ego_traj, ego_gt, h)
        errs = {"ade": ade, "fde": fde, "ahe": ahe, "fhe": fhe}
        total_w = sum(OLS_WEIGHTS.values())
        subs.append(sum(OLS_WEIGHTS[k] * max(0.0, 1.0 - errs[k] / OLS_THRESHOLDS[k]) for k in errs) / total_w)
    return 100.0 * float(np.mean(subs))


# ---------------------------------------------------------------------------
# per-scene evaluation and aggregation


@dataclass
class AgentResult:
    agent_id: str
    cls: str
    is_ego: bool
    min_ade: dict          # horizon -> float (nan if not evaluable)
    min_fde: dict
    miss: dict             # horizon -> bool | None
    hits: dict             # horizon -> (K,) bool | None
    overlap: dict          # horizon -> bool
    confidences: np.ndarray


@dataclass
class SceneResult:
    scene_id: str
    agents: list[AgentResult]
    ols: float


def gt_in_frames(pred: PredictionOutput, scene: Scene) -> np.ndarray:
    """Ground-truth futures of the focal agents in their own frames, ``(A, T, 4)``."""
    agents = {a.id: a for a in scene.agents}
    T = pred.trajectories.shape[2]
    out = np.zeros((len(pred.agent_ids), T, 4))
    for a, (aid, f) in enumerate(zip(pred.agent_ids, pred.frames)):
        fut = agents[aid].future_gt[:T]
        out[a, :, :2] = to_agent_frame(fut[:, :2], f)
        out[a, :, 2] = wrap_angle(fut[:, 2] - f.heading)
        out[a, :, 3] = fut[:, 3]
    return out


def evaluate_scene(pred: PredictionOutput, scene: Scene) -> SceneResult:
    agents = {a.id: a for a in scene.agents}
    gt = gt_in_frames(pred, scene)
    traj = pred.trajectories
    speed = np.array([agents[i].current_speed for i in pred.agent_ids])
    A = len(pred.agent_ids)
    per = {h: min_metrics(traj, gt, h) for h in HORIZONS}
    overlaps = {h: overlap_flags(pred, scene, h) for h in HORIZONS}
    hits = {}
    for h in HORIZONS:
        ok = gt[:, h - 1, 3] > 0.5
        hh = np.zeros((traj.shape[0], A), dtype=bool)
        if ok.any():
            hh[:, ok] = mode_hits(traj[:, ok], gt[ok], h, speed[ok])
        hits[h] = (hh, ok)
    results = []
    for a, aid in enumerate(pred.agent_ids):
        results.append(AgentResult(
            agent_id=aid,
            cls=CLASS_NAMES[agents[aid].type],
            is_ego=aid == scene.ego_id,
            min_ade={h: float(per[h][0][a]) for h in HORIZONS},
            min_fde={h: float(per[h][1][a]) for h in HORIZONS},
            miss={h: (bool(not hits[h][0][:, a].any()) if hits[h][1][a] else None) for h in HORIZONS},
            hits={h: (hits[h][0][:, a].copy() if hits[h][1][a] else None) for h in HORIZONS},
            overlap={h: bool(overlaps[h][a]) for h in HORIZONS},
            confidences=pred.confidences.copy(),
        ))
    ego = pred.agent_index(scene.ego_id)
    ols = open_loop_score(traj[pred.most_probable_mode, ego], gt[ego])
    return SceneResult(scene.id, results, ols)


def _evaluate_pair(args):
    return evaluate_scene(*args)


def evaluate_dataset(preds, scenes, threads: int = 1) -> list[SceneResult]:
    """Evaluate scenes independently; result order follows the input order."""
    pairs = list(zip(preds, scenes))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as ex:
            return list(ex.map(_evaluate_pair, pairs, chunksize=16))
    return [evaluate_scene(p, s) for p, s in pairs]


@dataclass
class MetricsReport:
    """Rows keyed by (horizon label, class label); values mAP/minADE/minFDE/MR/OR."""

    rows: dict = field(default_factory=dict)
    empty_classes: dict = field(default_factory=dict)

    def get(self, horizon: str, cls: str) -> dict:
        return self.rows[(horizon, cls)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for (h, c), vals in self.rows.items():
            w.writerow([h, c] + [format_value(vals.get(k)) for k in CSV_HEADER[2:]])
        return buf.getvalue()


def format_value(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.4f}"


def _mean(xs) -> float:
    xs = [x for x in xs if x is not None and not (isinstance(x, float) and math.isnan(x))]
    return float(np.mean(xs)) if xs else float("nan")


def _class_metrics(agents: list[AgentResult], h: int) -> dict:
    confs = [a.confidences for a in agents if a.hits[h] is not None]
    hits = [a.hits[h] for a in agents if a.hits[h] is not None]
    return {
        "mAP": average_precision(confs, hits) if confs else float("nan"),
        "minADE": _mean([a.min_ade[h] for a in agents]),
        "minFDE": _mean([a.min_fde[h] for a in agents]),
        "MR": _mean([float(a.miss[h]) for a in agents if a.miss[h] is not None]),
        "OR": _mean([float(a.overlap[h]) for a in agents]),
    }


def aggregate_report(results: list[SceneResult]) -> MetricsReport:
    """Table-shaped report: per horizon and class, class averages, horizon averages, ego row."""
    all_agents = [a for r in results for a in r.agents]
    classes = [CLASS_NAMES[t] for t in AGENT_TYPES]
    keys = ("mAP", "minADE", "minFDE", "MR", "OR")
    report = MetricsReport()
    per_h = {}
    for h in HORIZONS:
        label = str(HORIZON_SECONDS[h])
        rows = {}
        for c in classes:
            members = [a for a in all_agents if a.cls == c]
            if not members:
                report.empty_classes.setdefault(label, []).append(c)
                rows[c] = {k: float("nan") for k in keys}
            else:
                rows[c] = _class_metrics(members, h)
        rows["all"] = {k: _mean([rows[c][k] for c in classes]) for k in keys}
        per_h[h] = rows
        for c, vals in rows.items():
            report.rows[(label, c)] = vals
    for c in classes + ["all"]:
        report.rows[("avg", c)] = {k: _mean([per_h[h][c][k] for h in HORIZONS]) for k in keys}
    ego = [a for a in all_agents if a.is_ego]
    if ego:
        ego_h = [_class_metrics(ego, h) for h in HORIZONS]
        report.rows[("avg", "ego")] = {k: _mean([m[k] for m in ego_h]) for k in keys if k != "OR"}
    return report


def mean_ols(results: list[SceneResult]) -> float:
    return float(np.mean([r.ols for r in results]))
