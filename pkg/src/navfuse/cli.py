"""navfuse command-line interface.

    navfuse gen-data|train|eval-pred|eval-ols|compare|gradcheck --config FILE
            [--seed N] [--threads N] [--out DIR]

Relative paths inside the config resolve against the config file's directory.
Exit codes: 0 success, 1 validation failure, 2 internal error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

import navfuse
from navfuse.config import RunConfig, load_config
from navfuse.errors import DivergedTraining, NavfuseError, NonFiniteActivation
from navfuse.fsutil import atomic_write
from navfuse.metrics import (
    CSV_HEADER,
    HORIZON_SECONDS,
    HORIZONS,
    aggregate_report,
    evaluate_dataset,
    format_value,
)
from navfuse.predictor.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from navfuse.predictor.config import Variant
from navfuse.scene import read_jsonl
from navfuse.synth import gen_dataset, split_dataset

log = logging.getLogger("navfuse")

COMMANDS = ("gen-data", "train", "eval-pred", "eval-ols", "compare", "gradcheck")
TRAIN_LOG_FIELDS = ("epoch", "lr", "train_loss", "train_imitation", "train_nav", "val_loss")


class ValidationError(NavfuseError):
    pass


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ValidationError(f"{what} not found: {path}")
    return path


class Run:
    def __init__(self, command: str, cfg: RunConfig, base: Path, out: Path):
        self.command = command
        self.cfg = cfg
        self.base = base
        self.out = out

    def echo(self) -> None:
        """Config echo, seed and tool version go into every output directory."""
        atomic_write(self.out / "config.yaml", self.cfg.to_yaml())
        meta = {"command": self.command, "seed": self.cfg.seed, "threads": self.cfg.threads,
                "version": navfuse.__version__}
        atomic_write(self.out / "run.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")

    def path(self, p):
        return _resolve(self.base, p)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(run: Run) -> None:
    g = run.cfg.gen
    if g.n < 1:
        raise ValidationError("gen.n must be >= 1")
    data, manifest = gen_dataset(g.n, g.params, run.cfg.seed, run.out / Path(g.output).name,
                                 threads=run.cfg.threads)
    log.info("wrote %s and %s", data, manifest)
    if g.split is not None:
        for p in split_dataset(data, g.split, run.cfg.seed, run.out):
            log.info("wrote %s", p)


def _load_scenes(run: Run, path: str, limit: int | None = None):
    scenes = read_jsonl(_require(run.path(path), "dataset"))
    if not scenes:
        raise ValidationError(f"dataset is empty: {path}")
    return scenes[:limit] if limit else scenes


def cmd_train(run: Run) -> None:
    from navfuse.predictor.train import prepare, train

    t = run.cfg.train
    variant = Variant.parse(t.variant)
    tc = dataclasses.replace(t.train, seed=run.cfg.seed)
    train_scenes = _load_scenes(run, t.dataset)
    val_scenes = _load_scenes(run, t.val_dataset) if t.val_dataset else None
    rows = []

    def on_epoch(row):
        rows.append([row[k] if k == "epoch" else repr(float(row[k])) for k in TRAIN_LOG_FIELDS])
        atomic_write(run.out / "train_log.csv", _csv(rows, TRAIN_LOG_FIELDS))

    res = train(prepare(train_scenes, variant, t.model), t.model, tc, variant,
                val_feats=prepare(val_scenes, variant, t.model) if val_scenes else None,
                threads=run.cfg.threads, on_epoch=on_epoch)
    ck = Checkpoint(res.params, t.model, tc, variant, run.cfg.seed, {"tool_version": navfuse.__version__})
    save_checkpoint(ck, run.out / "model.ckpt")


def _source(run: Run, ref: str | None):
    from navfuse.evaluate import ORACLE

    if ref is None:
        raise ValidationError("eval.checkpoint is required (a path or 'oracle')")
    if ref == ORACLE:
        return ORACLE
    return load_checkpoint(_require(run.path(ref), "checkpoint"))


def _results(run: Run, source, scenes):
    from navfuse.evaluate import predictions

    preds = predictions(source, scenes)
    return evaluate_dataset(preds, scenes, threads=run.cfg.threads)


def cmd_eval_pred(run: Run) -> None:
    e = run.cfg.eval
    scenes = _load_scenes(run, e.dataset, e.limit)
    report = aggregate_report(_results(run, _source(run, e.checkpoint), scenes))
    atomic_write(run.out / "metrics.csv", report.to_csv())


def _ols_rows(results):
    rows = [[r.scene_id, f"{r.ols:.4f}"] for r in results]
    mean = sum(r.ols for r in results) / len(results)
    return rows + [["mean", f"{mean:.4f}"]]


def cmd_eval_ols(run: Run) -> None:
    e = run.cfg.eval
    scenes = _load_scenes(run, e.dataset, e.limit)
    results = _results(run, _source(run, e.checkpoint), scenes)
    atomic_write(run.out / "ols.csv", _csv(_ols_rows(results), ("scene", "OLS")))


def _method_name(source, taken: set) -> str:
    name = source if isinstance(source, str) else source.variant.value
    if name in taken:
        name = f"{name}#seed{source.seed}" if not isinstance(source, str) else f"{name}#{len(taken)}"
    taken.add(name)
    return name


def cmd_compare(run: Run) -> None:
    from navfuse.plots import bar_chart, curve_chart

    e = run.cfg.eval
    refs = e.checkpoints or ([e.checkpoint] if e.checkpoint else [])
    if not refs:
        raise ValidationError("eval.checkpoints must list at least one checkpoint")
    scenes = _load_scenes(run, e.dataset, e.limit)
    taken: set = set()
    methods, reports, ols = [], [], []
    for ref in refs:
        source = _source(run, ref)
        results = _results(run, source, scenes)
        methods.append(_method_name(source, taken))
        reports.append(aggregate_report(results))
        ols.append(sum(r.ols for r in results) / len(results))
    rows = []
    for key in reports[0].rows:
        for name, rep in zip(methods, reports):
            vals = rep.rows[key]
            rows.append([name, *key] + [format_value(vals.get(k)) for k in CSV_HEADER[2:]])
    atomic_write(run.out / "compare.csv", _csv(rows, ("method",) + CSV_HEADER))
    atomic_write(run.out / "compare_ols.csv", _csv([[m, f"{v:.4f}"] for m, v in zip(methods, ols)],
                                                   ("method", "OLS")))
    labels = [f"{HORIZON_SECONDS[h]} s" for h in HORIZONS]
    for metric in ("minADE", "minFDE", "MR", "mAP"):
        series = {m: [rep.rows[(str(HORIZON_SECONDS[h]), "all")][metric] for h in HORIZONS]
                  for m, rep in zip(methods, reports)}
        atomic_write(run.out / f"compare_{metric}.svg", curve_chart(labels, series, metric, "horizon"))
    atomic_write(run.out / "compare_ols.svg", bar_chart(methods, ols, "OLS"))


def cmd_gradcheck(run: Run) -> None:
    from navfuse.predictor.gradcheck import run_tiny, tiny_scenes

    g = run.cfg.gradcheck
    scenes = tiny_scenes(run.cfg.seed, g.scenes)
    rows, worst = [], 0.0
    for name in g.variants:
        v = Variant.parse(name)
        r = run_tiny(scenes, v, seed=run.cfg.seed)
        worst = max(worst, r.max_rel_error)
        rows.append([v.value, f"{r.max_rel_error:.3e}", r.param, "/".join(map(str, r.index)), r.checked,
                     f"{r.ego_lateral_distance:.4f}"])
        log.info("%s: max relative error %.3e at %s%s", v.value, r.max_rel_error, r.param, list(r.index))
    atomic_write(run.out / "gradcheck.csv", _csv(rows, ("variant", "max_rel_error", "param", "index", "checked",
                                                        "ego_lateral_distance")))
    if worst > 1e-4:
        raise ValidationError(f"gradient check failed: max relative error {worst:.3e} > 1e-4")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-pred": cmd_eval_pred,
    "eval-ols": cmd_eval_ols,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="navfuse", description="navigation-fused joint trajectory prediction")
    ap.add_argument("--version", action="version", version=f"navfuse {navfuse.__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--threads", type=int, help="worker threads (1 = bit-reproducible)")
    ap.add_argument("--out", help="output directory")
    return ap


def _setup_logging() -> None:
    level = os.environ.get("NAVFUSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ValidationError("--threads must be >= 1")
            cfg.threads = args.threads
        base = Path(args.config).resolve().parent
        out = Path(args.out) if args.out else _resolve(base, cfg.out or f"runs/{args.command}")
        import torch

        torch.set_num_threads(cfg.threads)
        run = Run(args.command, cfg, base, out)
        run.out.mkdir(parents=True, exist_ok=True)
        run.echo()
        HANDLERS[args.command](run)
    except (DivergedTraining, NonFiniteActivation) as e:
        print(f"navfuse: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (NavfuseError, FileNotFoundError, PermissionError) as e:
        print(f"navfuse: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"navfuse: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
