"""Experiment protocols: hold-out split, k-fold, cross-dataset, multi-task, ablation grid."""

from __future__ import annotations

import csv
import dataclasses
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data.manifest import read_manifest
from .data.synth import synth_dataset
from .folds import stratified_kfold
from .model import variant_name
from .train import TrainConfig, evaluate, substream, train

EXPERIMENTS = ("split-90-10", "kfold-5", "cross-dataset", "multitask-gi", "ablation")
CSV_COLUMNS = ("experiment", "variant", "fold", "mDice", "mIoU", "recall", "precision", "seed")
ABLATION_GRID = ((False, False), (True, False), (False, True), (True, True))


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    train: TrainConfig = TrainConfig()
    n: int = 64  # synthetic samples per source
    runs: int = 1  # repeats with seeds seed, seed+1, ...
    folds: int = 5
    task_mix: str = "seg"
    data_seed: int = 1
    train_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    out_dir: Optional[str] = None  # prediction dumps
    aggregate: str = "image"

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ExperimentError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        if self.runs < 1:
            raise ExperimentError("runs must be >= 1")
        if self.folds < 2:
            raise ExperimentError("folds must be >= 2")


@dataclass
class Row:
    experiment: str
    variant: str
    fold: int
    dice: float
    iou: float
    recall: float
    precision: float
    seed: int
    extra: dict = field(default_factory=dict)


@dataclass
class Report:
    rows: list

    def variants(self) -> list:
        seen = []
        for r in self.rows:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def summary(self, variant: str) -> dict:
        rows = [r for r in self.rows if r.variant == variant]
        out = {}
        for key in ("dice", "iou", "recall", "precision"):
            vals = np.array([getattr(r, key) for r in rows])
            out[key] = (float(vals.mean()), float(vals.std()))
        for key in sorted({k for r in rows for k in r.extra}):
            vals = np.array([r.extra[key] for r in rows if key in r.extra])
            out[key] = (float(vals.mean()), float(vals.std()))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(
                [r.experiment, r.variant, r.fold, f"{r.dice:.6f}", f"{r.iou:.6f}", f"{r.recall:.6f}", f"{r.precision:.6f}", r.seed]
            )
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned mean ± std table, one line per variant."""
        keys = ["dice", "iou", "recall", "precision"]
        extras = sorted({k for r in self.rows for k in r.extra})
        heads = ["variant", "n", "mDice", "mIoU", "Recall", "Precision"] + extras
        body = []
        for v in self.variants():
            s = self.summary(v)
            n = sum(r.variant == v for r in self.rows)
            body.append([v, str(n)] + [f"{s[k][0]:.4f} ± {s[k][1]:.4f}" for k in keys + extras])
        widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(heads)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(heads, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for b in body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip())
        title = self.rows[0].experiment if self.rows else "empty"
        return f"{title}\n" + "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        (d / "report.txt").write_text(self.to_text(), encoding="utf-8")


def _load(path, what) -> list:
    if not Path(path).is_file():
        raise ExperimentError(f"{what} manifest not found: {path}")
    return read_manifest(path)


def _synth(spec: ExperimentSpec, source: str, seed: int, task_mix: Optional[str] = None) -> list:
    return synth_dataset(spec.n, spec.train.size, task_mix or spec.task_mix, seed=seed, source=source)


def _holdout(samples, seed: int, frac: float = 0.9) -> tuple:
    order = substream(seed, "split").permutation(len(samples))
    cut = int(round(frac * len(samples)))
    return [samples[i] for i in order[:cut]], [samples[i] for i in order[cut:]]


def _jobs(spec: ExperimentSpec) -> list:
    """(variant, fold, seed, train config, train samples, test samples) per run."""
    base = spec.train
    jobs = []
    name = spec.name

    if name in ("split-90-10", "ablation"):
        if spec.train_manifest:
            pool = _load(spec.train_manifest, "train")
            tr, te = (pool, _load(spec.test_manifest, "test")) if spec.test_manifest else _holdout(pool, spec.data_seed)
        else:
            tr, te = _holdout(_synth(spec, "synthA", spec.data_seed), spec.data_seed)
        grid = ABLATION_GRID if name == "ablation" else ((base.use_cgnl, base.use_se),)
        for cg, se in grid:
            for r in range(spec.runs):
                cfg = dataclasses.replace(base, use_cgnl=cg, use_se=se, seed=base.seed + r)
                jobs.append((variant_name(cg, se), 0, cfg.seed, cfg, tr, te))

    elif name in ("kfold-5", "multitask-gi"):
        if spec.train_manifest:
            pool = _load(spec.train_manifest, "train")
            keys = lambda s: (s.labels.pos, s.meta.get("lighting"))  # noqa: E731
        else:
            mix = "merged" if name == "multitask-gi" and spec.task_mix == "seg" else spec.task_mix
            pool = _synth(spec, "synthA", spec.data_seed, mix)
            keys = lambda s: (s.meta["site"], s.meta["lighting"])  # noqa: E731
        plan = stratified_kfold(pool, spec.folds, keys, seed=spec.data_seed)
        for f in range(spec.folds):
            tr_idx, te_idx = plan.split(f)
            for r in range(spec.runs):
                cfg = dataclasses.replace(base, seed=base.seed + r)
                jobs.append(
                    (variant_name(base.use_cgnl, base.use_se), f, cfg.seed, cfg, [pool[i] for i in tr_idx], [pool[i] for i in te_idx])
                )

    elif name == "cross-dataset":
        if spec.train_manifest or spec.test_manifest:
            if not (spec.train_manifest and spec.test_manifest):
                raise ExperimentError("cross-dataset needs both train and test manifests")
            tr, te = _load(spec.train_manifest, "train"), _load(spec.test_manifest, "test")
        else:
            tr = _synth(spec, "synthA", spec.data_seed)
            te = _synth(spec, "synthB", spec.data_seed + 1000)
        for r in range(spec.runs):
            cfg = dataclasses.replace(base, seed=base.seed + r)
            jobs.append((variant_name(base.use_cgnl, base.use_se), 0, cfg.seed, cfg, tr, te))
    return jobs


def _run_job(args) -> Row:
    experiment, variant, fold, seed, cfg, tr, te, out_dir, aggregate = args
    result = train(tr, cfg)
    dump = None
    if out_dir is not None:
        dump = Path(out_dir) / experiment / variant / f"fold{fold}_seed{seed}"
    ev = evaluate(result.model, te, cfg.size, out_dir=dump, aggregate=aggregate)
    s = ev.scores
    extra = {f"acc_{k}": v for k, v in ev.accuracy.items()} if experiment == "multitask-gi" else {}
    return Row(experiment, variant, fold, s.dice, s.iou, s.recall, s.precision, seed, extra)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("UGCANET_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ExperimentError(f"UGCANET_THREADS must be an integer, got {raw!r}") from None


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> Report:
    """Train and evaluate every run/fold of ``spec``; rows come back in job order."""
    jobs = [(spec.name, *j, spec.out_dir, spec.aggregate) for j in _jobs(spec)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            rows = list(ex.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    return Report(rows)
