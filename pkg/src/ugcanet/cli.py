"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data or path error, 3 gradient
check failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

from .data.manifest import read_manifest, write_manifest
from .data.records import DataError
from .data.synth import TASK_MIXES, synth_dataset
from .encoder import PRESETS
from .experiments import EXPERIMENTS, ExperimentError, ExperimentSpec, Report, Row, run_experiment
from .model import variant_name
from .train import TrainConfig, evaluate, load_checkpoint, rescore_dumps, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DEFAULT_DATA = "data/synth"
DEFAULT_RUN = "runs/train"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _lambdas(text: str) -> tuple:
    parts = text.split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--lambda expects four numbers pos,le,hp,seg, got {text!r}") from None
    if len(vals) != 4 or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"--lambda expects four non-negative numbers pos,le,hp,seg, got {text!r}")
    return vals


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default="tiny")
    p.add_argument("--size", type=int, default=64, help="input side, multiple of 32")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lambdas", type=_lambdas, default=(1.0, 1.0, 1.0, 1.0), metavar="POS,LE,HP,SEG")
    p.add_argument("--no-cgnl", action="store_true")
    p.add_argument("--no-se", action="store_true")
    p.add_argument("--multiscale", action="store_true", help="train at size ratios 0.75/1/1.25")
    p.add_argument("--mean-loss", action="store_true", help="divide each task loss by its active-sample count")
    p.add_argument("--augment", action="store_true", help="flip/hue-saturation/brightness-contrast augmentation")
    p.add_argument("--schedule", choices=("constant", "cosine"), default="constant")
    p.add_argument("--warmup", type=int, default=0)


def _train_config(args) -> TrainConfig:
    fields = dict(
        preset=args.preset,
        size=args.size,
        lr=args.lr,
        steps=args.steps,
        batch=args.batch,
        seed=args.seed,
        lambdas=args.lambdas,
        use_cgnl=not args.no_cgnl,
        use_se=not args.no_se,
        multiscale=args.multiscale,
        mean_loss=args.mean_loss,
        augment=args.augment,
        schedule=args.schedule,
        warmup=args.warmup,
    )
    try:
        return TrainConfig(**fields)
    except ValueError as e:
        raise UsageError(str(e)) from None


def build_parser() -> Parser:
    parser = Parser(prog="ugcanet", description="Multi-task segmentation/classification network on numpy.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=100)
    p.add_argument("--preset", choices=["tiny"], default="tiny")

    p = sub.add_parser("synth", help="write a synthetic dataset as PPM/PGM plus train/test manifests")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--task-mix", choices=TASK_MIXES, default="seg")
    p.add_argument("--test-frac", type=float, default=0.25)
    p.add_argument("--out", default=DEFAULT_DATA)

    p = sub.add_parser("train", help="train on a manifest, save a checkpoint, evaluate on the test manifest")
    _add_run_flags(p)
    p.add_argument("--manifest", default=f"{DEFAULT_DATA}/train.csv")
    p.add_argument("--test-manifest", default=None, help="defaults to test.csv beside --manifest when present")
    p.add_argument("--out", default=DEFAULT_RUN)

    p = sub.add_parser("eval", help="evaluate a checkpoint; metrics are recomputed from dumped masks")
    p.add_argument("--checkpoint", default=DEFAULT_RUN)
    p.add_argument("--manifest", default=f"{DEFAULT_DATA}/test.csv")
    p.add_argument("--aggregate", choices=("image", "global"), default="image")
    p.add_argument("--out", default=None, help="defaults to <checkpoint>/eval")

    for name, hint in (("experiment", "run one experiment protocol"), ("ablate", "CGNL x SE ablation grid")):
        p = sub.add_parser(name, help=hint)
        _add_run_flags(p)
        if name == "experiment":
            p.add_argument("--name", choices=EXPERIMENTS, required=True)
        p.add_argument("--n", type=int, default=64, help="synthetic samples per source")
        p.add_argument("--data-seed", type=int, default=1)
        p.add_argument("--task-mix", choices=TASK_MIXES, default="seg")
        p.add_argument("--runs", type=int, default=1)
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--aggregate", choices=("image", "global"), default="image")
        p.add_argument("--manifest", default=None, help="train manifest instead of synthetic data")
        p.add_argument("--test-manifest", default=None)
        p.add_argument("--out", default=f"runs/{name}")
        p.add_argument("--dump", action="store_true", help="write predicted masks under --out")
    return parser


def _report_csv(rows) -> str:
    return Report(rows).to_csv()


def _eval_row(kind: str, cfg: TrainConfig, scores) -> Row:
    return Row(kind, variant_name(cfg.use_cgnl, cfg.use_se), 0, scores.dice, scores.iou, scores.recall, scores.precision, cfg.seed)


def _final_eval(model, cfg, samples, out_dir: Path, kind: str, aggregate: str = "image") -> str:
    """Dump predictions, recompute metrics from the files, write metrics CSV/JSON."""
    pred_dir = out_dir / "predictions"
    ev = evaluate(model, samples, cfg.size, out_dir=pred_dir, aggregate=aggregate)
    gts = [s.mask[0] > 0.5 for s in samples if s.mask is not None]
    scores = rescore_dumps(pred_dir, gts, aggregate)
    text = _report_csv([_eval_row(kind, cfg, scores)])
    (out_dir / "metrics.csv").write_text(text, encoding="utf-8")
    extra = {f"acc_{k}": v for k, v in ev.accuracy.items()}
    summary = {"mDice": scores.dice, "mIoU": scores.iou, "recall": scores.recall, "precision": scores.precision, **extra}
    (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return text


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed, coords=args.coords)
    bad = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(bad)}/{len(results)} passed" + (f"; failed: {', '.join(bad)}" if bad else ""))
    return EXIT_OK if not bad else EXIT_CHECK


def cmd_synth(args) -> int:
    if args.size <= 0 or args.size % 32:
        raise UsageError(f"--size must be a positive multiple of 32, got {args.size}")
    if args.n < 0:
        raise UsageError(f"--n must be >= 0, got {args.n}")
    if not 0 <= args.test_frac < 1:
        raise UsageError(f"--test-frac must lie in [0, 1), got {args.test_frac}")
    samples = synth_dataset(args.n, args.size, args.task_mix, seed=args.seed)
    n_test = int(round(args.test_frac * args.n))
    out = Path(args.out)
    write_manifest(out / "train.csv", samples[: args.n - n_test], prefix="train")
    write_manifest(out / "test.csv", samples[args.n - n_test :], prefix="test")
    print(f"wrote {args.n - n_test} train and {n_test} test samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    samples = read_manifest(args.manifest)
    test_path = args.test_manifest
    if test_path is None:
        sibling = Path(args.manifest).with_name("test.csv")
        test_path = sibling if sibling.is_file() and sibling != Path(args.manifest) else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def log(step, loss):
        if step % 50 == 0 or step == cfg.steps - 1:
            print(f"step {step:5d}  loss {loss:.4f}", flush=True)

    result = train(samples, cfg, log=log)
    save_checkpoint(out, result.model, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    w.writerows([i, f"{v:.6f}"] for i, v in enumerate(result.losses))
    (out / "loss.csv").write_text(buf.getvalue(), encoding="utf-8")
    if test_path is not None:
        print(_final_eval(result.model, cfg, read_manifest(test_path), out, "train"), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not (ckpt / "config.json").is_file():
        raise DataError(f"no checkpoint at {ckpt} (config.json missing)")
    model, cfg = load_checkpoint(ckpt)
    out = Path(args.out) if args.out else ckpt / "eval"
    out.mkdir(parents=True, exist_ok=True)
    print(_final_eval(model, cfg, read_manifest(args.manifest), out, "eval", args.aggregate), end="")
    return EXIT_OK


def cmd_experiment(args, name=None) -> int:
    cfg = _train_config(args)
    name = name or args.name
    if args.test_manifest and not args.manifest:
        raise UsageError("--test-manifest needs --manifest")
    try:
        spec = ExperimentSpec(
            name=name,
            train=cfg,
            n=args.n,
            runs=args.runs,
            folds=args.folds,
            task_mix=args.task_mix,
            data_seed=args.data_seed,
            train_manifest=args.manifest,
            test_manifest=args.test_manifest,
            out_dir=str(Path(args.out) / "predictions") if args.dump else None,
            aggregate=args.aggregate,
        )
    except ExperimentError as e:
        raise UsageError(str(e)) from None
    report = run_experiment(spec)
    report.write(args.out)
    (Path(args.out) / "spec.json").write_text(_spec_json(spec), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


def _spec_json(spec: ExperimentSpec) -> str:
    d = dataclasses.asdict(spec)
    d["train"]["lambdas"] = list(d["train"]["lambdas"])
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "ablate": lambda a: cmd_experiment(a, "ablation"),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"ugcanet {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ExperimentError, FileNotFoundError) as e:
        print(f"ugcanet {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
