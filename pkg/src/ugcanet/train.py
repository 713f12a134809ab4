"""Training loop, evaluation, and checkpoints."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff.optim import Adam, warmup_cosine
from .autodiff.utd import load_state, save_state
from .data.netpbm import load_netpbm, save_netpbm
from .data.records import collate
from .data.transforms import augment, resize_sample, scale_sizes
from .heads import total_loss
from .metrics import Scores, accuracy, binarize, dice_iou, mean_scores
from .model import ModelConfig, UGCANet


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "tiny"
    size: int = 64
    lr: float = 1e-4
    steps: int = 200
    batch: int = 8
    seed: int = 0
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)
    use_cgnl: bool = True
    use_se: bool = True
    multiscale: bool = False
    mean_loss: bool = False
    augment: bool = False
    schedule: str = "constant"  # or "cosine" (linear warmup then cosine decay)
    warmup: int = 0

    def __post_init__(self):
        if self.size <= 0 or self.size % 32:
            raise ValueError(f"size must be a positive multiple of 32, got {self.size}")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if len(self.lambdas) != 4 or any(v < 0 for v in self.lambdas):
            raise ValueError(f"lambda needs four non-negative weights, got {self.lambdas}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"schedule must be 'constant' or 'cosine', got {self.schedule!r}")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(preset=self.preset, use_cgnl=self.use_cgnl, use_se=self.use_se)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["lambdas"] = list(d["lambdas"])
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        d["lambdas"] = tuple(d["lambdas"])
        return cls(**d)


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named generator derived from the run seed; streams never share state."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])


@dataclass
class TrainResult:
    model: UGCANet
    config: TrainConfig
    losses: list = field(default_factory=list)


def _fit_size(samples, size: int) -> list:
    return [s if s.image.shape[1:] == (size, size) else resize_sample(s, size, size) for s in samples]


def train(samples, cfg: TrainConfig = TrainConfig(), log=None) -> TrainResult:
    """Adam on the weighted multi-task loss; batches drawn without replacement per step."""
    if not samples:
        raise ValueError("no training samples")
    samples = _fit_size(samples, cfg.size)
    model = UGCANet(cfg.model, seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    sampling = substream(cfg.seed, "sampling")
    sizes = scale_sizes(cfg.size) if cfg.multiscale else (cfg.size,)
    batch = min(cfg.batch, len(samples))
    losses = []
    for step in range(cfg.steps):
        idx = sampling.choice(len(samples), batch, replace=False)
        size = sizes[int(sampling.integers(len(sizes)))] if len(sizes) > 1 else cfg.size
        chosen = [samples[i] for i in idx]
        if cfg.augment:
            chosen = [augment(s, [cfg.seed, zlib.crc32(b"augment"), step, j]) for j, s in enumerate(chosen)]
        if size != cfg.size:
            chosen = [resize_sample(s, size, size) for s in chosen]
        x, labels = collate(chosen)
        out = model(Tensor(x))
        loss = total_loss(out, labels, cfg.lambdas, mean=cfg.mean_loss)
        opt.zero_grad()
        loss.backward()
        lr = warmup_cosine(step, cfg.steps, cfg.lr, cfg.warmup) if cfg.schedule == "cosine" else cfg.lr
        opt.step(lr=lr)
        losses.append(loss.item())
        if log is not None:
            log(step, losses[-1])
    return TrainResult(model, cfg, losses)


@dataclass
class EvalResult:
    scores: Scores
    per_image: list  # Scores per μ_seg sample
    accuracy: dict  # task -> accuracy over samples carrying that label
    predictions: list  # binary [H, W] masks, one per μ_seg sample

    def as_dict(self) -> dict:
        d = {"mDice": self.scores.dice, "mIoU": self.scores.iou, "recall": self.scores.recall, "precision": self.scores.precision}
        d.update({f"acc_{k}": v for k, v in self.accuracy.items()})
        return d


def predict(model: UGCANet, samples, size: int, batch: int = 16):
    """Segmentation logits and class predictions for every sample, in order."""
    samples = _fit_size(samples, size)
    seg, pos, le, hp = [], [], [], []
    with no_grad():
        for i in range(0, len(samples), batch):
            x, _ = collate(samples[i : i + batch])
            out = model(Tensor(x))
            seg.append(out.seg_logits.data[:, 0])
            pos.append(out.pos_logits.data.argmax(1))
            le.append(out.le_logits.data.argmax(1))
            hp.append((out.hp_logit.data[:, 0] > 0).astype(int))
    return samples, np.concatenate(seg), np.concatenate(pos), np.concatenate(le), np.concatenate(hp)


def evaluate(model: UGCANet, samples, size: int, out_dir=None, aggregate: str = "image") -> EvalResult:
    """Metrics on held-out samples; optionally dump predicted masks as PGM."""
    samples, seg, pos, le, hp = predict(model, samples, size)
    preds, gts = [], []
    for s, logit in zip(samples, seg):
        if s.mask is not None:
            preds.append(binarize(logit))
            gts.append(s.mask[0] > 0.5)
    per_image = [dice_iou(p, g) for p, g in zip(preds, gts)]
    scores = mean_scores(preds, gts, aggregate)

    acc = {}
    for task, guess in (("pos", pos), ("le", le), ("hp", hp)):
        live = [i for i, s in enumerate(samples) if getattr(s.labels, task) is not None]
        if live:
            acc[task] = accuracy(guess[live], [getattr(samples[i].labels, task) for i in live])

    if out_dir is not None:
        dump_predictions(out_dir, preds)
    return EvalResult(scores, per_image, acc, preds)


def dump_predictions(out_dir, preds) -> list:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, p in enumerate(preds):
        path = d / f"pred_{i:04d}.pgm"
        save_netpbm(path, (np.asarray(p, dtype=np.uint8) * 255)[None])
        paths.append(path)
    return paths


def rescore_dumps(out_dir, gts, aggregate: str = "image") -> Scores:
    """Recompute metrics from dumped PGM predictions."""
    d = Path(out_dir)
    preds = [load_netpbm(d / f"pred_{i:04d}.pgm", mask=True)[0] > 0.5 for i in range(len(gts))]
    return mean_scores(preds, gts, aggregate)


def save_checkpoint(directory, model: UGCANet, cfg: TrainConfig) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    save_state(d / "weights", model.state_dict())


def load_checkpoint(directory) -> tuple:
    d = Path(directory)
    cfg = TrainConfig.from_json((d / "config.json").read_text(encoding="utf-8"))
    model = UGCANet(cfg.model, seed=None)
    model.load_state_dict(load_state(d / "weights"))
    return model, cfg


def metrics_json(result: EvalResult, path: Optional[Path] = None) -> str:
    text = json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
