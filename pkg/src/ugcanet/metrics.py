"""Segmentation overlap metrics and classification accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class Scores(NamedTuple):
    dice: float
    iou: float
    recall: float
    precision: float


def confusion(pred, gt) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def scores_from_counts(c: ConfusionCounts) -> Scores:
    """Dice/IoU/recall/precision; empty-vs-empty is 1.0 everywhere, other 0/0 is 0.0."""
    if c.tp + c.fp + c.fn == 0:
        return Scores(1.0, 1.0, 1.0, 1.0)

    def ratio(num, den):
        return num / den if den else 0.0

    return Scores(
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        ratio(c.tp, c.tp + c.fp + c.fn),
        ratio(c.tp, c.tp + c.fn),
        ratio(c.tp, c.tp + c.fp),
    )


def dice_iou(pred_mask, gt_mask) -> Scores:
    return scores_from_counts(confusion(pred_mask, gt_mask))


def binarize(logits) -> np.ndarray:
    """sigmoid(logits) > 0.5, i.e. logits > 0."""
    return np.asarray(logits) > 0.0


def mean_scores(preds, gts, aggregate: str = "image") -> Scores:
    """Per-image scores averaged (``"image"``) or one score from pooled counts (``"global"``)."""
    if aggregate == "global":
        tot = [0, 0, 0, 0]
        for p, g in zip(preds, gts):
            c = confusion(p, g)
            tot = [a + b for a, b in zip(tot, (c.tp, c.fp, c.fn, c.tn))]
        return scores_from_counts(ConfusionCounts(*tot))
    if aggregate != "image":
        raise ValueError(f"aggregate must be 'image' or 'global', got {aggregate!r}")
    rows = [dice_iou(p, g) for p, g in zip(preds, gts)]
    if not rows:
        return Scores(float("nan"), float("nan"), float("nan"), float("nan"))
    return Scores(*(float(np.mean(col)) for col in zip(*rows)))


def accuracy(pred_labels, true_labels) -> float:
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    if true_labels.size == 0:
        return float("nan")
    return float(np.mean(pred_labels == true_labels))
