"""Classification branch and the masked multi-task losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.nn import Module
from .autodiff.tensor import Tensor
from .encoder import FeaturePyramid, Linear

C_POS, C_LE, C_HP = 10, 6, 1
TASKS = ("pos", "le", "hp", "seg")
LOG_FLOOR = 1e-12


class LabelError(ValueError):
    pass


class TaskOutputs(NamedTuple):
    seg_logits: Tensor  # [N, 1, H, W]
    pos_logits: Tensor  # [N, 10]
    le_logits: Tensor  # [N, 6]
    hp_logit: Tensor  # [N, 1]


@dataclass
class BatchLabels:
    """Collated targets. ``mu`` is [N, 4] in (pos, le, hp, seg) order; absent labels are -1."""

    mu: np.ndarray
    pos: np.ndarray
    le: np.ndarray
    hp: np.ndarray
    masks: Optional[np.ndarray] = None  # [N, 1, H, W], zeros where absent

    def mu_of(self, task: str) -> np.ndarray:
        return self.mu[:, TASKS.index(task)]


class ClassificationBranch(Module):
    """Global average pool of the context-enhanced F4, then three FC heads."""

    def __init__(self, channels: int):
        super().__init__()
        self.pos = Linear(channels, C_POS)
        self.le = Linear(channels, C_LE)
        self.hp = Linear(channels, C_HP)

    def forward(self, pyr: FeaturePyramid):
        v = ops.global_avg_pool(pyr[3])
        return self.pos(v), self.le(v), self.hp(v)


def one_hot(labels: Sequence[int], classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((len(labels), classes))
    live = labels >= 0
    out[np.nonzero(live)[0], labels[live]] = 1.0
    return out


def _as_mu(mu, n: int) -> np.ndarray:
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (n,))
    if not np.all((mu == 0) | (mu == 1)):
        raise LabelError(f"task indicator must be 0/1, got {mu}")
    return mu


def _mean_divisor(mu: np.ndarray, mean: bool) -> float:
    return max(float(mu.sum()), 1.0) if mean else 1.0


def masked_cross_entropy(logits: Tensor, y, mu, mean: bool = False) -> Tensor:
    """``-sum_i mu_i sum_j y_ij log softmax(logits)_ij`` with log floored at 1e-12."""
    n, c = logits.shape
    y = np.asarray(y, dtype=np.float64)
    mu = _as_mu(mu, n)
    if y.shape != (n, c):
        raise LabelError(f"targets {y.shape} do not match logits {logits.shape}")
    live = mu == 1
    if live.any():
        ok = np.all((y[live] == 0) | (y[live] == 1)) and np.all(y[live].sum(axis=1) == 1)
        if not ok:
            raise LabelError("targets must be one-hot for samples with mu = 1")
    logp = ops.clamp_min(ops.log_softmax(logits), float(np.log(LOG_FLOOR)))
    weight = Tensor(y * mu[:, None], dtype=logits.dtype)
    return ops.scale(ops.sum(ops.mul(logp, weight)), -1.0 / _mean_divisor(mu, mean))


def loss_pos(logits: Tensor, y, mu, mean: bool = False) -> Tensor:
    if logits.shape[-1] != C_POS:
        raise LabelError(f"anatomical-site head needs {C_POS} logits, got {logits.shape}")
    return masked_cross_entropy(logits, y, mu, mean)


def loss_le(logits: Tensor, y, mu, mean: bool = False) -> Tensor:
    if logits.shape[-1] != C_LE:
        raise LabelError(f"lesion head needs {C_LE} logits, got {logits.shape}")
    return masked_cross_entropy(logits, y, mu, mean)


def loss_hp(logit: Tensor, y, mu, mean: bool = False) -> Tensor:
    """``-sum_i mu_i (y log s + (1 - y) log(1 - s))`` with ``s = sigmoid(logit)``."""
    n = logit.shape[0]
    y = np.asarray(y, dtype=np.float64).reshape(n, 1)
    mu = _as_mu(mu, n)
    if np.any(~((y == 0) | (y == 1))[mu == 1]):
        raise LabelError("HP targets must be 0 or 1")
    # -log s = softplus(-x), -log(1 - s) = softplus(x)
    pos = ops.mul(ops.softplus(ops.neg(logit)), Tensor(y * mu[:, None], dtype=logit.dtype))
    neg = ops.mul(ops.softplus(logit), Tensor((1 - y) * mu[:, None], dtype=logit.dtype))
    return ops.scale(ops.sum(ops.add(pos, neg)), 1.0 / _mean_divisor(mu, mean))


def _mean_pool_same(mask: np.ndarray, k: int = 31) -> np.ndarray:
    """k x k box mean with zero padding k//2, divisor always k*k."""
    pad = k // 2
    p = np.pad(mask, [(0, 0)] * (mask.ndim - 2) + [(pad, pad), (pad, pad)])
    c = np.cumsum(np.cumsum(p, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (mask.ndim - 2) + [(1, 0), (1, 0)])
    h, w = mask.shape[-2:]
    s = c[..., k : k + h, k : k + w] - c[..., :h, k : k + w] - c[..., k : k + h, :w] + c[..., :h, :w]
    return s / (k * k)


def hard_pixel_weights(mask: np.ndarray) -> np.ndarray:
    """``1 + 5 |meanpool31(mask) - mask|``."""
    mask = np.asarray(mask, dtype=np.float64)
    return 1.0 + 5.0 * np.abs(_mean_pool_same(mask, 31) - mask)


def weighted_bce_iou_loss(logits: Tensor, mask, reduction: str = "sum") -> Tensor:
    """Weighted BCE plus weighted IoU loss, per sample over [N, 1, H, W].

    ``reduction`` is ``"sum"`` (over samples), ``"mean"``, or ``"none"`` ([N]).
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != logits.shape:
        raise LabelError(f"mask {mask.shape} does not match logits {logits.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise LabelError("segmentation mask must be binary")
    n = logits.shape[0]
    dt = logits.dtype
    w = hard_pixel_weights(mask)
    axes = (1, 2, 3)
    y = Tensor(mask, dtype=dt)
    wt = Tensor(w, dtype=dt)
    wsum = w.sum(axis=axes)

    # BCE with logits: softplus(x) - x * y
    bce = ops.sub(ops.softplus(logits), ops.mul(logits, y))
    wbce = ops.div(ops.sum(ops.mul(bce, wt), axis=axes), Tensor(wsum, dtype=dt))

    p = ops.sigmoid(logits)
    inter = ops.sum(ops.mul(ops.mul(p, y), wt), axis=axes)
    union = ops.sum(ops.mul(ops.sub(ops.add(p, y), ops.mul(p, y)), wt), axis=axes)
    ratio = ops.div(ops.add_scalar(inter, 1.0), ops.add_scalar(union, 1.0))
    per_sample = ops.add(wbce, ops.add_scalar(ops.neg(ratio), 1.0))
    if reduction == "none":
        return per_sample
    if reduction == "mean":
        return ops.scale(ops.sum(per_sample), 1.0 / n)
    return ops.sum(per_sample)


def loss_seg(logits: Tensor, masks, mu, mean: bool = False) -> Tensor:
    """Sum of the per-sample weighted BCE+IoU over samples with mu_seg = 1."""
    n = logits.shape[0]
    mu = _as_mu(mu, n)
    live = np.nonzero(mu == 1)[0]
    if live.size == 0:
        return Tensor(np.zeros(()), dtype=logits.dtype)
    sel = logits if live.size == n else ops.take(logits, live, axis=0)
    loss = weighted_bce_iou_loss(sel, np.asarray(masks)[live], reduction="sum")
    return ops.scale(loss, 1.0 / _mean_divisor(mu, mean))


def component_losses(out: TaskOutputs, labels: BatchLabels, mean: bool = False) -> dict:
    mu = labels.mu
    comps = {
        "pos": loss_pos(out.pos_logits, one_hot(labels.pos, C_POS), mu[:, 0], mean),
        "le": loss_le(out.le_logits, one_hot(labels.le, C_LE), mu[:, 1], mean),
        "hp": loss_hp(out.hp_logit, np.where(labels.hp >= 0, labels.hp, 0), mu[:, 2], mean),
    }
    if labels.masks is not None:
        comps["seg"] = loss_seg(out.seg_logits, labels.masks, mu[:, 3], mean)
    elif np.any(mu[:, 3] == 1):
        raise LabelError("mu_seg = 1 but no masks were provided")
    return comps


def total_loss(out: TaskOutputs, labels: BatchLabels, lambdas=(1.0, 1.0, 1.0, 1.0), mean: bool = False) -> Tensor:
    """``l1 * L_pos + l2 * L_le + l3 * L_hp + l4 * L_seg``."""
    lambdas = tuple(float(v) for v in lambdas)
    if len(lambdas) != 4 or any(v < 0 for v in lambdas):
        raise ValueError(f"need four non-negative task weights, got {lambdas}")
    comps = component_losses(out, labels, mean)
    total = None
    for task, lam in zip(TASKS, lambdas):
        if task not in comps:
            continue
        term = ops.scale(comps[task], lam)
        total = term if total is None else ops.add(total, term)
    return total
