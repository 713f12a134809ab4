"""Central-difference gradient checks for every registered op and the full model.

Checks run in float64: the loss is ``sum(out * R)`` for a fixed random ``R``,
and each sampled coordinate compares the backward gradient with
``(L(x + h) - L(x - h)) / 2h``. A coordinate passes when the error is within
``max(abs_tol, rel_tol * |numeric|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import REGISTRY, Tensor, ops

F64 = np.float64


@dataclass
class CheckResult:
    name: str
    coords: int
    max_abs_err: float
    max_rel_err: float
    failures: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.coords > 0

    def line(self) -> str:
        flag = "ok  " if self.passed else "FAIL"
        return (
            f"{flag} {self.name:<16} coords={self.coords:<4d} max_abs={self.max_abs_err:.2e} "
            f"max_rel={self.max_rel_err:.2e} ({self.seconds:.2f}s)"
        )


def _compare(name, analytic, numeric, abs_tol, rel_tol, t0) -> CheckResult:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), 0.0)
    tol = np.maximum(abs_tol, rel_tol * np.abs(numeric))
    return CheckResult(
        name,
        len(err),
        float(err.max(initial=0.0)),
        float(rel.max(initial=0.0)),
        int(np.count_nonzero(err > tol)),
        time.perf_counter() - t0,
    )


def check_fn(
    name: str,
    fn: Callable,
    inputs: list,
    seed: int = 0,
    coords: int = 100,
    h: float = 1e-6,
    abs_tol: float = 1e-4,
    rel_tol: float = 1e-3,
) -> CheckResult:
    """Gradient check ``fn(*tensors)`` over float64 copies of ``inputs``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=F64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True, dtype=F64) for a in arrays]
    out = fn(*leaves)
    weights = rng.standard_normal(out.shape)
    loss = ops.sum(ops.mul(out, Tensor(weights, dtype=F64)))
    loss.backward()
    grads = [np.zeros_like(a) if t.grad is None else np.asarray(t.grad, dtype=F64) for a, t in zip(arrays, leaves)]

    def value() -> float:
        o = fn(*[Tensor(a, dtype=F64) for a in arrays])
        return float(np.sum(o.data.astype(F64) * weights))

    pool = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
    picks = rng.choice(len(pool), min(coords, len(pool)), replace=False)
    analytic, numeric = [], []
    for p in sorted(picks):
        i, j = pool[p]
        flat = arrays[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = value()
        flat[j] = orig - h
        down = value()
        flat[j] = orig
        numeric.append((up - down) / (2 * h))
        analytic.append(grads[i].reshape(-1)[j])
    return _compare(name, analytic, numeric, abs_tol, rel_tol, t0)


def _away_from(rng, shape, points=(0.0,), margin=0.05, scale=1.0):
    """Random values kept ``margin`` away from kinks at ``points``."""
    x = rng.standard_normal(shape) * scale
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.sign(x[close] - p + 1e-12) * margin * (1 + rng.uniform(size=close.sum()))
    return x


def _fractional_offsets(rng, shape, span=2):
    """Offsets whose fractional part stays in [0.2, 0.8] so bilinear weights are smooth."""
    whole = rng.integers(-span, span + 1, size=shape)
    return whole + rng.uniform(0.2, 0.8, size=shape)


def op_cases(seed: int = 0) -> dict:
    """Name -> (callable over tensors, input arrays), one per registered op."""
    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    cases = {
        "add": (ops.add, [r((4, 30)), r((4, 30))]),
        "sub": (ops.sub, [r((4, 30)), r((4, 30))]),
        "mul": (ops.mul, [r((4, 30)), r((4, 30))]),
        "div": (ops.div, [r((4, 30)), rng.uniform(0.5, 2.0, (4, 30)) * rng.choice([-1, 1], (4, 30))]),
        "neg": (ops.neg, [r((120,))]),
        "scale": (lambda a: ops.scale(a, -2.5), [r((120,))]),
        "add_scalar": (lambda a: ops.add_scalar(a, 3.0), [r((120,))]),
        "expand": (lambda a: ops.expand(a, (5, 4, 30)), [r((1, 4, 30))]),
        "reshape": (lambda a: ops.reshape(a, (10, 12)), [r((4, 30))]),
        "transpose": (lambda a: ops.transpose(a, (2, 0, 1)), [r((3, 5, 8))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=1), [r((2, 3, 20)), r((2, 2, 20))]),
        "take": (lambda a: ops.take(a, [2, 0, 2], axis=1), [r((5, 4, 10))]),
        "sum": (lambda a: ops.sum(a, axis=(0, 2), keepdims=True), [r((4, 5, 6))]),
        "mean": (lambda a: ops.mean(a, axis=1), [r((4, 5, 6))]),
        "global_avg_pool": (ops.global_avg_pool, [r((2, 6, 5, 5))]),
        "matmul": (ops.matmul, [r((2, 6, 5)), r((2, 5, 7))]),
        "linear": (ops.linear, [r((6, 10)), r((8, 10)), r((8,))]),
        "conv2d": (
            lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1, groups=2),
            [r((2, 4, 7, 7)), r((6, 2, 3, 3)), r((6,))],
        ),
        "deform_conv2d": (
            lambda x, w, o, b: ops.deform_conv2d(x, w, o, b, stride=1, padding=1),
            [r((2, 3, 6, 6)), r((4, 3, 3, 3)), _fractional_offsets(rng, (2, 18, 6, 6)), r((4,))],
        ),
        "relu": (ops.relu, [_away_from(rng, (120,))]),
        "sigmoid": (ops.sigmoid, [r((120,)) * 3]),
        "softplus": (ops.softplus, [r((120,)) * 3]),
        "gelu": (ops.gelu, [r((120,)) * 2]),
        "exp": (ops.exp, [r((120,))]),
        "log": (lambda a: ops.log(a, 1e-12), [rng.uniform(0.2, 3.0, (120,))]),
        "clamp_min": (lambda a: ops.clamp_min(a, 0.3), [_away_from(rng, (120,), points=(0.3,))]),
        "softmax": (ops.softmax, [r((12, 10))]),
        "log_softmax": (ops.log_softmax, [r((12, 10))]),
        "layer_norm": (ops.layer_norm, [r((6, 4, 8)), r((8,)), r((8,))]),
        "bilinear_resize": (lambda a: ops.bilinear_resize(a, (9, 11)), [r((2, 3, 4, 5))]),
    }
    missing = set(REGISTRY) - set(cases)
    if missing:
        raise RuntimeError(f"no gradient case for ops {sorted(missing)}")
    return cases


def check_ops(seed: int = 0, coords: int = 100, names: Optional[list] = None) -> list:
    results = []
    for name, (fn, inputs) in op_cases(seed).items():
        if names and name not in names:
            continue
        results.append(check_fn(name, fn, inputs, seed=seed, coords=coords))
    return results


def check_model(seed: int = 0, coords: int = 100, size: int = 32, rel_tol: float = 1e-2) -> CheckResult:
    """Full tiny model forward + total loss, gradients w.r.t. sampled parameters."""
    from .heads import BatchLabels, total_loss
    from .model import UGCANet

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    model = UGCANet(seed=seed)
    params = list(model.named_parameters())
    for name, p in params:
        p.data = p.data.astype(F64)
        if name.endswith("offset.weight"):
            # zero-initialized offsets would leave the deformable sampling untested
            p.data = rng.standard_normal(p.shape) * 0.05
    x = rng.uniform(0, 1, (2, 3, size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (((yy - size / 2) ** 2 + (xx - size / 3) ** 2) < (size / 4) ** 2).astype(F64)
    labels = BatchLabels(
        mu=np.array([[1, 1, 1, 1], [1, 0, 1, 0]], dtype=F64),
        pos=np.array([3, 7]),
        le=np.array([2, -1]),
        hp=np.array([1, 0]),
        masks=np.stack([mask[None], np.zeros((1, size, size))]),
    )

    def loss_value() -> Tensor:
        return total_loss(model(Tensor(x, dtype=F64)), labels)

    model.zero_grad()
    loss_value().backward()
    grads = {name: np.asarray(p.grad, dtype=F64) for name, p in params}

    pool = [(k, j) for k, (_, p) in enumerate(params) for j in range(p.data.size)]
    picks = sorted(rng.choice(len(pool), min(coords, len(pool)), replace=False))
    h = 1e-6
    analytic, numeric = [], []
    for pk in picks:
        k, j = pool[pk]
        name, p = params[k]
        flat = p.data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = loss_value().item()
        flat[j] = orig - h
        down = loss_value().item()
        flat[j] = orig
        numeric.append((up - down) / (2 * h))
        analytic.append(grads[name].reshape(-1)[j])
    return _compare("UGCANet-tiny", analytic, numeric, 1e-4, rel_tol, t0)


def run_suite(seed: int = 0, coords: int = 100, log=print) -> list:
    results = check_ops(seed, coords)
    results.append(check_model(seed, coords))
    if log is not None:
        for res in results:
            log(res.line())
    return results


__all__ = ["CheckResult", "check_fn", "check_ops", "check_model", "op_cases", "run_suite"]
