"""Differentiable primitives.

Storage follows the operands' dtype (float32 by default); reductions and
contractions accumulate in float64 and round once on output. Backward rules
work in float64 throughout and are cast to the leaf dtype when stored.

Binary elementwise ops require equal shapes. Broadcasting is explicit via
:func:`expand`; :func:`matmul` alone broadcasts its leading batch dims.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .. import kernels
from .tensor import Tensor, attach

F64 = np.float64

#: name -> op function, for every op with a backward rule
REGISTRY: dict = {}


def differentiable(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        fn.op_name = name
        return fn

    return deco


class ShapeError(ValueError):
    pass


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _dtype(*ts: Tensor):
    return np.result_type(*(t.dtype for t in ts))


def _new(data: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), dtype=dtype)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (use expand() to broadcast)")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


@differentiable("add")
def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = _new(a.data + b.data, _dtype(a, b))
    return attach(out, "add", (a, b), lambda g: (g, g))


@differentiable("sub")
def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = _new(a.data - b.data, _dtype(a, b))
    return attach(out, "sub", (a, b), lambda g: (g, -g))


@differentiable("mul")
def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = _new(a.data * b.data, _dtype(a, b))
    ad, bd = a.data, b.data
    return attach(out, "mul", (a, b), lambda g: (g * bd, g * ad))


@differentiable("div")
def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    ad, bd = a.data.astype(F64), b.data.astype(F64)
    out = _new(ad / bd, _dtype(a, b))
    return attach(out, "div", (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


@differentiable("neg")
def neg(a: Tensor) -> Tensor:
    return attach(_new(-a.data, a.dtype), "neg", (a,), lambda g: (-g,))


@differentiable("scale")
def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return attach(_new(a.data * c, a.dtype), "scale", (a,), lambda g: (g * c,))


@differentiable("add_scalar")
def add_scalar(a: Tensor, c: float) -> Tensor:
    return attach(_new(a.data + float(c), a.dtype), "add_scalar", (a,), lambda g: (g,))


@differentiable("expand")
def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``a`` to ``shape`` (numpy rules). Gradient sums back."""
    shape = tuple(shape)
    src = a.shape
    out = _new(np.broadcast_to(a.data, shape), a.dtype)

    def rule(g):
        lead = len(shape) - len(src)
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return attach(out, "expand", (a,), rule)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


@differentiable("reshape")
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    out = _new(a.data.reshape(tuple(shape)), a.dtype)
    return attach(out, "reshape", (a,), lambda g: (g.reshape(src),))


@differentiable("transpose")
def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    out = _new(np.transpose(a.data, axes), a.dtype)
    return attach(out, "transpose", (a,), lambda g: (np.transpose(g, inv),))


@differentiable("concat")
def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    out = _new(np.concatenate([t.data for t in tensors], axis=axis), _dtype(*tensors))
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return attach(out, "concat", tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


@differentiable("take")
def take(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather slices along ``axis``."""
    idx = np.asarray(indices, dtype=np.int64)
    src = a.shape
    out = _new(np.take(a.data, idx, axis=axis), a.dtype)

    def rule(g):
        full = np.zeros(src, dtype=F64)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return attach(out, "take", (a,), rule)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


@differentiable("sum")
def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    src = a.shape
    out = _new(a.data.sum(axis=axes, keepdims=keepdims, dtype=F64), a.dtype)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src),)

    return attach(out, "sum", (a,), rule)


@differentiable("mean")
def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    src = a.shape
    count = int(np.prod([src[ax] for ax in axes])) if axes else 1
    out = _new(a.data.mean(axis=axes, keepdims=keepdims, dtype=F64), a.dtype)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src),)

    return attach(out, "mean", (a,), rule)


@differentiable("global_avg_pool")
def global_avg_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C]."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = _new(x.data.mean(axis=(2, 3), dtype=F64), x.dtype)

    def rule(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape),)

    return attach(out, "global_avg_pool", (x,), rule)


# ---------------------------------------------------------------------------
# contractions
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


@differentiable("matmul")
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[.., M, K] @ [.., K, P]``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot contract {a.shape} with {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data.astype(F64), b.data.astype(F64)
    out = _new(ad @ bd, _dtype(a, b))

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return attach(out, "matmul", (a, b), rule)


@differentiable("linear")
def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x[..., in] @ w[out, in].T + b[out]``."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    xd = x.data.reshape(-1, x.shape[-1]).astype(F64)
    wd = w.data.astype(F64)
    y = xd @ wd.T
    if b is not None:
        y += b.data
    out = _new(y.reshape(lead + (w.shape[0],)), _dtype(x, w))
    parents = (x, w) if b is None else (x, w, b)

    def rule(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ wd).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ xd if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return attach(out, "linear", parents, rule)


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Strided view [N, C, oh, ow, kh, kw] over a padded input."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]


def _col2im(gcols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`_windows`; ``gcols`` is [N, C, oh, ow, kh, kw]."""
    n, c, h, w = shape
    oh, ow = gcols.shape[2], gcols.shape[3]
    gx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=F64)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += gcols[
                :, :, :, :, i, j
            ]
    return gx[:, :, pad : pad + h, pad : pad + w]


@differentiable("conv2d")
def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Zero-padded 2D cross-correlation, NCHW."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd_ = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ShapeError(f"conv2d: weight {w.shape} incompatible with input {x.shape} at groups={groups}")
    if kh > h + 2 * padding or kw > wd_ + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape} (padding {padding})")
    oh, ow = _conv_out(h, kh, stride, padding), _conv_out(wd_, kw, stride, padding)

    xp = np.pad(x.data.astype(F64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, kh, kw, stride, oh, ow)
    wd = w.data.astype(F64)
    cout_g = cout // groups
    if groups == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin * kh * kw)
        y = (cols @ wd.reshape(cout, -1).T).reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    else:
        wg = wd.reshape(groups, cout_g, cin_g, kh, kw)
        wing = win.reshape(n, groups, cin_g, oh, ow, kh, kw)
        y = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=True).reshape(n, cout, oh, ow)
    if b is not None:
        y = y + b.data.astype(F64)[None, :, None, None]
    out = _new(y, _dtype(x, w))
    parents = (x, w) if b is None else (x, w, b)

    def rule(g):
        gx = gw = None
        if groups == 1:
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
            if w.requires_grad:
                gw = (g2.T @ cols).reshape(w.shape)
            if x.requires_grad:
                gcols = (g2 @ wd.reshape(cout, -1)).reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
                gx = _col2im(gcols, x.shape, kh, kw, stride, padding)
        else:
            gg = g.reshape(n, groups, cout_g, oh, ow)
            if w.requires_grad:
                gw = np.einsum("ngohw,ngchwij->gocij", gg, wing, optimize=True).reshape(w.shape)
            if x.requires_grad:
                gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True).reshape(n, cin, oh, ow, kh, kw)
                gx = _col2im(gcols, x.shape, kh, kw, stride, padding)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return attach(out, "conv2d", parents, rule)


@differentiable("deform_conv2d")
def deform_conv2d(
    x: Tensor,
    w: Tensor,
    offsets: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Deformable convolution with per-tap learned sampling offsets.

    ``offsets`` is [N, 2*kh*kw, H', W'] in pixels; channel ``2k`` is the row
    shift and ``2k+1`` the column shift of tap ``k = ki*kw + kj``. Samples are
    bilinear with zeros outside the input.
    """
    n, cin, h, wd_ = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ShapeError(f"deform_conv2d: weight {w.shape} does not match input {x.shape}")
    if kh > h + 2 * padding or kw > wd_ + 2 * padding:
        raise ShapeError(f"deform_conv2d: kernel {kh}x{kw} larger than padded input {x.shape}")
    oh, ow = _conv_out(h, kh, stride, padding), _conv_out(wd_, kw, stride, padding)
    k = kh * kw
    if offsets.ndim != 4 or offsets.shape[1] != 2 * k:
        raise ShapeError(f"deform_conv2d: offsets need {2 * k} channels, got shape {offsets.shape}")
    if offsets.shape[0] != n or offsets.shape[2:] != (oh, ow):
        raise ShapeError(f"deform_conv2d: offsets {offsets.shape} do not match output grid {(n, oh, ow)}")

    xd = np.ascontiguousarray(x.data, dtype=F64)
    od = np.ascontiguousarray(offsets.data, dtype=F64)
    cols = kernels.deform_im2col(xd, od, kh, kw, stride, padding, oh, ow)  # [N, C, K, oh, ow]
    wd = w.data.astype(F64).reshape(cout, cin * k)
    cols2 = cols.reshape(n, cin * k, oh * ow)
    y = np.matmul(wd, cols2).reshape(n, cout, oh, ow)
    if b is not None:
        y = y + b.data.astype(F64)[None, :, None, None]
    out = _new(y, _dtype(x, w, offsets))
    parents = (x, w, offsets) if b is None else (x, w, offsets, b)

    def rule(g):
        g2 = g.reshape(n, cout, oh * ow)
        gw = np.einsum("nop,ncp->oc", g2, cols2).reshape(w.shape) if w.requires_grad else None
        gx = goff = None
        if x.requires_grad or offsets.requires_grad:
            gcols = np.ascontiguousarray(np.matmul(wd.T, g2).reshape(n, cin, k, oh, ow))
            gx, goff = kernels.deform_col2im(xd, od, gcols, kh, kw, stride, padding)
        if b is None:
            return gx, gw, goff
        return gx, gw, goff, g.sum(axis=(0, 2, 3))

    return attach(out, "deform_conv2d", parents, rule)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


@differentiable("relu")
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return attach(_new(np.where(mask, x.data, 0), x.dtype), "relu", (x,), lambda g: (g * mask,))


@differentiable("sigmoid")
def sigmoid(x: Tensor) -> Tensor:
    s = special.expit(x.data.astype(F64))
    return attach(_new(s, x.dtype), "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


@differentiable("softplus")
def softplus(x: Tensor) -> Tensor:
    """``log(1 + exp(x))``, computed stably."""
    xd = x.data.astype(F64)
    y = np.logaddexp(0.0, xd)
    return attach(_new(y, x.dtype), "softplus", (x,), lambda g: (g * special.expit(xd),))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@differentiable("gelu")
def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    xd = x.data.astype(F64)
    cdf = 0.5 * (1.0 + special.erf(xd / _SQRT2))

    def rule(g):
        return (g * (cdf + xd * _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)),)

    return attach(_new(xd * cdf, x.dtype), "gelu", (x,), rule)


@differentiable("exp")
def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data.astype(F64))
    return attach(_new(y, x.dtype), "exp", (x,), lambda g: (g * y,))


@differentiable("log")
def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; zero gradient where the floor binds."""
    xd = x.data.astype(F64)
    clipped = np.maximum(xd, floor) if floor > 0 else xd
    live = xd > floor if floor > 0 else np.ones_like(xd, dtype=bool)
    y = np.log(clipped)
    return attach(_new(y, x.dtype), "log", (x,), lambda g: (np.where(live, g / clipped, 0.0),))


@differentiable("clamp_min")
def clamp_min(x: Tensor, lo: float) -> Tensor:
    live = x.data > lo
    return attach(_new(np.where(live, x.data, lo), x.dtype), "clamp_min", (x,), lambda g: (g * live,))


def _check_last(op: str, x: Tensor) -> None:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"{op} needs a non-empty last dimension, got shape {x.shape}")


@differentiable("softmax")
def softmax(x: Tensor) -> Tensor:
    """Softmax over the last dimension."""
    _check_last("softmax", x)
    xd = x.data.astype(F64)
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return attach(_new(s, x.dtype), "softmax", (x,), rule)


@differentiable("log_softmax")
def log_softmax(x: Tensor) -> Tensor:
    _check_last("log_softmax", x)
    xd = x.data.astype(F64)
    z = xd - xd.max(axis=-1, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    s = np.exp(ls)

    def rule(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return attach(_new(ls, x.dtype), "log_softmax", (x,), rule)


@differentiable("layer_norm")
def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None, eps: float = 1e-6) -> Tensor:
    """Normalize over the last dimension, then apply the optional affine."""
    _check_last("layer_norm", x)
    xd = x.data.astype(F64)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat
    if gamma is not None:
        y = y * gamma.data.astype(F64)
    if beta is not None:
        y = y + beta.data.astype(F64)
    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    out = _new(y, _dtype(*parents))

    def rule(g):
        gh = g * gamma.data.astype(F64) if gamma is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        red = tuple(range(x.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=red))
        if beta is not None:
            grads.append(g.sum(axis=red))
        return tuple(grads)

    return attach(out, "layer_norm", parents, rule)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] linear interpolation weights, half-pixel centers.

    Matches the align-corners=False convention: source coordinate
    ``(i + 0.5) * n_in / n_out - 0.5``, clamped below at 0.
    """
    m = np.zeros((n_out, n_in), dtype=F64)
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


@differentiable("bilinear_resize")
def bilinear_resize(x: Tensor, size: Sequence[int]) -> Tensor:
    """Bilinear resize of the two trailing dims to ``size``."""
    oh, ow = int(size[0]), int(size[1])
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"bilinear_resize: target size must be positive, got {size}")
    h, w = x.shape[-2:]
    ry, rx = interp_matrix(h, oh), interp_matrix(w, ow)
    y = ry @ x.data.astype(F64) @ rx.T
    return attach(_new(y, x.dtype), "bilinear_resize", (x,), lambda g: (ry.T @ g @ rx,))


def bilinear_upsample(x: Tensor, scale: int) -> Tensor:
    h, w = x.shape[-2:]
    return bilinear_resize(x, (h * scale, w * scale))
