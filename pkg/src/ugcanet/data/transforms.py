"""Resizing and the flip / hue-saturation / brightness-contrast augmentation chain."""

from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numpy as np

from ..autodiff.ops import interp_matrix
from .records import SampleRecord

SCALE_RATIOS = (0.75, 1.0, 1.25)
HUE_SHIFT_DEG = 10.0
SAT_RANGE = (0.8, 1.2)
BC_RANGE = (0.85, 1.15)
P_APPLY = 0.5


def _check_dims(h: int, w: int) -> None:
    if h <= 0 or w <= 0:
        raise ValueError(f"target size must be positive, got {h}x{w}")


def resize_bilinear(image: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of [C,H,W]; same sampling as the network upsampler."""
    _check_dims(h, w)
    c, h0, w0 = image.shape
    if (h0, w0) == (h, w):
        return image.copy()
    ry = interp_matrix(h0, h)
    rx = interp_matrix(w0, w)
    out = np.einsum("ij,cjk,lk->cil", ry, image.astype(np.float64), rx)
    return out.astype(image.dtype)


def resize_nearest(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    _check_dims(h, w)
    _, h0, w0 = mask.shape
    iy = np.minimum(((np.arange(h) + 0.5) * h0 / h).astype(int), h0 - 1)
    ix = np.minimum(((np.arange(w) + 0.5) * w0 / w).astype(int), w0 - 1)
    return mask[:, iy][:, :, ix].copy()


def scale_sizes(base: int, ratios=SCALE_RATIOS, multiple: int = 32) -> tuple:
    """Training sizes for multi-scale runs, rounded to a multiple of the encoder stride."""
    out = []
    for r in ratios:
        s = int(round(base * r / multiple)) * multiple
        out.append(max(s, multiple))
    return tuple(out)


def resize_sample(sample: SampleRecord, h: int, w: int) -> SampleRecord:
    mask = None if sample.mask is None else resize_nearest(sample.mask, h, w)
    img = np.clip(resize_bilinear(sample.image, h, w), 0.0, 1.0)
    return dataclasses.replace(sample, image=img, mask=mask)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """[3,...] in [0,1] -> hue in [0,1), saturation, value."""
    r, g, b = rgb.astype(np.float64)
    mx = np.max(rgb, axis=0).astype(np.float64)
    mn = np.min(rgb, axis=0).astype(np.float64)
    d = mx - mn
    safe = np.where(d > 0, d, 1.0)
    h = np.where(
        mx == r, ((g - b) / safe) % 6.0, np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0)
    )
    h = np.where(d > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx])


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros((3,) + h.shape)
    for k, (rr, gg, bb) in enumerate(table):
        sel = i == k
        out[0][sel], out[1][sel], out[2][sel] = rr[sel], gg[sel], bb[sel]
    return out


class AugmentGates(NamedTuple):
    hflip: bool
    vflip: bool
    huesat: bool
    brightness_contrast: bool


def draw(seed):
    """Gate decisions plus the generator positioned for magnitude draws."""
    rng = np.random.default_rng(seed)
    gates = AugmentGates(*(bool(u < P_APPLY) for u in rng.uniform(size=4)))
    return gates, rng


def gates(seed) -> AugmentGates:
    return draw(seed)[0]


def augment(sample: SampleRecord, seed) -> SampleRecord:
    """Randomly flip (image and mask together) and jitter colour; labels and mu untouched."""
    g, rng = draw(seed)
    hue = rng.uniform(-HUE_SHIFT_DEG, HUE_SHIFT_DEG) / 360.0
    sat = rng.uniform(*SAT_RANGE)
    bright = rng.uniform(*BC_RANGE)
    contrast = rng.uniform(*BC_RANGE)

    img = sample.image
    mask = sample.mask
    if g.hflip:
        img = img[:, :, ::-1]
        mask = None if mask is None else mask[:, :, ::-1]
    if g.vflip:
        img = img[:, ::-1]
        mask = None if mask is None else mask[:, ::-1]
    if g.huesat:
        hsv = rgb_to_hsv(img)
        hsv[0] = (hsv[0] + hue) % 1.0
        hsv[1] = np.clip(hsv[1] * sat, 0.0, 1.0)
        img = hsv_to_rgb(hsv)
    if g.brightness_contrast:
        mean = img.mean()
        img = (img - mean) * contrast + mean * bright
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    if mask is not None:
        mask = np.ascontiguousarray(mask)
    return dataclasses.replace(sample, image=np.ascontiguousarray(img), mask=mask)
