"""Vectorized numpy/scipy implementation of the deformable sampling kernels.

Each image's bilinear sampling is expressed as a sparse matrix ``S`` of shape
[K*oh*ow, H*W] with at most four entries per row, so sampling is ``x @ S.T``
and the input gradient is ``g @ S``.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse


def _positions(offsets, kh, kw, stride, pad, oh, ow):
    k = kh * kw
    n = offsets.shape[0]
    ki, kj = np.divmod(np.arange(k), kw)
    base_y = (np.arange(oh) * stride - pad)[None, :, None] + ki[:, None, None]
    base_x = (np.arange(ow) * stride - pad)[None, None, :] + kj[:, None, None]
    off = offsets.reshape(n, k, 2, oh, ow)
    py = base_y[None] + off[:, :, 0]
    px = base_x[None] + off[:, :, 1]
    return py, px  # [N, K, oh, ow]


def _corners(py, px, h, w):
    """Flat indices, weights, and d/dy, d/dx weight factors for 4 corners."""
    inside = (py > -1) & (py < h) & (px > -1) & (px < w)
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly = py - y0
    lx = px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    out = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy = y0 + dy
        xx = x0 + dx
        valid = inside & (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        wy = ly if dy else 1.0 - ly
        wx = lx if dx else 1.0 - lx
        sy = 1.0 if dy else -1.0
        sx = 1.0 if dx else -1.0
        idx = np.where(valid, yy * w + xx, 0)
        out.append((idx, valid, wy * wx * valid, sy * wx * valid, wy * sx * valid))
    return out


def _sampling_matrix(corners, i, rows, hw):
    data = np.concatenate([c[2][i].ravel() for c in corners])
    cols = np.concatenate([c[0][i].ravel() for c in corners])
    rr = np.tile(np.arange(rows), 4)
    return sparse.csr_matrix((data, (rr, cols)), shape=(rows, hw))


def deform_im2col(x, offsets, kh, kw, stride, pad, oh, ow):
    n, c, h, w = x.shape
    k = kh * kw
    py, px = _positions(offsets, kh, kw, stride, pad, oh, ow)
    corners = _corners(py, px, h, w)
    rows = k * oh * ow
    cols = np.empty((n, c, rows), dtype=np.float64)
    for i in range(n):
        s = _sampling_matrix(corners, i, rows, h * w)
        cols[i] = (s @ x[i].reshape(c, h * w).T).T
    return cols.reshape(n, c, k, oh, ow)


def deform_col2im(x, offsets, gcols, kh, kw, stride, pad):
    n, c, h, w = x.shape
    k = kh * kw
    oh, ow = gcols.shape[3], gcols.shape[4]
    py, px = _positions(offsets, kh, kw, stride, pad, oh, ow)
    corners = _corners(py, px, h, w)
    rows = k * oh * ow
    gx = np.empty((n, c, h, w), dtype=np.float64)
    goff = np.zeros((n, k, 2, oh, ow), dtype=np.float64)
    xf = x.reshape(n, c, h * w)
    for i in range(n):
        s = _sampling_matrix(corners, i, rows, h * w)
        g = gcols[i].reshape(c, rows)
        gx[i] = (s.T @ g.T).T.reshape(c, h, w)
        for idx, valid, _, dwy, dwx in corners:
            v = xf[i][:, idx[i].ravel()] * valid[i].ravel()  # [C, rows]
            gv = (g * v).sum(axis=0).reshape(k, oh, ow)
            goff[i, :, 0] += gv * dwy[i]
            goff[i, :, 1] += gv * dwx[i]
    return gx, goff.reshape(n, 2 * k, oh, ow)
