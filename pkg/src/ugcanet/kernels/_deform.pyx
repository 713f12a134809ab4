# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bilinear sampling kernels for deformable convolution.

Per batch item the four corner indices and bilinear weights of every sampling
point are computed once (index -1 marks a corner outside the image), then each
channel is swept over contiguous memory.
"""

import numpy as np
from libc.math cimport floor


cdef void _corners(const double[:, :, ::1] off, Py_ssize_t k, Py_ssize_t kw,
                   Py_ssize_t oh, Py_ssize_t ow, Py_ssize_t h, Py_ssize_t w,
                   int stride, int pad, Py_ssize_t[:, ::1] idx, double[:, ::1] wt,
                   double[:, ::1] frac) noexcept nogil:
    cdef Py_ssize_t t, i, j, p, y0, x0
    cdef double py, px, ly, lx
    for t in range(k):
        for i in range(oh):
            for j in range(ow):
                p = (t * oh + i) * ow + j
                py = i * stride - pad + t // kw + off[2 * t, i, j]
                px = j * stride - pad + t % kw + off[2 * t + 1, i, j]
                idx[p, 0] = -1
                idx[p, 1] = -1
                idx[p, 2] = -1
                idx[p, 3] = -1
                wt[p, 0] = 0.0
                wt[p, 1] = 0.0
                wt[p, 2] = 0.0
                wt[p, 3] = 0.0
                frac[p, 0] = 0.0
                frac[p, 1] = 0.0
                if py <= -1 or py >= h or px <= -1 or px >= w:
                    continue
                y0 = <Py_ssize_t>floor(py)
                x0 = <Py_ssize_t>floor(px)
                ly = py - y0
                lx = px - x0
                frac[p, 0] = ly
                frac[p, 1] = lx
                if y0 >= 0 and x0 >= 0:
                    idx[p, 0] = y0 * w + x0
                if y0 >= 0 and x0 + 1 < w:
                    idx[p, 1] = y0 * w + x0 + 1
                if y0 + 1 < h and x0 >= 0:
                    idx[p, 2] = (y0 + 1) * w + x0
                if y0 + 1 < h and x0 + 1 < w:
                    idx[p, 3] = (y0 + 1) * w + x0 + 1
                wt[p, 0] = (1 - ly) * (1 - lx)
                wt[p, 1] = (1 - ly) * lx
                wt[p, 2] = ly * (1 - lx)
                wt[p, 3] = ly * lx


def deform_im2col(const double[:, :, :, ::1] x, const double[:, :, :, ::1] offsets,
                  int kh, int kw, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t k = kh * kw
    cdef Py_ssize_t npts = k * oh * ow
    out = np.zeros((n, c, npts), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef const double[:, :, ::1] xf = np.asarray(x).reshape(n, c, h * w)
    cdef Py_ssize_t[:, ::1] idx = np.empty((npts, 4), dtype=np.intp)
    cdef double[:, ::1] wt = np.empty((npts, 4), dtype=np.float64)
    cdef double[:, ::1] frac = np.empty((npts, 2), dtype=np.float64)
    cdef Py_ssize_t b, ch, p, q
    cdef double acc
    with nogil:
        for b in range(n):
            _corners(offsets[b], k, kw, oh, ow, h, w, stride, pad, idx, wt, frac)
            for ch in range(c):
                for p in range(npts):
                    acc = 0.0
                    for q in range(4):
                        if idx[p, q] >= 0:
                            acc = acc + wt[p, q] * xf[b, ch, idx[p, q]]
                    cols[b, ch, p] = acc
    return out.reshape(n, c, k, oh, ow)


def deform_col2im(const double[:, :, :, ::1] x, const double[:, :, :, ::1] offsets,
                  const double[:, :, :, :, ::1] gcols, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t k = kh * kw
    cdef Py_ssize_t oh = gcols.shape[3], ow = gcols.shape[4]
    cdef Py_ssize_t npts = k * oh * ow
    gx_arr = np.zeros((n, c, h * w), dtype=np.float64)
    goff_arr = np.zeros((n, k, 2, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] goff = goff_arr
    cdef const double[:, :, ::1] xf = np.asarray(x).reshape(n, c, h * w)
    cdef const double[:, :, ::1] gf = np.asarray(gcols).reshape(n, c, npts)
    cdef Py_ssize_t[:, ::1] idx = np.empty((npts, 4), dtype=np.intp)
    cdef double[:, ::1] wt = np.empty((npts, 4), dtype=np.float64)
    cdef double[:, ::1] frac = np.empty((npts, 2), dtype=np.float64)
    cdef Py_ssize_t b, ch, p, q, t, s, m = oh * ow
    cdef double gv, ly, lx, v00, v01, v10, v11
    with nogil:
        for b in range(n):
            _corners(offsets[b], k, kw, oh, ow, h, w, stride, pad, idx, wt, frac)
            for ch in range(c):
                for p in range(npts):
                    gv = gf[b, ch, p]
                    if gv == 0.0:
                        continue
                    for q in range(4):
                        if idx[p, q] >= 0:
                            gx[b, ch, idx[p, q]] += gv * wt[p, q]
                    v00 = xf[b, ch, idx[p, 0]] if idx[p, 0] >= 0 else 0.0
                    v01 = xf[b, ch, idx[p, 1]] if idx[p, 1] >= 0 else 0.0
                    v10 = xf[b, ch, idx[p, 2]] if idx[p, 2] >= 0 else 0.0
                    v11 = xf[b, ch, idx[p, 3]] if idx[p, 3] >= 0 else 0.0
                    ly = frac[p, 0]
                    lx = frac[p, 1]
                    t = p // m
                    s = p - t * m
                    # points outside the image have all-zero corners, so both terms vanish
                    goff[b, t, 0, s] += gv * ((1 - lx) * (v10 - v00) + lx * (v11 - v01))
                    goff[b, t, 1, s] += gv * ((1 - ly) * (v01 - v00) + ly * (v11 - v10))
    return gx_arr.reshape(n, c, h, w), goff_arr.reshape(n, 2 * k, oh, ow)
