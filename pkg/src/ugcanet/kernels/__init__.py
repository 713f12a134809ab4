"""Hot kernels: deformable bilinear sampling and its adjoint.

The compiled extension ``_deform`` is used when it imports; otherwise the
vectorized numpy/scipy reference runs. Set ``UGCANET_PURE_PYTHON=1`` to force
the reference path.
"""

from __future__ import annotations

import os

from . import _reference

BACKEND = "python"

if os.environ.get("UGCANET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _deform as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _reference
else:
    _impl = _reference


def deform_im2col(x, offsets, kh, kw, stride, pad, oh, ow):
    """Bilinearly sampled columns, float64 [N, C, kh*kw, oh, ow]."""
    return _impl.deform_im2col(x, offsets, kh, kw, stride, pad, oh, ow)


def deform_col2im(x, offsets, gcols, kh, kw, stride, pad):
    """Adjoint of :func:`deform_im2col`: gradients for input and offsets."""
    return _impl.deform_col2im(x, offsets, gcols, kh, kw, stride, pad)
