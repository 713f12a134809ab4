"""Compare the compiled and reference deformable-sampling kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time for the forward sampling and its adjoint at a
few decoder-like shapes, plus the max difference between backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ugcanet.kernels import _reference

try:
    from ugcanet.kernels import _deform
except ImportError:  # pragma: no cover
    _deform = None

SHAPES = [  # (N, C, H, W)
    (8, 32, 16, 16),
    (8, 32, 32, 32),
    (2, 32, 64, 64),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _deform is None:
        print("compiled extension not built; only the reference backend is available")
    k, stride, pad = 3, 1, 1
    print(f"{'shape':<18} {'pass':<8} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>9}")
    for n, c, h, w in SHAPES:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((n, c, h, w))
        off = rng.uniform(-2, 2, (n, 2 * k * k, h, w))
        g = rng.standard_normal((n, c, k * k, h, w))
        cases = {
            "im2col": lambda m: m.deform_im2col(x, off, k, k, stride, pad, h, w),
            "col2im": lambda m: m.deform_col2im(x, off, g, k, k, stride, pad),
        }
        for name, call in cases.items():
            t_py, ref = best_of(lambda: call(_reference), args.repeat)
            if _deform is None:
                print(f"{str((n, c, h, w)):<18} {name:<8} {t_py * 1e3:>10.2f} {'-':>10} {'-':>8} {'-':>9}")
                continue
            t_cy, got = best_of(lambda: call(_deform), args.repeat)
            ref_t = ref if isinstance(ref, tuple) else (ref,)
            got_t = got if isinstance(got, tuple) else (got,)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(ref_t, got_t))
            print(
                f"{str((n, c, h, w)):<18} {name:<8} {t_py * 1e3:>10.2f} {t_cy * 1e3:>10.2f} "
                f"{t_py / t_cy:>7.1f}x {diff:>9.1e}"
            )


if __name__ == "__main__":
    main()
