"""Time the numpy kernels against the numba ones on benchmark-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeats N]

The numba backend is warmed (compiled) before timing.  Sizes mirror real
usage: PRNG draws for per-image noise fields, 28x28x3 blur, and a 32x32
JPEG plane.
"""

import argparse
import time

import numpy as np

from permubench.jpeg import LUMA_TABLE, scaled_table
from permubench.kernels import np_backend

try:
    from permubench.kernels import nb_backend
except ImportError:
    nb_backend = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    img = (np.arange(28 * 28 * 3, dtype=np.float32).reshape(28, 28, 3)
           % 97) / 97.0
    plane = (np.arange(32 * 32, dtype=np.float64).reshape(32, 32) * 7) % 256
    qt = scaled_table(LUMA_TABLE, 50)
    # (name, call, agreement tolerance): exact for the integer stream,
    # 1e-6 for the float32 kernels, 1e-9 for the float64 JPEG path
    return [
        ("bulk_u64 (2352)", lambda b: b.bulk_u64(0xBEEF, 2352), 0.0),
        ("bulk_u64 (1M)", lambda b: b.bulk_u64(0xBEEF, 1_000_000), 0.0),
        ("normals (2352)", lambda b: b.normals(0xBEEF, 2352), 1e-6),
        ("normals (1M)", lambda b: b.normals(0xBEEF, 1_000_000), 1e-6),
        ("gaussian_blur (28x28x3)", lambda b: b.gaussian_blur(img, 1.5), 1e-6),
        ("jpeg_plane (32x32)", lambda b: b.jpeg_plane_roundtrip(plane, qt), 1e-9),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    table = cases()
    if nb_backend is not None:
        for _, fn, _tol in table:  # compile before the clock starts
            fn(nb_backend)

    width = max(len(name) for name, _, _ in table)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, fn, tol in table:
        t_np = timeit(lambda: fn(np_backend), args.repeats)
        if nb_backend is None:
            print(f"{name:<{width}}  {t_np * 1e3:>8.3f}ms  {'n/a':>10}  {'n/a':>8}")
            continue
        t_nb = timeit(lambda: fn(nb_backend), args.repeats)
        a, b = np.asarray(fn(np_backend)), np.asarray(fn(nb_backend))
        if a.dtype.kind == "u":  # float cast would drop low bits
            gap = 0.0 if np.array_equal(a, b) else float("inf")
        else:
            gap = np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))
        flag = "" if gap <= tol else f"  MISMATCH ({gap:.2e})"
        print(f"{name:<{width}}  {t_np * 1e3:>8.3f}ms  {t_nb * 1e3:>8.3f}ms  "
              f"{t_np / t_nb:>7.1f}x{flag}")


if __name__ == "__main__":
    main()
