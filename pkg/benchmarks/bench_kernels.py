"""Timing comparison of the numba and numpy convolution kernels.

Runs the forward kernel and both adjoints at shapes taken from the default
training configuration (batch 4, 128 frequency bins, 100 frames) and prints
per-call wall time for each backend.  The first numba call per shape is
excluded from timing; it triggers jit compilation.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tfsep.kernels import numpy_ref

try:
    from tfsep.kernels import numba_jit
except ImportError:
    numba_jit = None


# (label, x shape, w shape, pad_left, pad_right)
CASES = [
    ("encoder in", (4, 128, 100), (24, 128, 3), 1, 1),
    ("encoder mid", (4, 24, 100), (24, 24, 3), 1, 1),
    ("encoder out", (4, 24, 100), (16, 24, 3), 1, 1),
    ("template conv", (4, 8, 100), (128, 8, 15), 14, 0),
    ("mask head", (4, 16, 100), (128, 16, 3), 1, 1),
]


def time_call(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(mod, label, x, w, pad_left, pad_right, repeats):
    y = mod.conv1d_fwd(x, w, pad_left, pad_right)
    g = np.ones_like(y)
    rows = []
    for name, fn, args in [
        ("fwd", mod.conv1d_fwd, (x, w, pad_left, pad_right)),
        ("gx", mod.conv1d_gx, (g, w, pad_left, x.shape[2])),
        ("gw", mod.conv1d_gw, (g, x, pad_left, w.shape[2])),
    ]:
        fn(*args)  # warmup / jit compile
        rows.append((name, time_call(fn, args, repeats)))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50,
                        help="timing repetitions per kernel (best-of)")
    args = parser.parse_args()

    if numba_jit is None:
        print("numba not importable; timing the numpy backend only")

    rng = np.random.default_rng(0)
    print(f"{'case':<14} {'kernel':<5} {'numpy ms':>9} {'numba ms':>9} {'speedup':>8}")
    for label, xs, ws, pl, pr in CASES:
        x = rng.normal(size=xs)
        w = rng.normal(size=ws)
        np_rows = bench_case(numpy_ref, label, x, w, pl, pr, args.repeats)
        nb_rows = bench_case(numba_jit, label, x, w, pl, pr, args.repeats) if numba_jit else None
        for i, (name, t_np) in enumerate(np_rows):
            if nb_rows is None:
                print(f"{label:<14} {name:<5} {t_np * 1e3:>9.3f} {'-':>9} {'-':>8}")
            else:
                t_nb = nb_rows[i][1]
                print(f"{label:<14} {name:<5} {t_np * 1e3:>9.3f} {t_nb * 1e3:>9.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
