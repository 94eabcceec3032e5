"""Time the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats 25]
"""

import argparse
import time

import numpy as np

from kvtriage import _kernels_numpy

try:
    from kvtriage import _kernels_numba
except ImportError:
    _kernels_numba = None


def _time(fn, *args, repeats):
    fn(*args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=25)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    logits = rng.normal(0, 3, (32, 4096))
    pooled = rng.random(4096)
    matrix = rng.normal(0, 1, (4096, 64))
    a = rng.dirichlet(np.full(16, 0.3))
    keep = np.zeros(16, dtype=np.uint8)
    keep[rng.choice(16, 8, replace=False)] = 1
    pv = rng.normal(0, 1, (16, 8))

    # (label, kernel, args, repeats) — the enumeration case is capped, the
    # pure-python fallback walks C(16,8) = 12870 keep sets per call
    cases = [
        ("softmax_rows 32x4096", "softmax_rows", (logits, 4.0), args.repeats),
        ("max_pool_same 4096 k7", "max_pool_same", (pooled, 7), args.repeats),
        ("row_abs_sums 4096x64", "row_abs_sums", (matrix,), args.repeats),
        ("row_euclid_norms 4096x64", "row_euclid_norms", (matrix,), args.repeats),
        ("perturbation_distance n=16", "perturbation_distance",
         (a, keep, pv, False), args.repeats),
        ("oracle C(16,8) enumeration", "min_perturbation_exhaustive",
         (a, pv, 8, False), min(3, args.repeats)),
    ]

    print(f"{'kernel':<32} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for label, name, call_args, repeats in cases:
        t_np = _time(getattr(_kernels_numpy, name), *call_args, repeats=repeats)
        if _kernels_numba is None:
            print(f"{label:<32} {t_np * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}")
            continue
        t_nb = _time(getattr(_kernels_numba, name), *call_args, repeats=repeats)
        print(
            f"{label:<32} {t_np * 1e3:>10.3f}ms {t_nb * 1e3:>10.3f}ms {t_np / t_nb:>8.1f}x"
        )


if __name__ == "__main__":
    main()
