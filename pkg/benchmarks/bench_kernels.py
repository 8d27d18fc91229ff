"""njit vs numpy timings for the two kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first jit call compiles (or loads the on-disk cache); it is timed
separately and excluded from the steady-state numbers.
"""

import argparse
import time

import numpy as np

from compound_sched import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    print(f"numba available: {kernels.HAS_NUMBA}")
    print(f"{'kernel':<16}{'n':>8}{'numpy ms':>12}{'njit ms':>12}{'ratio':>8}")

    t0 = time.perf_counter()
    kernels.dominated_mask_jit(rng.random((4, 4)))
    kernels.peak_usage_jit([0], [1], [1])
    print(f"(first jit call incl. compile/cache load: {1e3 * (time.perf_counter() - t0):.1f} ms)")

    for n in (100, 500, 2000):
        pts = rng.integers(0, 50, size=(n, 4)).astype(np.float64)
        assert np.array_equal(kernels.dominated_mask_jit(pts), kernels.dominated_mask_numpy(pts))
        a = best_of(lambda: kernels.dominated_mask_numpy(pts), args.repeat)
        b = best_of(lambda: kernels.dominated_mask_jit(pts), args.repeat)
        print(f"{'dominated_mask':<16}{n:>8}{a * 1e3:>12.2f}{b * 1e3:>12.2f}{a / b:>8.1f}")

    for n in (1_000, 100_000, 1_000_000):
        starts = rng.integers(0, 10 * n, size=n)
        ends = starts + rng.integers(1, 1000, size=n)
        units = rng.integers(1, 9, size=n)
        assert kernels.peak_usage_jit(starts, ends, units) == kernels.peak_usage_numpy(starts, ends, units)
        a = best_of(lambda: kernels.peak_usage_numpy(starts, ends, units), args.repeat)
        b = best_of(lambda: kernels.peak_usage_jit(starts, ends, units), args.repeat)
        print(f"{'peak_usage':<16}{n:>8}{a * 1e3:>12.2f}{b * 1e3:>12.2f}{a / b:>8.1f}")


if __name__ == "__main__":
    main()
