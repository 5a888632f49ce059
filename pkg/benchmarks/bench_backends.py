"""Throughput comparison of the compiled and pure-python solver backends.

Usage: python benchmarks/bench_backends.py [--rows N] [--k K] [--reps R]
"""

import argparse
import time

import numpy as np

from alphamargin import backend


def bench(impl, theta, q, alpha, reps):
    # warm-up, then best-of-reps wall time
    impl.posterior_batch(theta, q, alpha, 1e-10, 200)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        impl.posterior_batch(theta, q, alpha, 1e-10, 200)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--k", type=int, default=256)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    theta = rng.uniform(-8.0, 8.0, (args.rows, args.k))
    q = rng.uniform(0.1, 1.0, (args.rows, args.k))

    names = ["python"]
    if backend.HAVE_COMPILED:
        names.insert(0, "compiled")
    else:
        print("compiled extension not available; benchmarking python only")

    print(f"posterior_batch: {args.rows} rows x k={args.k}, best of {args.reps}")
    times = {}
    for alpha in (1.25, 1.5, 2.0):
        for name in names:
            sec = bench(backend.get_backend(name), theta, q, alpha, args.reps)
            times[(alpha, name)] = sec
            rate = args.rows / sec
            print(f"  alpha={alpha:<5} {name:>8}: {sec * 1e3:8.1f} ms  ({rate:,.0f} rows/s)")
        if len(names) == 2:
            speedup = times[(alpha, "python")] / times[(alpha, "compiled")]
            print(f"  alpha={alpha:<5} speedup: {speedup:.1f}x")


if __name__ == "__main__":
    main()
