#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeats N]

Each kernel is warmed up first (JIT compilation happens on the first
call), then timed over the best of N repeats on sizes representative of
a desk-scale corpus run. Requires numba; the numpy path is always
available regardless of the FVASD_NUMBA flag.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fvasd import kernels as K


def best_of(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not K.NUMBA_ENABLED:
        raise SystemExit("numba is unavailable or disabled (FVASD_NUMBA=0); nothing to compare")

    rng = np.random.default_rng(0)
    x = rng.standard_normal((20_000, 64))
    centroids = x[rng.choice(len(x), 50, replace=False)].copy()
    labels = rng.integers(0, 50, len(x)).astype(np.int64)
    sim = rng.uniform(-1, 1, (256, 256))
    sim = (sim + sim.T) / 2
    sim_labels = rng.integers(0, 32, 256).astype(np.int64)
    stream = rng.standard_normal((60_000, 32))
    det_keys = rng.integers(0, 500_000, 200_000).astype(np.int64)
    gt_keys = np.unique(rng.integers(0, 500_000, 80_000).astype(np.int64))
    signal = rng.standard_normal(1_000_000)

    cases = {
        "assign_clusters": ((x, centroids), "20k points x 50 centroids, D=64"),
        "sum_by_label": ((x, labels, 50), "20k points into 50 bins"),
        "ms_loss_grad": ((sim, sim_labels, 2.0, 50.0, 0.5, 0.1), "256x256 batch"),
        "window_cos_dist": ((stream, 20), "60k hops, D=32, w=20"),
        "greedy_match": ((det_keys, gt_keys), "200k detections vs 80k keys"),
        "moving_average": ((signal, 5), "1M samples, k=5"),
    }

    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>9}  size")
    print("-" * 78)
    for name, (call_args, size) in cases.items():
        py, nb = K.PAIRS[name]
        nb(*call_args)  # JIT warm-up
        t_py = best_of(py, call_args, args.repeats)
        t_nb = best_of(nb, call_args, args.repeats)
        print(f"{name:<18} {t_py * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_py / t_nb:>8.1f}x  {size}")


if __name__ == "__main__":
    main()
