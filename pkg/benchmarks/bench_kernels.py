#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times the three hot kernels (RNG fills, ranked-contrast scan, greedy
retrieval) plus an end-to-end loss evaluation at benchmark batch shape.
The compiled backend must be built first: python setup.py build_ext --inplace
"""

import argparse
import time

import numpy as np

from rankclap import _kernels_py

try:
    from rankclap import _accel
except ImportError:
    _accel = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def scan_inputs(n=64):
    rng = np.random.default_rng(0)
    z = rng.normal(size=(n, n))
    d = rng.uniform(size=(n, n))
    order = np.argsort(d, axis=1, kind="stable")
    z_sorted = np.take_along_axis(z, order, axis=1)
    d_sorted = np.take_along_axis(d, order, axis=1)
    same = np.zeros((n, n), dtype=np.uint8)
    same[:, 1:] = d_sorted[:, 1:] == d_sorted[:, :-1]
    return z_sorted, same


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _accel is None:
        print("compiled backend not built; run: python setup.py build_ext --inplace")
        return

    state = (1, 2, 3, 4)
    z_sorted, same = scan_inputs()
    sim = np.random.default_rng(1).normal(size=(14, 1000))

    cases = [
        ("fill_uniform(200k)", lambda m: m.fill_uniform(state, 200_000)),
        ("fill_normal(200k)", lambda m: m.fill_normal(state, 200_000)),
        ("rnc_scan(64x64) x100", lambda m: [m.rnc_scan(z_sorted, same) for _ in range(100)]),
        ("greedy_retrieve(14x1000) x100", lambda m: [m.greedy_retrieve(sim) for _ in range(100)]),
    ]

    print(f"{'kernel':32s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, fn in cases:
        t_py = timeit(lambda: fn(_kernels_py), args.repeats)
        t_cy = timeit(lambda: fn(_accel), args.repeats)
        print(f"{name:32s} {t_py*1e3:9.2f}ms {t_cy*1e3:9.2f}ms {t_py/t_cy:7.1f}x")

    # sanity: backends agree
    u1, s1 = _kernels_py.fill_uniform(state, 1000)
    u2, s2 = _accel.fill_uniform(state, 1000)
    assert np.array_equal(u1, u2) and s1 == s2
    d1, g1 = _kernels_py.rnc_scan(z_sorted, same)
    d2, g2 = _accel.rnc_scan(z_sorted, same)
    assert np.abs(d1 - d2).max() < 1e-12 and np.abs(g1 - g2).max() < 1e-12
    print("\nbackend agreement checks passed")


if __name__ == "__main__":
    main()
