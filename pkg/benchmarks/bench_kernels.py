#!/usr/bin/env python3
"""Time the numba and numpy kernel backends against each other.

Covers the three hot kernels (tile statistics, instance-mask statistics, LCS
table) at a few realistic sizes and prints best-of-N wall times per backend
with the resulting speedup.  Run as a script:

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from smearkit import kernels


def _tile_case(size, seed):
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    return lambda: kernels.tile_stats(rgb, 0.85)


def _mask_case(size, n_instances, seed):
    rng = np.random.default_rng(seed)
    labels = np.zeros((size, size), dtype=np.int64)
    for k in range(1, n_instances + 1):
        cx, cy = rng.integers(0, size, size=2)
        half = int(rng.integers(4, 18))
        labels[max(0, cy - half):cy + half, max(0, cx - half):cx + half] = k
    return lambda: kernels.mask_stats(labels)


def _lcs_case(length, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 20, size=length)
    b = rng.integers(0, 20, size=length)
    return lambda: kernels.lcs_len(a, b)


CASES = [
    ("tile_stats 256x256", _tile_case(256, 0)),
    ("tile_stats 512x512", _tile_case(512, 1)),
    ("tile_stats 1024x1024", _tile_case(1024, 2)),
    ("mask_stats 512x512/40", _mask_case(512, 40, 3)),
    ("mask_stats 1024x1024/120", _mask_case(1024, 120, 4)),
    ("lcs_len 128x128", _lcs_case(128, 5)),
    ("lcs_len 512x512", _lcs_case(512, 6)),
]


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats per case (best wins)")
    args = parser.parse_args()

    backends = ["numpy"]
    if kernels.HAVE_NUMBA:
        backends.append("numba")
    else:
        print("numba not importable; timing the numpy backend only\n")

    results = {}
    for backend in backends:
        kernels.set_backend(backend)
        for name, fn in CASES:
            fn()  # warm-up (and JIT compile on the numba lane)
            results[(backend, name)] = best_of(fn, args.repeats)
    kernels.set_backend("auto")

    width = max(len(name) for name, _ in CASES)
    header = f"{'case':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, _ in CASES:
        t_np = results[("numpy", name)]
        if "numba" in backends:
            t_nb = results[("numba", name)]
            print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  "
                  f"{t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {'-':>10}  {'-':>8}")


if __name__ == "__main__":
    main()
