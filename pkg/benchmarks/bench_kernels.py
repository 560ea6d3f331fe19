"""Timing comparison of the compiled kernels against the pure-Python fallback.

Run: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from flaegis import _kernels_py

try:
    from flaegis import _kernels
except ImportError:
    _kernels = None


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def cases():
    rng = np.random.default_rng(0)
    v = rng.normal(size=5000)
    yield "sax_symbols (5000, 90 bands)", "sax_symbols", (v, -3.0, 3.0, 90)

    rows = rng.integers(0, 90, size=(20, 229))
    yield "cosine_sim_int (20x229)", "cosine_sim_int", (rows,)

    a = rng.normal(size=(20, 20))
    yield "jacobi_eigh (20x20)", "jacobi_eigh", ((a + a.T) / 2,)

    x = rng.normal(size=(20, 2))
    cents = x[:2].copy()
    yield "kmeans_iterate (20x2)", "kmeans_iterate", (x, cents)

    pts = np.concatenate([rng.normal(0, 0.02, size=(15, 3)),
                          rng.normal(1, 0.02, size=(5, 3))])
    yield "meanshift_flat (20x3)", "meanshift_flat", (pts, 0.1)


def main():
    if _kernels is None:
        print("compiled kernels unavailable; showing pure-Python timings only")
    width = 36
    header = f"{'kernel':<{width}} {'python ms':>10}"
    if _kernels is not None:
        header += f" {'compiled ms':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, name, args in cases():
        py = timeit(getattr(_kernels_py, name), *tuple(np.copy(a) if isinstance(a, np.ndarray) else a for a in args))
        line = f"{label:<{width}} {py:>10.3f}"
        if _kernels is not None:
            cy = timeit(getattr(_kernels, name), *tuple(np.copy(a) if isinstance(a, np.ndarray) else a for a in args))
            line += f" {cy:>12.3f} {py / cy:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
