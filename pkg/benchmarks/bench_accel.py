"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run with `python benchmarks/bench_accel.py`. Compares the jitted and plain
implementations of the min-norm Frank-Wolfe solve and the nondominated-mask
scan on workloads shaped like the shipped experiments (hundreds of thousands
of small solves; front extraction over a few thousand points).
"""

import time

import numpy as np

from moograd import accel


def time_fn(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_fw(n_instances=20_000, m=2, n=8):
    rng = np.random.default_rng(0)
    grams = []
    for _ in range(n_instances):
        w = rng.normal(size=(m, n))
        grams.append(np.ascontiguousarray(w @ w.T))

    def run(kernel):
        total = 0.0
        for g in grams:
            lam, gap, it, ok = kernel(g, 1e-10, 200)
            total += lam[0]
        return total

    if accel.NUMBA_ENABLED:
        run(accel.fw_min_norm)  # compile outside the timed region
    t_jit = time_fn(run, accel.fw_min_norm)
    t_py = time_fn(run, accel.fw_min_norm_py)
    return t_jit, t_py


def bench_mask(n_points=4000, m=2):
    rng = np.random.default_rng(1)
    pts = np.ascontiguousarray(rng.uniform(size=(n_points, m)))
    if accel.NUMBA_ENABLED:
        accel.nondominated_mask(pts)
    t_jit = time_fn(accel.nondominated_mask, pts)
    t_py = time_fn(accel.nondominated_mask_py, pts)
    return t_jit, t_py


def main():
    mode = "numba" if accel.NUMBA_ENABLED else "numpy fallback (numba disabled)"
    print(f"active kernel path: {mode}")
    print(f"{'kernel':<28}{'active':>12}{'fallback':>12}{'speedup':>10}")
    for name, (t_jit, t_py) in (
        ("fw_min_norm x20k (M=2)", bench_fw()),
        ("fw_min_norm x20k (M=4)", bench_fw(m=4)),
        ("nondominated_mask 4k pts", bench_mask()),
    ):
        print(f"{name:<28}{t_jit:>11.3f}s{t_py:>11.3f}s{t_py / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
