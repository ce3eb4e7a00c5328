"""Compare the numba and pure-numpy kernel builds on the hot paths.

Run:  python3 benchmarks/bench_kernels.py
The numpy-only path is what you get at import time with
FLOWQUERY_NO_NUMBA=1; here both builds are timed side by side.
"""

import time

import numpy as np

from flowquery import _kernels as K

REPEATS = 3


def best_of(fn, *args):
    times = []
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_trilinear(n_pts=100_000):
    rng = np.random.default_rng(0)
    n = 32
    data = rng.standard_normal((n * n * n, 3))
    bmin, bmax = np.full(3, -1.0), np.full(3, 1.0)
    pts = rng.uniform(-1, 1, size=(n_pts, 3))
    args = (data, n, n, n, bmin, bmax, pts)
    return ("trilinear_many", f"{n_pts:,} pts",
            best_of(K.trilinear_many_numpy, *args),
            best_of(K.trilinear_many_numba, *args) if K.USING_NUMBA else None)


def bench_trace(n_traces=40):
    rng = np.random.default_rng(1)
    n = 24
    data = 0.2 * rng.standard_normal((n * n * n, 3))
    bmin, bmax = np.full(3, -1.0), np.full(3, 1.0)
    seeds = rng.uniform(-0.5, 0.5, size=(n_traces, 3))

    def run(fn):
        for s in seeds:
            fn(data, n, n, n, bmin, bmax, s, 0.01, 300, 1e-9, 1.0)

    return ("trace_rk4", f"{n_traces} traces x 300 steps",
            best_of(run, K.trace_rk4_numpy),
            best_of(run, K.trace_rk4_numba) if K.USING_NUMBA else None)


def bench_distance_matrices(n_seg=20_000):
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.standard_normal((n_seg, 32, 3)), axis=1)
    arcs = np.ones(n_seg)
    return ("distance_matrices", f"{n_seg:,} segments",
            best_of(K.distance_matrices_numpy, pts, arcs),
            best_of(K.distance_matrices_numba, pts, arcs) if K.USING_NUMBA else None)


def main():
    print(f"numba available: {K.USING_NUMBA}  (best of {REPEATS} runs)")
    if K.USING_NUMBA:  # trigger compilation outside the timed region
        bench_trilinear(100)
        bench_trace(1)
        bench_distance_matrices(10)
    rows = [bench_trilinear(), bench_trace(), bench_distance_matrices()]
    print(f"{'kernel':<20} {'workload':<26} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, work, t_np, t_nb in rows:
        if t_nb is None:
            print(f"{name:<20} {work:<26} {t_np:>9.3f}s {'-':>10} {'-':>8}")
        else:
            print(f"{name:<20} {work:<26} {t_np:>9.3f}s {t_nb:>9.3f}s "
                  f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
