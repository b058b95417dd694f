"""Time the numba kernels against the numpy fallback on representative inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call includes JIT compilation (or cache load); it is timed
separately and excluded from the steady-state numbers.
"""

import argparse
import time

import numpy as np

from equipart import kernels
from equipart.domain import derive_rng


def _cases():
    rng = derive_rng(0, "bench")
    grid = (rng.random((64, 64)) < 0.3).astype(np.uint8)
    mass = rng.random((64, 64))
    mass /= mass.sum()
    xs, ts = rng.normal(size=20_000), rng.uniform(0, 2, 20_000)
    xe, te = np.meshgrid(np.linspace(-3, 4, 71), np.linspace(0.5, 1.5, 11), indexing="ij")
    pts, ctr = rng.random((50_000, 2)), rng.random((50, 2))
    return {
        "component_cost 64x64": lambda m: m.component_cost(grid, mass),
        "hot_candidate_costs 64x64": lambda m: m.hot_candidate_costs(grid, mass),
        "kde_sum 781 x 20000": lambda m: m.kde_sum(xe.ravel(), te.ravel(), xs, ts, 0.05),
        "nearest_assign 50000 x 50": lambda m: m.nearest_assign(pts, ctr),
    }


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.numba_impl is None:
        print("numba unavailable; only the numpy path can run")
    print(f"{'kernel':28s} {'numpy s':>10s} {'numba s':>10s} {'jit s':>8s} {'speedup':>8s}")
    for name, call in _cases().items():
        t_np = _best(lambda: call(kernels.numpy_impl), args.repeat)
        if kernels.numba_impl is None:
            print(f"{name:28s} {t_np:10.4f}")
            continue
        t0 = time.perf_counter()
        call(kernels.numba_impl)
        jit = time.perf_counter() - t0
        t_nb = _best(lambda: call(kernels.numba_impl), args.repeat)
        print(f"{name:28s} {t_np:10.4f} {t_nb:10.4f} {jit:8.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
