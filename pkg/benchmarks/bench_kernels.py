"""Time the numba kernels against their pure-numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from treatrisk.kernels import numba_impl, numpy_impl


def best_of(fn, repeat):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    z = np.sort(rng.normal(size=n))
    w = np.full(n, 1.0 / n)
    s2 = rng.uniform(0.1, 2.0, size=n)
    grid = np.linspace(-4, 4, 2000)
    return {
        "sorted_cvar": lambda m: m.sorted_cvar(z, w, 0.1),
        "grid_cvar_max": lambda m: m.grid_cvar_max(z, w, 0.1, grid),
        "variance_bound_value": lambda m: m.variance_bound_value(z, w, s2, 0.1, 0.3),
        "golden_variance_bound": lambda m: m.golden_variance_bound(z, w, s2, 0.1, -8.0, 8.0, 1e-9),
        "grid_variance_bound_max": lambda m: m.grid_variance_bound_max(z, w, s2, 0.1, grid),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, call in cases(args.n, rng).items():
        t_np = best_of(lambda: call(numpy_impl), args.repeat)
        t_nb = best_of(lambda: call(numba_impl), args.repeat)
        print(f"{name:<26}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
