"""Time each compiled kernel against its plain-Python body.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N per-call time for both paths.
Running with DIFFMATCH_JIT=0 makes both columns the Python body.
"""
import argparse
import timeit

import numpy as np

from diffmatch import kernels
from diffmatch._jit import JIT_ENABLED, py_func


def cases(rng):
    U, E, N = 15, 6, 16
    h = (rng.standard_normal((U, N)) + 1j * rng.standard_normal((U, N))) / np.sqrt(2)
    priv = np.arange(0, 6, dtype=np.int64)
    common = np.arange(6, U, dtype=np.int64)
    share = np.full(U, 1.0 / common.size)
    prefs = np.argsort(rng.random((U, E)), axis=1).astype(np.int64)
    rank = np.argsort(np.argsort(rng.random((E, U)), axis=1), axis=1).astype(np.int64)
    cap = np.full(E, 3, dtype=np.int64)
    n = 20_000
    adam = [rng.standard_normal(n), rng.standard_normal(n), np.zeros(n), np.zeros(n)]
    return {
        "zf_columns": (kernels.zf_columns, (h[:6],)),
        "common_direction": (kernels.common_direction, (h[6:],)),
        "rsma_rates": (kernels.rsma_rates, (h, priv, common, share, 0.3, 0.7 / 6, 1e-2, 1e6)),
        "assign_min_cost": (kernels.assign_min_cost, (rng.standard_normal((U, 2 * U)),)),
        "deferred_acceptance": (kernels.deferred_acceptance_kernel, (prefs, rank, cap)),
        "adam_update": (kernels.adam_update, (*adam, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)),
        "all_finite": (kernels.all_finite, (adam[0],)),
    }


def best_time(fn, args, repeat):
    fn(*args)  # compile / warm up
    t = timeit.Timer(lambda: fn(*args))
    number, _ = t.autorange()
    return min(t.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"numba enabled: {JIT_ENABLED}")
    print(f"{'kernel':<22}{'jit (us)':>12}{'python (us)':>14}{'speedup':>10}")
    for name, (fn, a) in cases(np.random.default_rng(0)).items():
        fast = best_time(fn, a, args.repeat)
        slow = best_time(py_func(fn), a, args.repeat)
        print(f"{name:<22}{fast * 1e6:>12.1f}{slow * 1e6:>14.1f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
