"""Timing comparison of the compiled and pure-Python kernel backends.

Times the banded LU primitives on a tridiagonal system and a full
mean-square-distance run on the cubic problem, once per backend.

Usage: python3 benchmarks/bench_backends.py [--nodes N] [--steps N] [--paths N]
"""
import argparse
import time

import numpy as np

from rdsde import _kernels
from rdsde.experiments import initial_pair, run_msd
from rdsde.grid import build_grid
from rdsde.integrators import SchemeConfig
from rdsde.problems import NoiseKind, make_ginzburg_landau


def time_call(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_linalg(n, reps):
    bands = np.zeros((3, n))
    bands[0, 1:] = -1.0
    bands[1, :] = 4.0
    bands[2, :-1] = -1.0
    rhs = np.linspace(-1.0, 1.0, n)

    def factor_solve():
        for _ in range(reps):
            ab, piv = _kernels.band_lu_factor(bands, 1, None)
            _kernels.band_lu_solve(ab, piv, 1, rhs)

    return time_call(factor_solve)


def bench_msd(n_points, n_steps, n_paths):
    grid = build_grid(0.0, 1.0, n_points)
    problem = make_ginzburg_landau(grid, NoiseKind.additive(0.1))
    u0, y0 = initial_pair(problem)
    cfg = SchemeConfig(theta=1.0, dt=2.0**-11, n_steps=n_steps, seed=3)

    def run():
        run_msd(problem, cfg, u0, y0, n_paths=n_paths)

    return time_call(run, repeat=2)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=64)
    ap.add_argument("--steps", type=int, default=256)
    ap.add_argument("--paths", type=int, default=20)
    ap.add_argument("--lu-reps", type=int, default=200)
    args = ap.parse_args()

    backends = ["python"]
    if _kernels.compiled_available():
        backends.append("compiled")
    else:
        print("compiled backend not built; timing python only")

    results = {}
    for name in backends:
        _kernels.set_backend(name)
        t_lu = bench_linalg(args.nodes, args.lu_reps)
        t_msd = bench_msd(args.nodes, args.steps, args.paths)
        results[name] = (t_lu, t_msd)
        print(f"{name:>8}:  lu x{args.lu_reps} = {t_lu * 1e3:8.2f} ms   "
              f"msd({args.paths} paths x {args.steps} steps) = {t_msd * 1e3:8.2f} ms")

    if len(results) == 2:
        plu = results["python"][0] / results["compiled"][0]
        pmsd = results["python"][1] / results["compiled"][1]
        print(f"speedup: lu {plu:.1f}x, msd {pmsd:.1f}x")
    _kernels.set_backend("auto")


if __name__ == "__main__":
    main()
