"""Side by side: the four Douglas-Rachford splittings, primal-dual and the centered scheme.

Each solver gets the same 1-D problem and the same budget; the script prints
the final objective, the constraint residuals and the iterate change.  The
centered scheme discretizes the continuity equation differently, so its
objective is close to but not equal to the staggered ones.

    python demos/splitting_schemes.py
"""

import time

import numpy as np

from otsplit import ALGORITHMS, GridDims, Problem, SolverConfig, energy, solve


def main():
    dims = GridDims(N=64, P=32)
    x = np.linspace(0.0, 1.0, dims.N + 1)
    f0 = np.exp(-((x - 0.25) ** 2) / (2 * 0.05**2)) + 0.02
    f1 = np.exp(-((x - 0.7) ** 2) / (2 * 0.08**2)) + 0.02
    problem = Problem.from_densities(f0 / f0.sum(), f1 / f1.sum(), dims.P)

    print(f"{'scheme':>12} {'J':>12} {'|div|':>9} {'change':>9} {'time':>7}")
    for alg in ALGORITHMS:
        t0 = time.perf_counter()
        _, V, record = solve(problem, SolverConfig(algorithm=alg, max_iter=2000, log_every=2000))
        dt = time.perf_counter() - t0
        print(f"{alg:>12} {energy(V):12.8f} {record.div_residual[-1]:9.1e} {record.delta_f[-1]:9.1e} {dt:6.1f}s")


if __name__ == "__main__":
    main()
