"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--size 12] [--repeat 5]

Each row times one full solve (prob0 pass, value iteration, extraction) on
the quotient of an obstacle gridworld; the first numba call pays the JIT
cost (or cache load) and is reported separately.
"""

from __future__ import annotations

import argparse
import time
import warnings

import numpy as np

from mdptree import kernels
from mdptree.abstraction import build_game
from mdptree.families import obstacle_grid
from mdptree.indexset import IndexSet
from mdptree.model import build_quotient, restrict
from mdptree.sketch import parse_property, parse_sketch
from mdptree.solver import mdp_opt_reach


def workloads(size: int):
    warnings.simplefilter("ignore")
    prog = parse_sketch(obstacle_grid(size, 2, (1, size - 2), "1/10"))
    q = build_quotient(prog, parse_property('P>=0.5 [ F "goal" ]', prog).target)
    full = restrict(q, q.full)
    game = build_game(q, full)
    member = restrict(q, IndexSet.from_indices([0], q.family_size))
    return q, {
        "quotient max": lambda: mdp_opt_reach(full, q.targets, "max"),
        "quotient min": lambda: mdp_opt_reach(full, q.targets, "min"),
        "game": lambda: game.solve(q.targets),
        "member max": lambda: mdp_opt_reach(member, q.targets, "max"),
    }


def timeit(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    q, jobs = workloads(args.size)
    print(f"gridworld {args.size}x{args.size}: {q.n_states} states, {q.structure.n_choices} quotient actions, {q.family_size} members")
    results = {}
    for name in ("numba", "numpy"):
        if name == "numba" and kernels.numba_backend is None:
            print("numba not available")
            continue
        kernels.set_backend(name)
        t = time.perf_counter()
        first = jobs["quotient max"]()
        if name == "numba":
            print(f"numba first call (compile or cache load): {time.perf_counter() - t:.3f}s")
        results[name] = {k: (timeit(fn, args.repeat), fn()) for k, fn in jobs.items()}
        del first
    print(f"{'workload':<14} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8} {'iters':>6}")
    for k in jobs:
        nb = results.get("numba", {}).get(k)
        npy = results["numpy"][k]
        if nb is not None:
            assert abs(nb[1].value - npy[1].value) < 1e-8, k
        nb_ms = f"{1e3 * nb[0]:.2f}" if nb else "-"
        speed = f"{npy[0] / nb[0]:.1f}x" if nb else "-"
        print(f"{k:<14} {nb_ms:>11} {1e3 * npy[0]:>11.2f} {speed:>8} {npy[1].iterations:>6}")
    kernels.set_backend("numba" if kernels.numba_backend is not None else "numpy")


if __name__ == "__main__":
    main()
