"""Timing harness for the hot kernels: numba lane vs pure numpy lane.

Run directly: python3 benchmarks/bench_kernels.py
The same fallback is wired through the library by PRALINE_NO_NUMBA=1; here
both lanes are forced explicitly so one run prints the comparison.
"""

import itertools
import time

import numpy as np

from praline import parse
from praline.constraints import gen_constraints
from praline.grounder import solve_standard
from praline.kernels import HAS_NUMBA, active_lane, solve_supports
from praline.oracle import build_world_space, sample_feasible_mu, world_probs
from praline.symexpr import context_from_program


def layered_source(n_classes=3, class_size=4, width=30, depth=6):
    """Acyclic layered program: 12 correlated fact bits + 6 rule events."""
    lines = []
    names = []
    for c in range(n_classes):
        members = [f"f{c}_{k}" for k in range(class_size)]
        names += members
        lines += [f"0.5::{m}." for m in members]
        lines.append("corr(" + ", ".join(members) + ").")
    prev = names
    for layer in range(depth):
        cur = []
        for j in range(width):
            a = prev[j % len(prev)]
            b = prev[(3 * j + 5) % len(prev)]
            head = f"n{layer}_{j}"
            prob = "0.9" if layer == 0 and j % 5 == 0 else "1"
            lines.append(f"{prob}::{head} :- {a}, {b}.")
            cur.append(head)
        prev = cur
    lines.append(f"query(n{depth - 1}_0).")
    return "\n".join(lines) + "\n"


def time_best(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.time()
        fn()
        best = min(best, time.time() - t0)
    return best


def bench_solve_supports(lane):
    # the shape vertex enumeration feeds it: every 6-column support of a
    # 6x16 constraint matrix (simplex row + marginal rows, 16-dim class)
    rng = np.random.default_rng(7)
    d, m = 16, 6
    a = rng.uniform(-1.0, 1.0, (m, d))
    a[0] = 1.0
    b = rng.uniform(0.0, 1.0, m)
    b[0] = 1.0
    combos = np.array(list(itertools.combinations(range(d), m)),
                      dtype=np.int64)
    return time_best(lambda: solve_supports(a, b, combos, lane=lane)), \
        f"{combos.shape[0]} supports of {m}x{d}"


def bench_world_probs(lane):
    # possible-world sweep: fixpoint over every world plus per-distribution
    # reweighting, the oracle's inner loop
    program = parse(layered_source())
    graph = solve_standard(program)
    ctx = context_from_program(program, graph)
    system = gen_constraints(program, ctx)
    space = build_world_space(program, graph)
    mus = sample_feasible_mu(system, np.random.default_rng(11), 8)
    target = [q for q in program.queries if q in set(graph.nodes)]
    return time_best(lambda: world_probs(target, mus, space, lane=lane)), \
        f"{space.n_worlds} worlds, {len(graph.nodes)} nodes, {len(mus)} dists"


def main():
    print(f"default lane: {active_lane()}")
    lanes = ["numpy", "numba"] if HAS_NUMBA else ["numpy"]
    if not HAS_NUMBA:
        print("numba lane unavailable (not installed or PRALINE_NO_NUMBA "
              "set); timing the numpy lane only")
    for name, bench in (("solve_supports", bench_solve_supports),
                        ("world_probs", bench_world_probs)):
        times = {}
        for lane in lanes:
            if lane == "numba":
                bench(lane)  # warm the JIT cache before timing
            t, shape = bench(lane)
            times[lane] = t
            print(f"{name:15s} [{lane:5s}] {t * 1e3:8.1f} ms  ({shape})")
        if len(times) == 2:
            print(f"{name:15s} speedup numpy/numba: "
                  f"{times['numpy'] / times['numba']:.1f}x")


if __name__ == "__main__":
    main()
