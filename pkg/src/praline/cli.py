"""Command line interface: parse, ground, infer, and report bounds.

Two subcommands.  `praline solve` runs the inference pipeline in one of
three modes (exact, approx, delta) and prints one interval per queried
fact, optionally as JSON.  `praline oracle` brute-forces the same program
through possible-world enumeration for desk-scale cross-checking.
"""

import argparse
import fnmatch
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .approx import approx_bounds
from .constraints import check_feasible, gen_constraints
from .corrtypes import build_env, infer_input_pair, node_pair
from .frontend import (
    Atom,
    DimensionCapExceeded,
    InfeasibleError,
    ParseError,
    PralineError,
    parse,
)
from .grounder import break_cycles, solve_standard
from .optimizer import optimize_exact
from .oracle import (
    build_world_space,
    exact_interval_oracle,
    sample_feasible_mu,
    world_probs,
)
from .refine import DEFAULT_CUT_CAP, DEFAULT_MAX_CLASS, make_delta_precise
from .symexpr import context_from_program, expr_str, gen_objective

log = logging.getLogger("praline")


@dataclass
class FactBounds:
    atom: str
    lower: float
    upper: float
    mode: str
    flags: list


@dataclass
class BoundsReport:
    facts: list
    mode: str
    delta: object
    seed: int
    elapsed_ms: int

    def to_json(self) -> str:
        doc = {
            "facts": [
                {"atom": f.atom, "lower": f.lower, "upper": f.upper,
                 "mode": f.mode, "flags": list(f.flags)}
                for f in self.facts
            ],
            "meta": {"delta": self.delta, "seed": self.seed,
                     "elapsed_ms": self.elapsed_ms},
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def render(self) -> str:
        lines = []
        for f in self.facts:
            note = [fl for fl in f.flags if fl in
                    ("soundness_only", "underivable")]
            suffix = f"  ({', '.join(n.replace('_', ' ') for n in note)})" \
                if note else ""
            lines.append(
                f"{f.atom}: [{f.lower:.6g}, {f.upper:.6g}]{suffix}")
        return "\n".join(lines)


def _pipeline(program):
    graph = solve_standard(program)
    work = graph if graph.acyclic else break_cycles(graph)
    ctx = context_from_program(program, work)
    system = gen_constraints(program, ctx)
    return work, ctx, system, build_env(program, work, ctx, system)


def _select_outputs(program, graph, patterns):
    """Queried nodes present in the graph, plus query atoms that are not."""
    nodes = [n for n in graph.nodes if "@" not in n.functor]
    if patterns:
        sel = [n for n in nodes
               if any(fnmatch.fnmatch(str(n), p) or str(n) == p
                      for p in patterns)]
        return sel, []
    if program.queries:
        present = set(nodes)
        sel, absent = [], []
        for q in program.queries:
            if q in present:
                if q not in sel:
                    sel.append(q)
            elif q not in absent:
                absent.append(q)
        return sel, absent
    return [n for n in nodes if graph.in_edges.get(n)], []


def solve_program(program, mode="delta", delta=0.01, queries=None, seed=0,
                  jobs=1, max_class_size=DEFAULT_MAX_CLASS,
                  cut_cap=DEFAULT_CUT_CAP) -> BoundsReport:
    """Bounds for every queried fact; raises InfeasibleError on conflict."""
    t0 = time.perf_counter()
    work, ctx, system, env = _pipeline(program)
    if check_feasible(system) is None:
        raise InfeasibleError("No solution")
    outputs, absent = _select_outputs(program, work, queries)
    facts = []
    if mode == "exact":
        approx_cache = None
        for out in outputs:
            try:
                res = optimize_exact(gen_objective(work, ctx, out), system,
                                     env._verts)
                facts.append(FactBounds(str(out), res.lo, res.hi, "exact", []))
            except DimensionCapExceeded as exc:
                log.warning("exact bounds for %s unavailable (%s), "
                            "reporting approximate interval", out, exc)
                if approx_cache is None:
                    approx_cache = approx_bounds(env)
                iv = approx_cache[out]
                facts.append(FactBounds(str(out), iv.lo, iv.hi,
                                        "soundness_only", ["soundness_only"]))
    elif mode == "approx":
        m = approx_bounds(env)
        for out in outputs:
            iv = m[out]
            facts.append(FactBounds(str(out), iv.lo, iv.hi, "approx", []))
    elif mode == "delta":
        m = approx_bounds(env)
        refined = make_delta_precise(env, m, outputs, delta, max_class_size,
                                     cut_cap, jobs)
        for out in outputs:
            r = refined[out]
            fact_mode = "soundness_only" if "soundness_only" in r.flags \
                else "delta"
            facts.append(FactBounds(str(out), r.interval.lo, r.interval.hi,
                                    fact_mode, list(r.flags)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for q in absent:
        facts.append(FactBounds(str(q), 0.0, 0.0, mode, ["underivable"]))
    facts.sort(key=lambda f: f.atom)
    elapsed = int(round((time.perf_counter() - t0) * 1000))
    return BoundsReport(facts, mode, delta if mode == "delta" else None,
                        seed, elapsed)


def solve_source(src: str, **kwargs) -> BoundsReport:
    return solve_program(parse(src), **kwargs)


def _dump(args, program, work, ctx, system, env):
    if args.dump_graph:
        print("derivation graph:")
        for e in work.edges:
            body = [str(a) for a in e.pos] + [f"\\+{a}" for a in e.neg]
            prob = f"  [p={e.prob:.6g}]" if e.prob < 1.0 else ""
            print(f"  {e.head} <- {', '.join(body) or 'true'}{prob}")
    if args.dump_constraints:
        print("constraint system:")
        print(system.describe())
    if args.dump_correlations:
        print("correlation classes:")
        for cs in system.classes:
            members = ", ".join(str(m) for m in cs.members)
            print(f"  {cs.label}: {members}")
            if len(cs.members) > 8:
                print("    (too many members for pairwise analysis)")
                continue
            for i in range(len(cs.members)):
                for j in range(i + 1, len(cs.members)):
                    t = infer_input_pair(env, cs.members[i], cs.members[j])
                    print(f"    {cs.members[i]} ~ {cs.members[j]}: {t.value}")
        outputs, _ = _select_outputs(program, work, args.query)
        for i in range(len(outputs)):
            for j in range(i + 1, len(outputs)):
                t = node_pair(env, outputs[i], outputs[j])
                print(f"  {outputs[i]} ~ {outputs[j]}: {t.value}")
    if args.dump_exprs:
        outputs, _ = _select_outputs(program, work, args.query)
        print("probability expressions:")
        for out in outputs:
            try:
                print(f"  {out} = {expr_str(gen_objective(work, ctx, out))}")
            except DimensionCapExceeded:
                print(f"  {out} = (expression template too large)")


def _cmd_solve(args, program) -> int:
    work, ctx, system, env = _pipeline(program)
    if any((args.dump_graph, args.dump_constraints, args.dump_correlations,
            args.dump_exprs)):
        _dump(args, program, work, ctx, system, env)
    report = solve_program(
        program, mode=args.mode, delta=args.delta, queries=args.query,
        seed=args.seed, jobs=args.jobs, max_class_size=args.max_class_size,
        cut_cap=args.cut_cap)
    out = report.render()
    if out:
        print(out)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def _cmd_oracle(args, program) -> int:
    work, ctx, system, env = _pipeline(program)
    if check_feasible(system) is None:
        raise InfeasibleError("No solution")
    outputs, absent = _select_outputs(program, work, args.query)
    rng = np.random.default_rng(args.seed)
    cache = {}
    sampled = None
    if outputs:
        ws = build_world_space(program, work)
        mus = sample_feasible_mu(system, rng, args.samples, cache)
        sampled = world_probs(outputs, mus, ws)
    for j, out in enumerate(outputs):
        lo, hi = exact_interval_oracle(out, program, system, cache)
        col = sampled[:, j]
        print(f"{out}: exact [{lo:.6g}, {hi:.6g}], "
              f"{args.samples} sampled mu in [{col.min():.6g}, "
              f"{col.max():.6g}]")
    for q in absent:
        print(f"{q}: exact [0, 0]  (underivable)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="praline",
        description="Probability bounds for Datalog programs with "
                    "partially known input correlations.")
    sub = p.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("solve", help="infer probability bounds")
    ps.add_argument("file", help="program file")
    ps.add_argument("--mode", choices=["exact", "approx", "delta"],
                    default="delta")
    ps.add_argument("--delta", type=float, default=0.01,
                    help="precision target for delta mode (default 0.01)")
    ps.add_argument("--query", action="append", metavar="PAT",
                    help="only report atoms matching this pattern "
                         "(repeatable, glob syntax)")
    ps.add_argument("--json", metavar="PATH", help="also write a JSON report")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                    help="refinement worker threads")
    ps.add_argument("--max-class-size", type=int, default=DEFAULT_MAX_CLASS,
                    help="largest correlation class refined exactly")
    ps.add_argument("--cut-cap", type=int, default=DEFAULT_CUT_CAP,
                    help="joint dimension budget for cut systems")
    ps.add_argument("--dump-exprs", action="store_true")
    ps.add_argument("--dump-constraints", action="store_true")
    ps.add_argument("--dump-correlations", action="store_true")
    ps.add_argument("--dump-graph", action="store_true")

    po = sub.add_parser("oracle",
                        help="brute-force possible-world cross-check")
    po.add_argument("file", help="program file")
    po.add_argument("--query", action="append", metavar="PAT")
    po.add_argument("--samples", type=int, default=50,
                    help="feasible distributions to sample (default 50)")
    po.add_argument("--seed", type=int, default=0)
    return p


def _setup_logging():
    level = os.environ.get("PRALINE_LOG", "").strip().upper()
    if level:
        logging.basicConfig(
            level=getattr(logging, level, logging.INFO),
            format="%(name)s %(levelname)s %(message)s")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        with open(args.file) as fh:
            src = fh.read()
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        program = parse(src)
        if args.cmd == "solve":
            return _cmd_solve(args, program)
        return _cmd_oracle(args, program)
    except InfeasibleError:
        print("No solution")
        return 1
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 2
    except PralineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
