"""Ground-truth reference engines: possible-worlds enumeration.

A world fixes every ground input fact and flips one independent biased coin
per uncertain ground rule.  Enumerating all worlds and summing the weights
of those that derive a fact gives its probability under one concrete joint
distribution, which makes this the oracle everything faster is tested
against.  Not on the production inference path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from praline.constraints import (
    ConstraintSystem,
    check_feasible,
    feasible_point,
    gen_constraints,
)
from praline.frontend import (
    Atom,
    DimensionCapExceeded,
    InfeasibleError,
    Program,
    ScaleError,
)
from praline.grounder import DerivationGraph, break_cycles, solve_standard
from praline.kernels import fixpoint_table, world_weights
from praline.optimizer import enumerate_class_vertices, optimize_exact
from praline.symexpr import context_from_program, gen_objective

MAX_WORLD_BITS = 24
CHUNK_BITS = 16


@dataclass
class WorldSpace:
    """Encoded world enumeration problem: bit layout plus flat edge arrays."""

    graph: DerivationGraph
    n_fact_bits: int
    n_events: int
    fact_bit: dict[Atom, int]
    node_index: dict[Atom, int]
    cls_off: np.ndarray
    cls_bits: np.ndarray
    dist_off: np.ndarray
    ev_prob: np.ndarray
    enc: dict = field(default_factory=dict)

    @property
    def n_bits(self) -> int:
        return self.n_fact_bits + self.n_events

    @property
    def n_worlds(self) -> int:
        return 1 << self.n_bits


def build_world_space(program: Program, graph: DerivationGraph) -> WorldSpace:
    fact_bit = {}
    cls_off = [0]
    cls_bits = []
    dist_off = [0]
    offset = 0
    for cls in program.classes:
        for k, member in enumerate(cls.members):
            fact_bit[member] = offset + k
            cls_bits.append(offset + k)
        offset += len(cls.members)
        cls_off.append(len(cls_bits))
        dist_off.append(dist_off[-1] + (1 << len(cls.members)))

    edge_prob = {}
    for e in graph.edges:
        if e.rule_id in graph.event_var:
            edge_prob[graph.event_var[e.rule_id]] = e.prob
    n_events = len(graph.event_var)
    ev_prob = np.array([edge_prob[j + 1] for j in range(n_events)])

    n_bits = offset + n_events
    if n_bits > MAX_WORLD_BITS:
        raise ScaleError(
            f"{n_bits} fact+event bits exceed the {MAX_WORLD_BITS}-bit "
            "world enumeration cap")

    node_index = {n: i for i, n in enumerate(graph.nodes)}
    input_bit = np.full(len(graph.nodes), -1, dtype=np.int64)
    for n, i in node_index.items():
        base = graph.as_input(n)
        if base is not None:
            input_bit[i] = fact_bit[base]

    def stratum(e) -> int:
        functor = e.head.functor.split("@")[0]
        return graph.strata.get(functor, 0)

    order = sorted(range(len(graph.edges)),
                   key=lambda i: (stratum(graph.edges[i]), i))
    n_strata = max((stratum(e) for e in graph.edges), default=0) + 1
    head = np.zeros(len(order), dtype=np.int64)
    ev_bit = np.full(len(order), -1, dtype=np.int64)
    body_off = [0]
    body_node = []
    body_sign = []
    strat_edges = [0] * (n_strata + 1)
    for pos, i in enumerate(order):
        e = graph.edges[i]
        head[pos] = node_index[e.head]
        var = graph.event_var.get(e.rule_id)
        if var is not None:
            ev_bit[pos] = offset + var - 1
        for a in e.pos:
            body_node.append(node_index[a])
            body_sign.append(1)
        for a in e.neg:
            body_node.append(node_index[a])
            body_sign.append(0)
        body_off.append(len(body_node))
        strat_edges[stratum(e) + 1] = pos + 1
    for s in range(1, n_strata + 1):
        strat_edges[s] = max(strat_edges[s], strat_edges[s - 1])

    enc = {
        "input_bit": input_bit,
        "head": head,
        "ev_bit": ev_bit,
        "body_off": np.array(body_off, dtype=np.int64),
        "body_node": np.array(body_node, dtype=np.int64),
        "body_sign": np.array(body_sign, dtype=np.uint8),
        "strat_off": np.array(strat_edges, dtype=np.int64),
    }
    return WorldSpace(graph, offset, n_events, fact_bit, node_index,
                      np.array(cls_off, dtype=np.int64),
                      np.array(cls_bits, dtype=np.int64),
                      np.array(dist_off, dtype=np.int64),
                      ev_prob, enc)


def _chunks(ws: WorldSpace):
    step = 1 << CHUNK_BITS
    for lo in range(0, ws.n_worlds, step):
        yield np.arange(lo, min(lo + step, ws.n_worlds), dtype=np.int64)


def world_probs(targets: list[Atom], mus: list[list[np.ndarray]],
                ws: WorldSpace, lane: Optional[str] = None) -> np.ndarray:
    """P(target) for each sampled distribution; shape (len(mus), len(targets)).

    The deterministic skeleton is evaluated once per world and reweighted
    for every distribution.
    """
    cols = np.array([ws.node_index[t] for t in targets], dtype=np.int64)
    flats = [np.concatenate([np.asarray(d, dtype=np.float64) for d in mu])
             if len(mu) else np.zeros(1) for mu in mus]
    out = np.zeros((len(mus), len(targets)))
    e = ws.enc
    for ids in _chunks(ws):
        val = fixpoint_table(ids, len(ws.graph.nodes), e["input_bit"],
                             e["head"], e["ev_bit"], e["body_off"],
                             e["body_node"], e["body_sign"], e["strat_off"],
                             lane=lane)
        sel = val[:, cols].astype(np.float64)
        for mi, flat in enumerate(flats):
            w = world_weights(ids, ws.cls_off, ws.cls_bits, ws.dist_off,
                              flat, ws.ev_prob, ws.n_fact_bits, lane=lane)
            out[mi] += w @ sel
    return out


def world_prob(target: Atom, mu: list[np.ndarray], ws: WorldSpace,
               lane: Optional[str] = None) -> float:
    return float(world_probs([target], [mu], ws, lane=lane)[0, 0])


def pair_probs(a: Atom, b: Atom, mus: list[list[np.ndarray]],
               ws: WorldSpace, lane: Optional[str] = None) -> np.ndarray:
    """Columns P(a), P(b), P(a and b) per distribution; shape (len(mus), 3)."""
    ia, ib = ws.node_index[a], ws.node_index[b]
    flats = [np.concatenate([np.asarray(d, dtype=np.float64) for d in mu])
             if len(mu) else np.zeros(1) for mu in mus]
    out = np.zeros((len(mus), 3))
    e = ws.enc
    for ids in _chunks(ws):
        val = fixpoint_table(ids, len(ws.graph.nodes), e["input_bit"],
                             e["head"], e["ev_bit"], e["body_off"],
                             e["body_node"], e["body_sign"], e["strat_off"],
                             lane=lane)
        sel = np.stack([val[:, ia], val[:, ib],
                        val[:, ia] & val[:, ib]], axis=1).astype(np.float64)
        for mi, flat in enumerate(flats):
            w = world_weights(ids, ws.cls_off, ws.cls_bits, ws.dist_off,
                              flat, ws.ev_prob, ws.n_fact_bits, lane=lane)
            out[mi] += w @ sel
    return out


def sample_feasible_mu(system: ConstraintSystem, rng: np.random.Generator,
                       count: int, cache: Optional[dict] = None
                       ) -> list[list[np.ndarray]]:
    """Random feasible per-class distributions: vertex picks and mixtures."""
    sources = []
    for cpos, cs in enumerate(system.classes):
        verts = None
        if cache is not None and cpos in cache:
            verts = cache[cpos]
        else:
            try:
                verts = enumerate_class_vertices(cs)
                if cache is not None:
                    cache[cpos] = verts
            except (DimensionCapExceeded, ValueError):
                verts = None
        if verts is None:
            point = feasible_point(cs)
            if point is None:
                raise InfeasibleError("No solution")
            sources.append(("point", point))
        else:
            sources.append(("verts", verts))
    mus = []
    for k in range(count):
        mu = []
        for kind, v in sources:
            if kind == "point":
                mu.append(v)
            elif len(v) == 1:
                mu.append(v[0])
            elif k % 4 == 3:
                mu.append(v[rng.integers(len(v))])
            else:
                mu.append(rng.dirichlet(np.ones(len(v))) @ v)
        mus.append(mu)
    return mus


def exact_interval_oracle(output: Atom, program: Program,
                          system: Optional[ConstraintSystem] = None,
                          cache: Optional[dict] = None
                          ) -> tuple[float, float]:
    """Exact probability bounds for one output via full vertex search."""
    graph = solve_standard(program)
    if not graph.acyclic:
        graph = break_cycles(graph)
    ctx = context_from_program(program, graph)
    if system is None:
        system = gen_constraints(program, ctx)
    if check_feasible(system) is None:
        raise InfeasibleError("No solution")
    if output not in graph.nodes:
        return 0.0, 0.0  # underivable: false in every world
    obj = gen_objective(graph, ctx, output)
    res = optimize_exact(obj, system, cache=cache)
    return res.lo, res.hi
