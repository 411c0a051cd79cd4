"""Approximate probability bounds from correlation types.

One topological pass over the derivation graph assigns every node an
interval guaranteed to contain its probability under every feasible joint
distribution.  Leaves get exact marginal ranges from their class polytopes;
conjunctions and disjunctions combine operand intervals with the bound
matching the correlation type between the operands.  All combinators are
monotone, so interval endpoints combine endpoint-wise.

Nodes whose every supporting class is pinned to a single distribution get
their exact point probability instead: with no correlation freedom left
the program behaves like a fully specified independent one, and interval
combinators would only blur that.
"""

from __future__ import annotations

from dataclasses import dataclass

from praline.corrtypes import (
    CorrEnv,
    CorrType,
    DepSig,
    _class_vertices,
    _marginal_range,
    dep_sig,
    infer_expr_pair,
)
from praline.frontend import Atom, DimensionCapExceeded
from praline.symexpr import eval_expr, gen_objective


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol

    def __str__(self) -> str:
        return f"[{self.lo:.6g}, {self.hi:.6g}]"


@dataclass
class DerivExpr:
    """One node's derivation view: formula, dependency signature, bounds."""

    node: Atom
    formula: str
    sig: DepSig
    interval: Interval


def conj_bound(t: CorrType, e1: float, e2: float, upper: bool) -> float:
    if upper:
        if t in (CorrType.POS, CorrType.UNKNOWN):
            return min(e1, e2)
        return e1 * e2
    if t in (CorrType.POS, CorrType.INDEP):
        return e1 * e2
    return max(e1 + e2 - 1.0, 0.0)


def disj_bound(t: CorrType, e1: float, e2: float, upper: bool) -> float:
    if upper:
        if t in (CorrType.POS, CorrType.INDEP):
            return 1.0 - (1.0 - e1) * (1.0 - e2)
        return min(1.0, e1 + e2)
    if t in (CorrType.POS, CorrType.UNKNOWN):
        return max(e1, e2)
    return 1.0 - (1.0 - e1) * (1.0 - e2)


def combine(op: str, t: CorrType, a: Interval, b: Interval) -> Interval:
    bound = conj_bound if op == "and" else disj_bound
    return Interval(bound(t, a.lo, b.lo, False), bound(t, a.hi, b.hi, True))


def _negate(x: tuple[Interval, DepSig]) -> tuple[Interval, DepSig]:
    iv, (dp, dn) = x
    return Interval(1.0 - iv.hi, 1.0 - iv.lo), (dn, dp)


PINNED_TOL = 1e-12


def _pinned_dist(env: CorrEnv, cpos: int):
    """The unique class distribution when the polytope is a single point."""
    if cpos not in env._pinned:
        verts = _class_vertices(env, cpos)
        env._pinned[cpos] = verts[0] \
            if verts is not None and len(verts) == 1 else None
    return env._pinned[cpos]


def _pinned_value(env: CorrEnv, node: Atom, sig: DepSig):
    """Exact probability when every class under the node is pinned.

    Fully determined inputs leave no correlation freedom, so the node's
    probability is a single number; evaluating its symbolic expression at
    the unique per-class distributions recovers it.  The fully specified
    independent case thereby reduces to plain weighted model counting
    instead of interval widening across shared subterms.
    """
    classes = {env.ctx.fact_bit[f][0] for part in sig for f in part}
    dists = [None] * len(env.ctx.classes)
    for cpos in classes:
        dist = _pinned_dist(env, cpos)
        if dist is None:
            return None
        dists[cpos] = dist
    try:
        obj = gen_objective(env.graph, env.ctx, node, env._exprs)
    except DimensionCapExceeded:
        return None
    return min(1.0, max(0.0, eval_expr(obj, dists)))


def _fold(env: CorrEnv, op: str, parts, assume_unknown: bool
          ) -> tuple[Interval, DepSig]:
    acc_iv, acc_sig = parts[0]
    for iv, sig in parts[1:]:
        t = infer_expr_pair(env, acc_sig, sig)
        if assume_unknown and t is not CorrType.INDEP:
            t = CorrType.UNKNOWN
        acc_iv = combine(op, t, acc_iv, iv)
        acc_sig = (acc_sig[0] | sig[0], acc_sig[1] | sig[1])
    return acc_iv, acc_sig


def approx_bounds(env: CorrEnv, assume_unknown: bool = False
                  ) -> dict[Atom, Interval]:
    """Sound probability interval for every node of the acyclic graph.

    With assume_unknown the correlation sign analysis is disabled: every
    pair that is not independent by class structure combines with the
    worst-case bound.
    """
    graph = env.graph
    out: dict[Atom, tuple[Interval, DepSig]] = {}
    for n in graph.topo_order():
        base = graph.as_input(n)
        parts = []
        if base is not None:
            lo, hi = _marginal_range(env, base)
            parts.append((Interval(lo, hi),
                          (frozenset([base]), frozenset())))
        for ei in graph.in_edges.get(n, []):
            e = graph.edges[ei]
            lits = [out[a] for a in e.pos] + [_negate(out[a]) for a in e.neg]
            iv, sig = _fold(env, "and", lits, assume_unknown)
            if e.prob < 1.0:
                iv = Interval(e.prob * iv.lo, e.prob * iv.hi)
            parts.append((iv, sig))
        if not parts:
            raise ValueError(f"node {n} has no derivation")
        out[n] = _fold(env, "or", parts, assume_unknown)
        iv, sig = out[n]
        if not assume_unknown and iv.hi - iv.lo > PINNED_TOL:
            value = _pinned_value(env, n, sig)
            if value is not None:
                out[n] = (Interval(value, value), sig)
    return {n: iv for n, (iv, _) in out.items()}


def deriv_expr(env: CorrEnv, node: Atom,
               bounds: dict[Atom, Interval]) -> DerivExpr:
    """One-level formula view of a node's derivation, for reporting."""
    graph = env.graph
    parts = []
    if graph.as_input(node) is not None:
        parts.append(str(graph.as_input(node)))
    for ei in graph.in_edges.get(node, []):
        e = graph.edges[ei]
        lits = [str(a) for a in e.pos] + [f"not {a}" for a in e.neg]
        body = " & ".join(lits)
        if e.prob < 1.0:
            body = f"{e.prob:g}*({body})"
        elif len(lits) > 1:
            body = f"({body})"
        parts.append(body)
    formula = " | ".join(parts) if parts else "false"
    return DerivExpr(node, formula, dep_sig(env, node), bounds[node])
