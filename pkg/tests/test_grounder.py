import pytest

from praline import Atom, NonStratifiedError, parse
from praline.grounder import (
    UnsafeRuleError,
    break_cycles,
    depends,
    flatten,
    polarity,
    solve_standard,
)


def ground(src):
    return solve_standard(parse(src))


def atoms(strs):
    from praline.frontend import _Parser

    return [_Parser(s).parse_atom() for s in strs]


def test_roads_graph(roads):
    g = solve_standard(roads)
    assert g.acyclic  # the path rules never revisit a node on these edges
    p17 = Atom("path", (1, 7))
    edges = [g.edges[i] for i in g.in_edges[p17]]
    bodies = {tuple(map(str, e.pos)) for e in edges}
    assert bodies == {("path(1,5)", "edge(5,7)"), ("path(1,6)", "edge(6,7)")}
    # six base-case firings, one per edge fact
    base = [e for e in g.edges if e.rule_id.rule_index == 0]
    assert len(base) == 6


def test_event_vars_only_for_uncertain_rules(roads):
    g = solve_standard(roads)
    assert g.event_count() == 0  # every rule has probability 1
    g2 = ground("0.5::a. 0.9::b :- a. 1::c :- b.")
    assert g2.event_count() == 1
    assert list(g2.event_var.values()) == [1]


def test_event_var_order_is_declaration_order():
    g = ground("0.5::a. 0.5::b. 0.9::x :- a. 0.8::y :- b. 0.7::z :- x, y.")
    by_rule = {rid.rule_index: v for rid, v in g.event_var.items()}
    assert by_rule == {0: 1, 1: 2, 2: 3}


def test_duplicate_firings_are_one_event():
    # both body orders produce the same substitution set but distinct
    # substitutions, hence two distinct events
    g = ground("0.5::e(1,2). 0.5::e(2,1). 0.9::h :- e(X,Y), e(Y,X).")
    h_edges = [g.edges[i] for i in g.in_edges[Atom("h")]]
    assert len(h_edges) == 2
    assert len({e.rule_id for e in h_edges}) == 2


def test_underivable_negation_dropped():
    g = ground("0.5::a. 1::h :- a, \\+ghost.")
    e = g.edges[g.in_edges[Atom("h")][0]]
    assert e.neg == ()


def test_derivable_negation_kept():
    g = ground("0.5::a. 0.5::b. 1::x :- b. 1::h :- a, \\+x.")
    e = g.edges[g.in_edges[Atom("h")][0]]
    assert [str(n) for n in e.neg] == ["x"]


def test_unsafe_rule_rejected():
    with pytest.raises(UnsafeRuleError):
        ground("0.5::e(1,2). 1::h(X,Z) :- e(X,Y).")
    with pytest.raises(UnsafeRuleError):
        ground("0.5::e(1,2). 1::h(X) :- e(X,Y), \\+e(Y,Z).")


def test_nonstratified_rejected():
    with pytest.raises(NonStratifiedError):
        ground("0.5::a. 1::p :- a, \\+q. 1::q :- \\+p.")


def test_stratified_negation_layers():
    g = ground("0.5::a. 1::p :- a. 1::q :- \\+p. 1::r :- \\+q.")
    assert g.strata["p"] < g.strata["q"] < g.strata["r"]


def test_cycle_detection_and_unfolding():
    src = """
    0.5::e(1,2). 0.5::e(2,1). 0.5::e(2,3).
    1::r(X,Y) :- e(X,Y).
    1::r(X,Z) :- r(X,Y), r(Y,Z).
    query(r(1,3)).
    """
    g = ground(src)
    assert not g.acyclic  # r(1,2) and r(2,1) feed each other via r(1,1)/r(2,2)
    g2 = break_cycles(g)
    assert g2.acyclic
    # original names survive as the final unfolding level
    for a in ("r(1,3)", "r(1,1)", "r(2,2)"):
        assert any(str(n) == a for n in g2.nodes)
    # events are shared between unfolded copies of one ground rule
    assert g2.event_var == g.event_var


def test_break_cycles_noop_on_acyclic(roads):
    g = solve_standard(roads)
    assert break_cycles(g) is g


def test_self_loop_unfolds():
    g = ground("0.5::a. 1::p :- a. 1::p :- p.")
    assert not g.acyclic
    g2 = break_cycles(g)
    assert g2.acyclic
    assert Atom("p") in g2.in_edges


def test_flatten_signs():
    g = ground("0.5::a. 0.5::b. 1::x :- b. 1::h :- a, \\+x.")
    f = flatten(g)
    assert (Atom("a"), Atom("h"), 1) in f.edges
    assert (Atom("x"), Atom("h"), -1) in f.edges


def test_depends_polarity():
    g = ground("0.5::a. 0.5::b. 1::x :- b. 1::h :- a, \\+x. 1::k :- h, b.")
    dp, dn = depends(g)
    assert polarity(dp, dn, Atom("h"), Atom("a")) == "pos"
    assert polarity(dp, dn, Atom("h"), Atom("b")) == "neg"
    assert polarity(dp, dn, Atom("k"), Atom("b")) == "both"
    assert polarity(dp, dn, Atom("x"), Atom("a")) == "none"


def test_depends_roads(roads):
    g = solve_standard(roads)
    dp, dn = depends(g)
    p17 = Atom("path", (1, 7))
    assert dn[p17] == frozenset()
    names = sorted(map(str, dp[p17]))
    assert names == ["edge(1,2)", "edge(2,5)", "edge(2,6)", "edge(5,7)", "edge(6,7)"]


def test_input_fact_in_cycle_gets_alias():
    # the input fact p is also derivable through a cycle with q
    g = ground("0.5::a. 0.5::p. 1::p :- q. 1::q :- p, a.")
    g2 = break_cycles(g)
    assert g2.acyclic
    assert any(base == Atom("p") for base in g2.input_alias.values())
    dp, _ = depends(g2)
    assert Atom("p") in dp[Atom("q")]


def test_topo_order(roads):
    g = solve_standard(roads)
    order = {n: i for i, n in enumerate(g.topo_order())}
    for e in g.edges:
        for b in e.bodies():
            assert order[b] < order[e.head]
