"""Parser and program model for the praline input language.

The language is ProbLog-flavored:

    0.7 :: edge(5,7).                  marginal probability of an input fact
    0.8 :: edge(2,5) | edge(1,4).      conditional probability
    corr(edge(2,5), edge(2,6)).        declares facts as possibly correlated
    2 :: Class(edge(1,2)).             explicit correlation class assignment
    1 :: path(X,Y) :- edge(X,Y).       rule (probability may be omitted, then 1)
    path(X,Z) :- path(X,Y), edge(Y,Z).
    query(path(1,7)).

Negation is spelled ``\\+`` and is allowed in rule bodies and in the givens
of a conditional declaration.  Comments run from ``%`` to end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

Term = Union[str, int]  # lowercase constant / integer constant / uppercase variable


class PralineError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PralineError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"parse error at {line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


class ProbabilityRangeError(PralineError):
    pass


class ConflictError(PralineError):
    pass


class NonStratifiedError(PralineError):
    pass


class ScaleError(PralineError):
    pass


class DimensionCapExceeded(PralineError):
    pass


class BudgetExceeded(PralineError):
    pass


class InfeasibleError(PralineError):
    """The declared input probabilities admit no joint distribution."""


def is_var(t: Term) -> bool:
    return isinstance(t, str) and (t[0].isupper() or t[0] == "_")


@dataclass(frozen=True)
class Atom:
    functor: str
    args: tuple[Term, ...] = ()

    def __str__(self) -> str:
        if not self.args:
            return self.functor
        return f"{self.functor}({','.join(str(a) for a in self.args)})"

    __repr__ = __str__

    @property
    def is_ground(self) -> bool:
        return not any(is_var(a) for a in self.args)


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False

    def __str__(self) -> str:
        return ("\\+" if self.negated else "") + str(self.atom)

    __repr__ = __str__


@dataclass
class Rule:
    head: Atom
    body: tuple[Literal, ...]
    prob: float = 1.0

    def __str__(self) -> str:
        body = ", ".join(str(l) for l in self.body)
        return f"{self.prob} :: {self.head} :- {body}."


@dataclass
class InputProbDecl:
    """``p :: I | S.``; an empty S means the marginal P(I) = p."""

    head: Atom
    givens: tuple[Literal, ...]
    prob: float

    @property
    def is_marginal(self) -> bool:
        return not self.givens

    def atoms(self) -> Iterable[Atom]:
        yield self.head
        for lit in self.givens:
            yield lit.atom

    def __str__(self) -> str:
        if self.is_marginal:
            return f"{self.prob} :: {self.head}."
        gs = ", ".join(str(l) for l in self.givens)
        return f"{self.prob} :: {self.head} | {gs}."


@dataclass
class CorrelationClass:
    """A set of input facts that may be statistically dependent.

    ``class_id`` is the user-declared id, or -1 for inferred classes.
    ``ordinal`` is the 1-based position in canonical order (order of first
    member declaration), used for display names V1, V2, ...
    Members keep declaration order; member k maps to bit k of the class's
    joint assignment bitvector.
    """

    class_id: int
    members: tuple[Atom, ...]
    ordinal: int = 0

    def __len__(self) -> int:
        return len(self.members)

    def bit_of(self, atom: Atom) -> int:
        return self.members.index(atom)


@dataclass
class Program:
    input_probs: list[InputProbDecl] = field(default_factory=list)
    rules: list[Rule] = field(default_factory=list)
    corr_decls: list[tuple[Atom, ...]] = field(default_factory=list)
    class_decls: list[tuple[int, Atom]] = field(default_factory=list)
    queries: list[Atom] = field(default_factory=list)
    classes: list[CorrelationClass] = field(default_factory=list)
    fact_class: dict[Atom, tuple[int, int]] = field(default_factory=dict)
    # fact_class maps each input fact to (class position in self.classes, bit index)

    @property
    def input_facts(self) -> list[Atom]:
        """All declared input facts in first-appearance order."""
        seen: dict[Atom, None] = {}
        for d in self.input_probs:
            for a in d.atoms():
                seen.setdefault(a, None)
        for group in self.corr_decls:
            for a in group:
                seen.setdefault(a, None)
        for _, a in self.class_decls:
            seen.setdefault(a, None)
        return list(seen)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|%[^\n]*)
  | (?P<num>\d+\.\d+|\.\d+|\d+)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<op>::|:-|\\\+|[|,().])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    line, col = 1, 1
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.text != text:
            raise ParseError(f"expected {text!r}, got {t.text!r}", t.line, t.col)
        return t

    def fail(self, msg: str):
        t = self.peek()
        raise ParseError(msg, t.line, t.col)

    def parse_program(self) -> Program:
        prog = Program()
        while self.peek().kind != "eof":
            self.parse_statement(prog)
        return prog

    def parse_statement(self, prog: Program):
        t = self.peek()
        if t.kind == "num":
            prob_tok = self.next()
            prob = float(prob_tok.text)
            self.expect("::")
            if not (0.0 <= prob <= 1.0) and self.peek().text != "Class":
                raise ProbabilityRangeError(
                    f"probability {prob_tok.text} out of [0,1] at line {prob_tok.line}"
                )
            self.parse_clause(prog, prob, prob_tok)
        elif t.kind == "name" and t.text == "corr":
            self.next()
            self.expect("(")
            atoms = [self.parse_atom()]
            while self.peek().text == ",":
                self.next()
                atoms.append(self.parse_atom())
            self.expect(")")
            self.expect(".")
            self._require_ground(atoms, "corr declaration")
            prog.corr_decls.append(tuple(atoms))
        elif t.kind == "name" and t.text == "query":
            self.next()
            self.expect("(")
            atom = self.parse_atom()
            self.expect(")")
            self.expect(".")
            prog.queries.append(atom)
        elif t.kind == "name":
            self.parse_clause(prog, 1.0, t)
        else:
            self.fail(f"unexpected token {t.text!r}")

    def parse_clause(self, prog: Program, prob: float, at: _Tok):
        t = self.peek()
        if t.kind == "var" and t.text == "Class":
            # explicit class assignment: k :: Class(fact).
            self.next()
            self.expect("(")
            atom = self.parse_atom()
            self.expect(")")
            self.expect(".")
            if prob != int(prob) or prob < 0:
                raise ParseError(
                    f"class id must be a nonnegative integer, got {prob}", at.line, at.col
                )
            self._require_ground([atom], "class declaration")
            prog.class_decls.append((int(prob), atom))
            return
        head = self.parse_atom()
        nxt = self.peek().text
        if nxt == ":-":
            self.next()
            body = self.parse_literals()
            self.expect(".")
            prog.rules.append(Rule(head, tuple(body), prob))
        elif nxt == "|":
            self.next()
            givens = self.parse_literals()
            self.expect(".")
            decl = InputProbDecl(head, tuple(givens), prob)
            self._require_ground(list(decl.atoms()), "probability declaration")
            prog.input_probs.append(decl)
        elif nxt == ".":
            self.next()
            decl = InputProbDecl(head, (), prob)
            self._require_ground([head], "probability declaration")
            prog.input_probs.append(decl)
        else:
            self.fail(f"expected '.', '|' or ':-', got {nxt!r}")

    def parse_literals(self) -> list[Literal]:
        lits = [self.parse_literal()]
        while self.peek().text == ",":
            self.next()
            lits.append(self.parse_literal())
        return lits

    def parse_literal(self) -> Literal:
        neg = False
        if self.peek().text == "\\+":
            self.next()
            neg = True
        return Literal(self.parse_atom(), neg)

    def parse_atom(self) -> Atom:
        t = self.next()
        if t.kind not in ("name", "var"):
            raise ParseError(f"expected an atom, got {t.text!r}", t.line, t.col)
        if t.kind == "var":
            raise ParseError(f"atom cannot start with a variable: {t.text!r}", t.line, t.col)
        if self.peek().text != "(":
            return Atom(t.text)
        self.next()
        args = [self.parse_term()]
        while self.peek().text == ",":
            self.next()
            args.append(self.parse_term())
        self.expect(")")
        return Atom(t.text, tuple(args))

    def parse_term(self) -> Term:
        t = self.next()
        if t.kind == "num":
            if "." in t.text:
                raise ParseError("float terms are not supported", t.line, t.col)
            return int(t.text)
        if t.kind in ("name", "var"):
            return t.text
        raise ParseError(f"expected a term, got {t.text!r}", t.line, t.col)

    def _require_ground(self, atoms: list[Atom], what: str):
        for a in atoms:
            if not a.is_ground:
                raise ParseError(f"{what} must be ground, got {a}")


def parse(src: str) -> Program:
    """Parse source text and resolve correlation classes."""
    prog = _Parser(src).parse_program()
    return infer_correlation_classes(prog)


class _UnionFind:
    def __init__(self):
        self.parent: dict[Atom, Atom] = {}

    def add(self, x: Atom):
        self.parent.setdefault(x, x)

    def find(self, x: Atom) -> Atom:
        while self.parent[x] is not x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x: Atom, y: Atom):
        rx, ry = self.find(x), self.find(y)
        if rx is not ry:
            self.parent[ry] = rx


def infer_correlation_classes(prog: Program) -> Program:
    """Partition the declared input facts into correlation classes.

    Facts referenced together in a conditional declaration or a corr(...)
    statement land in the same class (connected components of that relation).
    Explicit ``k :: Class(f)`` declarations name the class; facts sharing a
    declared id are unified.  A fact cannot be placed in two distinct declared
    classes, directly or through connectivity (ConflictError).  Everything
    else becomes a class with id -1.  Idempotent.
    """
    facts = prog.input_facts
    uf = _UnionFind()
    for f in facts:
        uf.add(f)
    for d in prog.input_probs:
        for a in d.atoms():
            uf.union(d.head, a)
    for group in prog.corr_decls:
        for a in group[1:]:
            uf.union(group[0], a)

    declared: dict[Atom, int] = {}
    by_id: dict[int, Atom] = {}
    for cid, a in prog.class_decls:
        if a in declared and declared[a] != cid:
            raise ConflictError(f"{a} placed in classes {declared[a]} and {cid}")
        declared[a] = cid
        if cid in by_id:
            uf.union(by_id[cid], a)
        else:
            by_id[cid] = a

    components: dict[Atom, list[Atom]] = {}
    for f in facts:  # keeps first-appearance order within each component
        components.setdefault(uf.find(f), []).append(f)

    classes: list[CorrelationClass] = []
    for members in components.values():
        ids = sorted({declared[m] for m in members if m in declared})
        if len(ids) > 1:
            raise ConflictError(
                f"facts {members} connect classes {ids} into one component"
            )
        cid = ids[0] if ids else -1
        classes.append(CorrelationClass(cid, tuple(members)))

    # canonical order: by first member declaration; ordinals are 1-based
    order = {f: i for i, f in enumerate(facts)}
    classes.sort(key=lambda c: order[c.members[0]])
    fact_class: dict[Atom, tuple[int, int]] = {}
    for pos, c in enumerate(classes):
        c.ordinal = pos + 1
        for bit, m in enumerate(c.members):
            fact_class[m] = (pos, bit)

    prog.classes = classes
    prog.fact_class = fact_class
    return prog


def format_bits(value: int, width: int) -> str:
    """Bitvector display string, member 0 leftmost ('110' = m0,m1 set)."""
    return "".join("1" if value >> k & 1 else "0" for k in range(width))


def parse_bits(s: str) -> int:
    return sum(1 << k for k, ch in enumerate(s) if ch == "1")
