"""Finite-trace temporal properties over constraint atoms and their
translation to constraint-labeled NFAs.

The translation follows the classic residual construction: a transition
function delta maps a property to successor residuals together with extended
alphabet symbols carrying an end-of-trace marker, which is then stripped when
the automaton is assembled.  Symbols whose constraint sets are jointly
unsatisfiable in the background theory are filtered out during construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .gateway import SmtGateway, SolverConfig, TheoryContext
from .terms import Constraint, TRUE_CONSTRAINT, conj

LAMBDA = "~last"
NOT_LAMBDA = "~more"

Marker = str
SymbolPart = Union[Constraint, Marker]
Symbol = frozenset  # of Constraint (emitted) or Constraint|Marker (internal)


class Property:
    """Base class for temporal properties; leaves are constraints."""

    def __and__(self, other: "Property") -> "Property":
        return and_(self, other)

    def __or__(self, other: "Property") -> "Property":
        return or_(self, other)


@dataclass(frozen=True)
class Leaf(Property):
    constraint: Constraint

    def __str__(self) -> str:
        return f"({self.constraint})"


@dataclass(frozen=True)
class AndP(Property):
    args: tuple[Property, ...]

    def __str__(self) -> str:
        return "(" + " & ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class OrP(Property):
    args: tuple[Property, ...]

    def __str__(self) -> str:
        return "(" + " | ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class Next(Property):
    arg: Property

    def __str__(self) -> str:
        return f"X {self.arg}"


@dataclass(frozen=True)
class Globally(Property):
    arg: Property

    def __str__(self) -> str:
        return f"G {self.arg}"


@dataclass(frozen=True)
class Until(Property):
    lhs: Property
    rhs: Property

    def __str__(self) -> str:
        return f"({self.lhs} U {self.rhs})"


@dataclass(frozen=True)
class TopState(Property):
    """The accepted-residual state."""

    def __str__(self) -> str:
        return "TRUE"


@dataclass(frozen=True)
class BotState(Property):
    def __str__(self) -> str:
        return "FALSE"


@dataclass(frozen=True)
class EndState(Property):
    """Designated extra final state reached on the last trace element."""

    def __str__(self) -> str:
        return "END"


TOP = TopState()
BOT = BotState()
END = EndState()


def eventually(p: Property) -> Property:
    return Until(Leaf(TRUE_CONSTRAINT), p)


def prop_key(p: Property) -> tuple:
    if isinstance(p, Leaf):
        return ("c", str(p.constraint))
    if isinstance(p, AndP):
        return ("&",) + tuple(prop_key(a) for a in p.args)
    if isinstance(p, OrP):
        return ("|",) + tuple(prop_key(a) for a in p.args)
    if isinstance(p, Next):
        return ("X", prop_key(p.arg))
    if isinstance(p, Globally):
        return ("G", prop_key(p.arg))
    if isinstance(p, Until):
        return ("U", prop_key(p.lhs), prop_key(p.rhs))
    return (str(p),)


def and_(a: Property, b: Property) -> Property:
    if isinstance(a, BotState) or isinstance(b, BotState):
        return BOT
    if isinstance(a, TopState):
        return b
    if isinstance(b, TopState):
        return a
    args: list[Property] = []
    for x in (a, b):
        for y in x.args if isinstance(x, AndP) else (x,):
            if y not in args:
                args.append(y)
    args.sort(key=prop_key)
    return args[0] if len(args) == 1 else AndP(tuple(args))


def or_(a: Property, b: Property) -> Property:
    if isinstance(a, TopState) or isinstance(b, TopState):
        return TOP
    if isinstance(a, BotState):
        return b
    if isinstance(b, BotState):
        return a
    args: list[Property] = []
    for x in (a, b):
        for y in x.args if isinstance(x, OrP) else (x,):
            if y not in args:
                args.append(y)
    args.sort(key=prop_key)
    return args[0] if len(args) == 1 else OrP(tuple(args))


def property_constraints(p: Property) -> list[Constraint]:
    """The constraint leaves, in first-occurrence order."""
    out: list[Constraint] = []

    def walk(q: Property) -> None:
        if isinstance(q, Leaf):
            if q.constraint not in out:
                out.append(q.constraint)
        elif isinstance(q, (AndP, OrP)):
            for a in q.args:
                walk(a)
        elif isinstance(q, (Next, Globally)):
            walk(q.arg)
        elif isinstance(q, Until):
            walk(q.lhs)
            walk(q.rhs)

    walk(p)
    return out


# ---------------------------------------------------------------------------
# The transition function over residuals


class DeltaContext:
    """Memoizes residual expansion and theory filtering of symbols."""

    def __init__(self, ctx: TheoryContext, gateway: Optional[SmtGateway] = None):
        self.ctx = ctx
        self._own = gateway is None
        self.gateway = gateway if gateway is not None else SmtGateway(ctx, SolverConfig.from_env())
        self._symbol_sat: dict[frozenset, bool] = {}
        self._delta: dict[Property, list] = {}

    def close(self) -> None:
        if self._own:
            self.gateway.close()

    def symbol_satisfiable(self, symbol: frozenset) -> bool:
        if LAMBDA in symbol and NOT_LAMBDA in symbol:
            return False
        constraints = frozenset(x for x in symbol if isinstance(x, Constraint))
        if constraints not in self._symbol_sat:
            f = conj([c.formula() for c in sorted(constraints, key=str)])
            verdict = self.gateway.check_sat(f, phase="nfa-build").verdict
            self._symbol_sat[constraints] = verdict == "sat"
        return self._symbol_sat[constraints]

    def delta(self, q: Property) -> list[tuple[Property, frozenset]]:
        if q in self._delta:
            return self._delta[q]
        out = self._compute(q)
        self._delta[q] = out
        return out

    def _compute(self, q: Property) -> list[tuple[Property, frozenset]]:
        if isinstance(q, TopState):
            return [(TOP, frozenset())]
        if isinstance(q, BotState):
            return [(BOT, frozenset())]
        if isinstance(q, Leaf):
            return [(TOP, frozenset([q.constraint])), (BOT, frozenset())]
        if isinstance(q, AndP):
            acc = self.delta(q.args[0])
            for arg in q.args[1:]:
                acc = self._combine(acc, self.delta(arg), and_)
            if all(isinstance(a, Leaf) for a in q.args):
                acc = _prune_same_successor_supersets(acc)
            return acc
        if isinstance(q, OrP):
            acc = self.delta(q.args[0])
            for arg in q.args[1:]:
                acc = self._combine(acc, self.delta(arg), or_)
            if all(isinstance(a, Leaf) for a in q.args):
                acc = _prune_same_successor_supersets(acc)
            return acc
        if isinstance(q, Next):
            return [(q.arg, frozenset([NOT_LAMBDA])), (BOT, frozenset([LAMBDA]))]
        if isinstance(q, Globally):
            lam = [(TOP, frozenset([LAMBDA])), (BOT, frozenset([NOT_LAMBDA]))]
            cont = self._combine(self.delta(Next(q)), lam, or_)
            return self._combine(self.delta(q.arg), cont, and_)
        if isinstance(q, Until):
            step = self.delta(Next(q))
            hold = self._combine(self.delta(q.lhs), step, and_)
            return self._combine(self.delta(q.rhs), hold, or_)
        raise TypeError(f"no residual expansion for {q!r}")

    def _combine(self, r1, r2, op) -> list[tuple[Property, frozenset]]:
        out: list[tuple[Property, frozenset]] = []
        for p1, s1 in r1:
            for p2, s2 in r2:
                s = s1 | s2
                if not self.symbol_satisfiable(s):
                    continue
                item = (op(p1, p2), s)
                if item not in out:
                    out.append(item)
        return out


def _prune_same_successor_supersets(tuples: list[tuple[Property, frozenset]]):
    out = []
    for p, s in tuples:
        redundant = any(p2 == p and s2 < s for p2, s2 in tuples)
        if not redundant and (p, s) not in out:
            out.append((p, s))
    return out


def delta(q: Property, ctx: TheoryContext, gateway: Optional[SmtGateway] = None):
    """Residual expansion of one state; mainly a testing surface."""
    d = DeltaContext(ctx, gateway)
    try:
        return d.delta(q)
    finally:
        d.close()


# ---------------------------------------------------------------------------
# The automaton


@dataclass
class PropertyNFA:
    states: tuple[Property, ...]
    initial: Property
    finals: tuple[Property, ...]
    transitions: tuple[tuple[Property, frozenset, Property], ...]

    def edges_from(self, q: Property):
        return [t for t in self.transitions if t[0] == q]

    def pretty(self) -> str:
        lines = [f"initial: {self.initial}", "finals: " + ", ".join(str(f) for f in self.finals)]
        for q, s, q2 in self.transitions:
            label = "{" + ", ".join(sorted(str(c) for c in s)) + "}"
            lines.append(f"  {q} --{label}--> {q2}")
        return "\n".join(lines)


def build_nfa(psi: Property, ctx: TheoryContext, gateway: Optional[SmtGateway] = None) -> PropertyNFA:
    """Least fixpoint of residual expansion from the property, with the
    end-of-trace marker stripped into edges to the designated final state."""
    d = DeltaContext(ctx, gateway)
    try:
        states: list[Property] = [psi]
        if TOP not in states:
            states.append(TOP)
        transitions: list[tuple[Property, frozenset, Property]] = []
        todo = [psi, TOP]
        seen = {psi, TOP}
        while todo:
            q = todo.pop(0)
            for q2, symbol in d.delta(q):
                constraints = frozenset(x for x in symbol if isinstance(x, Constraint))
                if LAMBDA not in symbol:
                    edge = (q, constraints, q2)
                    if edge not in transitions:
                        transitions.append(edge)
                    if q2 not in seen:
                        seen.add(q2)
                        states.append(q2)
                        todo.append(q2)
                elif q2 == TOP:
                    edge = (q, constraints, END)
                    if edge not in transitions:
                        transitions.append(edge)
        states.append(END)
        finals = (TOP, END)
        return PropertyNFA(tuple(states), psi, finals, tuple(transitions))
    finally:
        d.close()


def simplify_nfa(nfa: PropertyNFA, ctx: Optional[TheoryContext] = None) -> PropertyNFA:
    """Language-preserving cleanup: drop superset-labeled parallel edges,
    drop states that cannot contribute to acceptance, and drop the designated
    end state when the accepting state duplicates it."""
    edges = list(nfa.transitions)
    edges = [
        (q, s, q2)
        for (q, s, q2) in edges
        if not any(qq == q and qq2 == q2 and ss < s for (qq, ss, qq2) in edges)
    ]

    changed = True
    while changed:
        changed = False
        # reachability forward from the initial state
        reach = {nfa.initial}
        grow = True
        while grow:
            grow = False
            for q, _, q2 in edges:
                if q in reach and q2 not in reach:
                    reach.add(q2)
                    grow = True
        # co-reachability back from the final states
        coreach = {f for f in nfa.finals}
        grow = True
        while grow:
            grow = False
            for q, _, q2 in edges:
                if q2 in coreach and q not in coreach:
                    coreach.add(q)
                    grow = True
        useful = (reach & coreach) | {nfa.initial}
        if [e for e in edges if e[0] not in useful or e[2] not in useful]:
            changed = True
        edges = [e for e in edges if e[0] in useful and e[2] in useful]

        # the end state is redundant when each of its in-edges has a parallel
        # edge into the plain accepting state
        if END in useful and TOP in useful:
            in_end = [e for e in edges if e[2] == END]
            if all(any(e2 == (q, s, TOP) for e2 in edges) for (q, s, _) in in_end):
                edges = [e for e in edges if e[2] != END]
                useful.discard(END)
                changed = True

    states = tuple(q for q in nfa.states if q in useful)
    finals = tuple(q for q in nfa.finals if q in useful)
    return PropertyNFA(states, nfa.initial, finals, tuple(edges))


def nfa_accepts(nfa: PropertyNFA, word: Sequence[Iterable[Constraint]]) -> bool:
    """Standard acceptance with exact symbol matching."""
    current = {nfa.initial}
    for raw in word:
        symbol = frozenset(raw)
        current = {q2 for (q, s, q2) in nfa.transitions if q in current and s == symbol}
        if not current:
            return False
    return any(q in current for q in nfa.finals)


def nfa_to_dot(nfa: PropertyNFA) -> str:
    """Graphviz rendering: states labeled with their residual property."""
    ids = {q: f"q{i}" for i, q in enumerate(nfa.states)}
    lines = ["digraph nfa {", "  rankdir=LR;", '  node [shape=box, style=rounded];']
    for q in nfa.states:
        shape = ' peripheries=2' if q in nfa.finals else ""
        lines.append(f'  {ids[q]} [label="{_dot_escape(str(q))}"{shape}];')
    lines.append(f"  init [shape=none, label=\"\"];")
    lines.append(f"  init -> {ids[nfa.initial]};")
    for q, s, q2 in nfa.transitions:
        label = "{" + ", ".join(sorted(str(c) for c in s)) + "}"
        lines.append(f'  {ids[q]} -> {ids[q2]} [label="{_dot_escape(label)}"];')
    lines.append("}")
    return "\n".join(lines)


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')
