"""Decidability classification: acyclic signatures, tame signatures,
monotonicity constraints, and the bounded-lookback probe built on
variable-dependency graphs of trace unfoldings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .gateway import SmtGateway, SolverConfig, TheoryContext
from .ltlf import Property, property_constraints
from .terms import (
    App,
    Constraint,
    EqAtom,
    LinAtom,
    Lit,
    Literal,
    RatVal,
    RelAtom,
    Signature,
    Sort,
    Term,
    Var,
    term_vars,
)


# ---------------------------------------------------------------------------
# Signature shape checks


@dataclass
class SortGraph:
    nodes: tuple[Sort, ...]
    edges: tuple[tuple[Sort, Sort], ...]  # one edge per function, domain to result

    def to_dot(self) -> str:
        lines = ["digraph sorts {"]
        for s in self.nodes:
            lines.append(f'  "{s.name}";')
        for a, b in self.edges:
            lines.append(f'  "{a.name}" -> "{b.name}";')
        lines.append("}")
        return "\n".join(lines)


def sort_graph(sig: Signature) -> SortGraph:
    from .terms import RAT

    nodes = list(sig.sorts)
    if RAT not in nodes and (
        any(s.is_rational for s in sig.sorts)
        or any(f.res_sort.is_rational or any(a.is_rational for a in f.arg_sorts) for f in sig.functions)
        or any(any(a.is_rational for a in r.arg_sorts) for r in sig.relations)
        or any(v[1].is_rational for v in sig.variables)
        or any(c.sort.is_rational for c in sig.constants)
    ):
        nodes.append(RAT)
    edges = []
    for f in sig.functions:
        for a in f.arg_sorts:
            edges.append((a, f.res_sort))
    return SortGraph(tuple(nodes), tuple(edges))


def check_acyclic(sig: Signature) -> tuple[bool, SortGraph]:
    """No cycle among sorts along function edges."""
    g = sort_graph(sig)
    adj: dict[Sort, list[Sort]] = {}
    for a, b in g.edges:
        adj.setdefault(a, []).append(b)
    state: dict[Sort, int] = {}

    def dfs(s: Sort) -> bool:
        state[s] = 1
        for t in adj.get(s, []):
            if state.get(t) == 1:
                return False
            if state.get(t, 0) == 0 and not dfs(t):
                return False
        state[s] = 2
        return True

    for s in g.nodes:
        if state.get(s, 0) == 0 and not dfs(s):
            return False, g
    return True, g


def check_tame(sig: Signature) -> bool:
    """Rational sorts are leaves of the sort graph: no function takes a
    rational argument."""
    for f in sig.functions:
        if any(a.is_rational for a in f.arg_sorts):
            return False
    return True


def _guard_literals(d) -> list[tuple[str, Literal]]:
    out = []
    for t in d.transitions:
        for l in t.guard.literals:
            out.append((t.name, l))
    return out


def _property_literals(psi: Property) -> list[Literal]:
    out = []
    for c in property_constraints(psi):
        out.extend(c.literals)
    return out


def is_monotonicity_atom(a: LinAtom) -> bool:
    """A comparison of at most two unscaled terms without additive mixing:
    t op t' or t op constant."""
    if len(a.coeffs) > 2:
        return False
    coeffs = [c for _, c in a.coeffs]
    if len(coeffs) == 2:
        return sorted(coeffs) == [-1, 1] and a.const == 0
    if len(coeffs) == 1:
        return abs(coeffs[0]) == 1
    return True


def check_mc(d, psi: Optional[Property] = None) -> tuple[bool, list[str]]:
    """Every arithmetic atom in guards and the property is a monotonicity
    constraint; offenders are reported."""
    offenders = []
    items: list[tuple[str, Literal]] = _guard_literals(d)
    if psi is not None:
        items += [("property", l) for l in _property_literals(psi)]
    for where, l in items:
        if isinstance(l.atom, LinAtom) and not is_monotonicity_atom(l.atom):
            offenders.append(f"{where}: {l.atom}")
    return not offenders, offenders


def uses_arithmetic(d, psi: Optional[Property] = None) -> bool:
    if any(v.sort.is_rational for v in d.variables):
        return True
    if any(f.res_sort.is_rational for f in d.signature.functions):
        return True
    items = [l for _, l in _guard_literals(d)]
    if psi is not None:
        items += _property_literals(psi)
    return any(isinstance(l.atom, LinAtom) for l in items)


# ---------------------------------------------------------------------------
# Computation graphs

Edge = frozenset  # of two variables


@dataclass
class ComputationGraph:
    nodes: tuple[Var, ...]  # indexed variable copies
    all_edges: tuple[Edge, ...]
    equality_edges: tuple[Edge, ...]

    def collapsed_longest_path(self, cap: Optional[int] = None) -> int:
        return _longest_path(*self._collapse(), cap=cap)

    def _collapse(self) -> tuple[list[int], dict[int, set[int]]]:
        parent = {v: v for v in self.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.equality_edges:
            a, b = tuple(e)
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        classes = sorted({find(v) for v in self.nodes}, key=str)
        index = {c: i for i, c in enumerate(classes)}
        adj: dict[int, set[int]] = {i: set() for i in range(len(classes))}
        for e in self.all_edges:
            a, b = tuple(e)
            ia, ib = index[find(a)], index[find(b)]
            if ia != ib:
                adj[ia].add(ib)
                adj[ib].add(ia)
        return list(range(len(classes))), adj

    def to_dot(self) -> str:
        lines = ["graph computation {", "  node [shape=point];"]
        names = {v: f'"{v}"' for v in self.nodes}
        for v in self.nodes:
            lines.append(f'  {names[v]} [xlabel="{v}"];')
        eq = set(self.equality_edges)
        for e in self.all_edges:
            a, b = sorted(e, key=str)
            style = " [style=dotted]" if e in eq else ""
            lines.append(f"  {names[a]} -- {names[b]}{style};")
        lines.append("}")
        return "\n".join(lines)


def _longest_path(nodes: list[int], adj: dict[int, set[int]], cap: Optional[int] = None) -> int:
    best = 0

    def dfs(v: int, visited: set[int], length: int) -> bool:
        nonlocal best
        best = max(best, length)
        if cap is not None and best > cap:
            return True
        for w in sorted(adj[v]):
            if w not in visited:
                if dfs(w, visited | {w}, length + 1):
                    return True
        return False

    for v in nodes:
        if dfs(v, {v}, 0):
            break
    return best


def _literal_pairs(l: Literal) -> tuple[list[tuple[Var, Var]], bool]:
    """Variable pairs contributed by one literal and whether they are
    equality edges.

    Relation atoms couple all their variables.  Comparisons couple the
    variables on opposite sides of the relation symbol, recovered from the
    coefficient signs of the normalized form.  Only plain variable-variable
    equalities count as equality edges."""
    a = l.atom
    if isinstance(a, RelAtom):
        vs = sorted({v for t in a.args for v in term_vars(t)}, key=str)
        return [(vs[i], vs[j]) for i in range(len(vs)) for j in range(i + 1, len(vs))], False
    if isinstance(a, EqAtom):
        left = sorted(term_vars(a.lhs), key=str)
        right = sorted(term_vars(a.rhs), key=str)
        pairs = [(x, y) for x in left for y in right if x != y]
        is_eq = (
            l.positive
            and isinstance(a.lhs, Var)
            and isinstance(a.rhs, Var)
        )
        return pairs, is_eq
    pos = sorted({v for t, c in a.coeffs if c > 0 for v in term_vars(t)}, key=str)
    negv = sorted({v for t, c in a.coeffs if c < 0 for v in term_vars(t)}, key=str)
    pairs = [(x, y) for x in pos for y in negv if x != y]
    is_eq = (
        a.op == "eq"
        and a.const == 0
        and len(a.coeffs) == 2
        and all(isinstance(t, Var) for t, _ in a.coeffs)
        and sorted(c for _, c in a.coeffs) == [-1, 1]
    )
    return pairs, is_eq


def build_computation_graph(d, sigma: Sequence[str], word) -> ComputationGraph:
    """Dependency graph of one unfolding: indexed variables are nodes, and
    two of them are adjacent when a chain of shared literals connects them
    through the hidden (quantified) variables."""
    from .system import history

    h = history(d, sigma, word)
    indexed = [v.with_ann(i) for i in range(h.length + 1) for v in d.variables]
    hidden = set(h.hidden)
    all_adj: dict[Var, set[Var]] = {}
    eq_adj: dict[Var, set[Var]] = {}

    def connect(adj, x, y):
        adj.setdefault(x, set()).add(y)
        adj.setdefault(y, set()).add(x)

    for l in h.cube:
        pairs, is_eq = _literal_pairs(l)
        for x, y in pairs:
            connect(all_adj, x, y)
            if is_eq:
                connect(eq_adj, x, y)

    def closure(adj) -> set[Edge]:
        edges: set[Edge] = set()
        for start in indexed:
            # breadth-first through hidden connectors only
            seen = {start}
            frontier = [start]
            while frontier:
                nxt = []
                for u in frontier:
                    for w in adj.get(u, ()):  # type: ignore[union-attr]
                        if w in seen:
                            continue
                        if w in hidden:
                            seen.add(w)
                            nxt.append(w)
                        elif w != start:
                            seen.add(w)
                            edges.add(frozenset((start, w)))
                frontier = nxt
        return edges

    return ComputationGraph(tuple(indexed), tuple(sorted(closure(all_adj), key=str)), tuple(sorted(closure(eq_adj), key=str)))


# ---------------------------------------------------------------------------
# Bounded lookback


@dataclass
class LookbackResult:
    kind: str  # "holds" | "violated" | "unknown"
    k: int
    depth: int
    witness_sigma: tuple[str, ...] = ()
    witness_word: tuple = ()
    path_length: int = 0

    def __str__(self) -> str:
        if self.kind == "holds":
            return f"holds({self.k})"
        if self.kind == "violated":
            return (
                f"violated(k={self.k}, sigma={list(self.witness_sigma)}, "
                f"path={self.path_length})"
            )
        return f"unknownUpTo({self.depth})"


def check_bounded_lookback(
    d,
    psi: Property,
    k: int,
    depth: int,
    gateway: Optional[SmtGateway] = None,
    jobs: int = 1,
) -> LookbackResult:
    """Enumerate satisfiable unfoldings up to the given depth and compare
    the longest collapsed dependency path against k.

    Returns a violation as soon as one is found; `holds` requires the
    enumeration frontier to die out before the depth bound, otherwise the
    outcome is open."""
    if k < 0 or depth < 1:
        raise ValueError("k must be >= 0 and depth >= 1")
    from .system import history

    own = gateway is None
    gw = gateway if gateway is not None else SmtGateway(d.ctx, SolverConfig.from_env())
    # A symbol is worth enumerating only if some constraint in it contributes
    # a dependency edge: other constraints merely shrink satisfiability and
    # can never lengthen a collapsed path, so the empty symbol dominates them.
    relevant = [
        c
        for c in property_constraints(psi)
        if any(_literal_pairs(l)[0] for l in c.literals)
    ]
    symbols: list[tuple[Constraint, ...]] = []
    for mask in range(1 << len(relevant)):
        sym = tuple(c for i, c in enumerate(relevant) if mask >> i & 1)
        symbols.append(sym)
    # drop symbols that are unsatisfiable on their own
    from .terms import conj

    symbols = [
        s
        for s in symbols
        if not s
        or gw.check_sat(conj([c.formula() for c in s]), phase="lookback").verdict == "sat"
    ]

    try:
        frontier: list[tuple[tuple[str, ...], tuple]] = []
        for s0 in symbols:
            h = history(d, (), (s0,))
            if gw.check_sat(h.formula, phase="lookback").verdict != "unsat":
                g = build_computation_graph(d, (), (s0,))
                if g.collapsed_longest_path(cap=k) > k:
                    return LookbackResult("violated", k, depth, (), (s0,), g.collapsed_longest_path())
                frontier.append(((), (s0,)))
        exhausted = True
        for level in range(1, depth + 1):
            nxt: list[tuple[tuple[str, ...], tuple]] = []
            for sigma, word in frontier:
                for t in d.transitions:
                    for s in symbols:
                        sigma2 = sigma + (t.name,)
                        word2 = word + (s,)
                        h = history(d, sigma2, word2)
                        if gw.check_sat(h.formula, phase="lookback").verdict == "unsat":
                            continue
                        g = build_computation_graph(d, sigma2, word2)
                        if g.collapsed_longest_path(cap=k) > k:
                            return LookbackResult(
                                "violated", k, depth, sigma2, word2, g.collapsed_longest_path()
                            )
                        nxt.append((sigma2, word2))
            frontier = nxt
            if not frontier:
                return LookbackResult("holds", k, level)
            exhausted = False
        return LookbackResult("unknown", k, depth)
    finally:
        if own:
            gw.close()


# ---------------------------------------------------------------------------
# Classification


@dataclass
class ClassReport:
    acyclic_signature: bool
    tame: bool
    all_arithmetic_mc: bool
    mc_offenders: list[str]
    uses_arithmetic: bool
    locally_finite_asserted: bool
    lookback: Optional[LookbackResult]
    decidable_class: str  # "I" | "II" | "III" | "IV" | "none"

    def to_json(self) -> dict:
        out = {
            "acyclicSignature": self.acyclic_signature,
            "tame": self.tame,
            "allArithmeticMC": self.all_arithmetic_mc,
            "mcOffenders": self.mc_offenders,
            "usesArithmetic": self.uses_arithmetic,
            "locallyFiniteAsserted": self.locally_finite_asserted,
            "decidableClass": self.decidable_class,
        }
        if self.lookback is not None:
            out["boundedLookback"] = {
                "kind": self.lookback.kind,
                "k": self.lookback.k,
                "depth": self.lookback.depth,
                "sigma": list(self.lookback.witness_sigma),
                "pathLength": self.lookback.path_length,
            }
        return out


def classify(
    d,
    psi: Property,
    k: int = 5,
    depth: int = 6,
    locally_finite_asserted: bool = False,
    probe_lookback: bool = True,
    gateway: Optional[SmtGateway] = None,
    jobs: int = 1,
) -> ClassReport:
    """Class priority: acyclic first, then acyclic with monotonicity
    constraints, then asserted local finiteness; bounded lookback is probed
    only when the syntactic classes fail."""
    acyclic, _ = check_acyclic(d.signature)
    tame = check_tame(d.signature)
    mc_ok, offenders = check_mc(d, psi)
    arith = uses_arithmetic(d, psi)
    lookback: Optional[LookbackResult] = None
    if acyclic and not arith:
        cls = "I"
    elif acyclic and tame and mc_ok:
        cls = "II"
    elif locally_finite_asserted:
        cls = "III"
    else:
        cls = "none"
        if probe_lookback:
            lookback = check_bounded_lookback(d, psi, k, depth, gateway=gateway, jobs=jobs)
            if lookback.kind == "holds":
                cls = "IV"
    return ClassReport(acyclic, tame, mc_ok, offenders, arith, locally_finite_asserted, lookback, cls)
