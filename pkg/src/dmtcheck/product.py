"""Symbolic product of a system with a property automaton.

Nodes pair an automaton state with a quantifier-free state summary; taking a
transition updates the summary by a cover and conjoins the constraints read
on the automaton edge.  Nodes with equivalent summaries and the same
automaton state are merged, which makes the construction terminate whenever
finitely many summaries arise.  Expansion is breadth-first, so an accepting
node is found whenever one exists."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import qe
from .gateway import GatewayError, SmtGateway, SolverConfig, TheoryContext
from .ltlf import Leaf, Property, PropertyNFA, property_constraints
from .system import (
    DMT,
    HistoryFormula,
    Run,
    Transition,
    decode_run,
    evaluate_property,
    history,
    history_exists,
    initial_formula,
    simplify_formula,
    update,
    validate_run,
)
from .terms import (
    Constraint,
    Exists,
    FALSE,
    Formula,
    Lit,
    TRUE,
    canonical_key,
    conj,
    rename_to_index,
    subst,
    to_dnf_constraints,
    unindex,
)

DUMMY = "<init>"


@dataclass
class ProductNode:
    index: int
    nfa_state: Property
    formula: Formula
    is_initial: bool = False
    is_final: bool = False


@dataclass
class ProductEdge:
    src: int
    dst: int
    transition: str  # a transition name, or DUMMY on edges out of the start
    symbol: frozenset


@dataclass
class ProductGraph:
    nodes: list[ProductNode] = field(default_factory=list)
    edges: list[ProductEdge] = field(default_factory=list)

    def path_to(self, index: int) -> list[ProductEdge]:
        """First-discovery path from the initial node."""
        first_in: dict[int, ProductEdge] = {}
        for e in self.edges:
            if e.dst not in first_in and e.dst != 0:
                first_in[e.dst] = e
        path: list[ProductEdge] = []
        cur = index
        while cur != 0:
            e = first_in[cur]
            path.append(e)
            cur = e.src
        path.reverse()
        return path

    def to_dot(self) -> str:
        lines = [
            "digraph product {",
            "  rankdir=TB;",
            "  node [shape=record, style=rounded];",
        ]
        for n in self.nodes:
            extra = ", peripheries=2" if n.is_final else ""
            label = f"{{{_esc(str(n.nfa_state))}|{_esc(str(n.formula))}}}"
            lines.append(f'  n{n.index} [label="{label}"{extra}];')
        lines.append('  init [shape=none, label=""];')
        lines.append("  init -> n0;")
        for e in self.edges:
            sym = "{" + ", ".join(sorted(str(c) for c in e.symbol)) + "}"
            lines.append(f'  n{e.src} -> n{e.dst} [label="{_esc(e.transition)}, {_esc(sym)}"];')
        lines.append("}")
        return "\n".join(lines)


def _esc(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("{", "\\{").replace("}", "\\}").replace("|", "\\|")


@dataclass
class Budget:
    max_nodes: int = 10000
    max_seconds: float = 60.0
    exhaustive: bool = False
    merge: bool = True


@dataclass
class Verdict:
    outcome: str  # "witnessFound" | "noWitness" | "budgetExceeded"
    witness: Optional[Run] = None
    accepting_path: Optional[list[ProductEdge]] = None
    nodes: int = 0
    edges: int = 0
    diagnostic: str = ""
    stats: dict = field(default_factory=dict)


def step_formula(
    phi: Formula,
    d: DMT,
    transition: Optional[Transition],
    symbol: Iterable[Constraint],
    gateway: Optional[SmtGateway],
) -> Formula:
    """The summary after one product edge: update by the transition (identity
    for the dummy edge) and conjoin the symbol's constraints, eliminating
    their bound variables by a cover."""
    from .system import (
        _freshen_constraint,
        _freshen_guard,
        extended_transition,
        guard_index_map,
        map_literal,
        state_index_map,
    )
    from .terms import Literal, Var, disj

    symbol = list(symbol)
    disjuncts: list[Formula] = []
    for k, pc in enumerate(to_dnf_constraints(phi)):
        _, fresh_pre, pre_flat = _freshen_constraint(pc, f"p{k}")
        cube: list[Literal] = []
        eliminate: list[Var] = list(fresh_pre)
        if transition is None:
            # dummy edge: the summary is unchanged, only the symbol is added
            cube.extend(pre_flat)
            target = None
        else:
            for l in pre_flat:
                l2 = map_literal(l, state_index_map(d, 0))
                if l2 is not None:
                    cube.append(l2)
            _, gfresh, gflat = _freshen_guard(extended_transition(d, transition), f"g{k}")
            for l in gflat:
                l2 = map_literal(l, guard_index_map(d, 0, 1))
                if l2 is not None:
                    cube.append(l2)
            eliminate += [v.with_ann(0) for v in d.variables] + list(gfresh)
            target = 1
        for j, c in enumerate(symbol):
            _, cfresh, cflat = _freshen_constraint(c, f"s{k}_{j}")
            for l in cflat:
                l2 = map_literal(l, state_index_map(d, target) if target is not None else {})
                if l2 is not None:
                    cube.append(l2)
            eliminate += list(cfresh)
        if target is None:
            keep = frozenset(d.variables)
        else:
            keep = frozenset(v.with_ann(target) for v in d.variables)
        task = qe.EliminationTask(tuple(eliminate), tuple(cube), keep)
        cover = qe.tame_cover(task, d.ctx)
        disjuncts.append(cover.formula if target is None else unindex(cover.formula, target))
    out = disj(disjuncts)
    return simplify_formula(out, d.ctx, gateway)


def instantiate(f: Formula) -> Formula:
    from .terms import instantiate_transition

    return instantiate_transition(f, 0, 1)


def expand(
    d: DMT,
    nfa: PropertyNFA,
    psi: Property,
    budget: Optional[Budget] = None,
    gateway: Optional[SmtGateway] = None,
) -> tuple[Verdict, ProductGraph]:
    """Breadth-first construction; stops at the first accepting node unless
    the budget asks for the full finite product."""
    budget = budget or Budget()
    own = gateway is None
    gw = gateway if gateway is not None else SmtGateway(d.ctx, SolverConfig.from_env())
    graph = ProductGraph()
    t0 = time.monotonic()
    try:
        phi0 = simplify_formula(unindex(initial_formula(d, 0), 0), d.ctx, gw)
        root = ProductNode(0, nfa.initial, phi0, is_initial=True, is_final=nfa.initial in nfa.finals)
        graph.nodes.append(root)
        by_state: dict = {}
        by_key: dict = {}
        queue = [0]
        accepting: Optional[int] = 0 if root.is_final else None

        def out_of_budget() -> Optional[str]:
            if len(graph.nodes) > budget.max_nodes:
                return f"node budget {budget.max_nodes} exceeded"
            if time.monotonic() - t0 > budget.max_seconds:
                return f"time budget {budget.max_seconds}s exceeded"
            return None

        def place(q2: Property, xi: Formula) -> int:
            key = (q2, canonical_key(xi))
            if key in by_key:
                return by_key[key]
            if budget.merge:
                for idx in by_state.get(q2, ()):  # merging never targets the root
                    if gw.check_equiv(graph.nodes[idx].formula, xi, phase="product-merge"):
                        by_key[key] = idx
                        return idx
            node = ProductNode(len(graph.nodes), q2, xi, is_final=q2 in nfa.finals)
            graph.nodes.append(node)
            by_state.setdefault(q2, []).append(node.index)
            by_key[key] = node.index
            queue.append(node.index)
            return node.index

        stop = False
        while queue and not stop:
            diag = out_of_budget()
            if diag:
                return Verdict("budgetExceeded", None, None, len(graph.nodes), len(graph.edges), diag), graph
            if accepting is not None and not budget.exhaustive:
                break
            src = queue.pop(0)
            node = graph.nodes[src]
            if node.is_initial:
                options: list = [(None, e) for e in nfa.edges_from(node.nfa_state)]
            else:
                options = [(t, e) for t in d.transitions for e in nfa.edges_from(node.nfa_state)]
            for t, (_, symbol, q2) in options:
                xi = step_formula(node.formula, d, t, sorted(symbol, key=str), gw)
                if xi == FALSE:
                    continue
                dst = place(q2, xi)
                graph.edges.append(ProductEdge(src, dst, t.name if t else DUMMY, symbol))
                if graph.nodes[dst].is_final and accepting is None:
                    accepting = dst
                    if not budget.exhaustive:
                        stop = True
                        break

        if accepting is None:
            return Verdict("noWitness", None, None, len(graph.nodes), len(graph.edges)), graph
        path = graph.path_to(accepting)
        witness = extract_witness(d, psi, path, gw)
        return Verdict("witnessFound", witness, path, len(graph.nodes), len(graph.edges)), graph
    except GatewayError as e:
        return Verdict("budgetExceeded", None, None, len(graph.nodes), len(graph.edges), str(e)), graph
    finally:
        if own:
            gw.close()


class SoundnessError(Exception):
    """A certified invariant failed; indicates an internal bug."""


def path_labels(path: Sequence[ProductEdge]) -> tuple[list[str], list[frozenset]]:
    sigma = [e.transition for e in path if e.transition != DUMMY]
    word = [e.symbol for e in path]
    return sigma, word


def extract_witness(d: DMT, psi: Property, path: Sequence[ProductEdge], gateway: SmtGateway) -> Run:
    """Instantiate the unfolding of an accepting path, decode the run, and
    certify it against the property semantics before returning."""
    sigma, word = path_labels(path)
    h = history(d, sigma, word)
    extras = []
    for c in property_constraints(psi):
        for i in range(h.length + 1):
            extras.append(rename_to_index(c.formula(), i))
    res = gateway.check_sat(h.formula, want_model=True, phase="witness", also_evaluate=extras)
    if res.verdict == "unsat":
        raise SoundnessError("accepting path has an unsatisfiable unfolding")
    if res.verdict == "unknown":
        raise GatewayError(f"witness extraction hit the solver budget: {res.diagnostic}")
    assert res.model is not None
    run = decode_run(d, res.model, sigma, h.length)
    validate_run(d, run)
    if not evaluate_property(run, psi):
        raise SoundnessError("decoded run does not satisfy the property")
    return run


def verify_path_invariant(
    d: DMT, nfa: PropertyNFA, graph: ProductGraph, node_index: int, gateway: SmtGateway
) -> bool:
    """The node summary is equivalent to the eliminated unfolding of its
    discovery path."""
    path = graph.path_to(node_index)
    if not path:
        return True
    sigma, word = path_labels(path)
    he = history_exists(d, sigma, word, gateway)
    return gateway.check_equiv(graph.nodes[node_index].formula, he, phase="path-invariant")
