"""Data-aware guarded transition systems: transitions with read/write
variable copies, frame-completed step formulas, trace unfoldings and their
quantifier-eliminated state summaries, concrete run semantics, and decoding
of runs out of solver models."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from . import qe
from .gateway import (
    InsufficientModel,
    ModelFragment,
    SmtGateway,
    TheoryContext,
    Value,
    evaluate,
)
from .ltlf import (
    AndP,
    Globally,
    Leaf,
    Next,
    OrP,
    Property,
    Until,
)
from .terms import (
    App,
    Const,
    Constraint,
    EqAtom,
    Exists,
    Formula,
    LinAtom,
    Lit,
    Literal,
    RatVal,
    Signature,
    Term,
    TRUE,
    Var,
    atom_vars,
    conj,
    free_variables,
    instantiate_transition,
    lin_atom,
    lit,
    rename_to_index,
    subst,
    to_dnf_constraints,
    unindex,
)


@dataclass(frozen=True)
class Transition:
    name: str
    guard: Constraint  # over read/write copies, possibly with bound variables

    def __str__(self) -> str:
        return f"{self.name}: {self.guard}"


@dataclass(frozen=True)
class DMT:
    """Variables with constant initializers plus named guarded transitions,
    interpreted over the given background theory."""

    signature: Signature
    variables: tuple[Var, ...]
    initial: tuple[tuple[Var, Union[Const, RatVal]], ...]
    transitions: tuple[Transition, ...]
    ctx: TheoryContext

    def __post_init__(self) -> None:
        if not self.variables:
            raise ValueError("the variable set must be nonempty")
        init_vars = [v for v, _ in self.initial]
        if set(init_vars) != set(self.variables) or len(init_vars) != len(self.variables):
            raise ValueError("initializer must cover every variable exactly once")
        for v, c in self.initial:
            if v.sort != c.sort:
                raise ValueError(f"initializer {c} has wrong sort for {v}")
        names = [t.name for t in self.transitions]
        if len(set(names)) != len(names):
            raise ValueError("transition names must be unique")
        allowed = {v.with_ann("r") for v in self.variables} | {v.with_ann("w") for v in self.variables}
        for t in self.transitions:
            fv = free_variables(t.guard.formula())
            if not fv <= allowed:
                raise ValueError(f"guard of {t.name} uses variables outside read/write copies: {fv - allowed}")

    def transition(self, name: str) -> Transition:
        for t in self.transitions:
            if t.name == name:
                return t
        raise KeyError(name)

    def initial_value(self, v: Var) -> Union[Const, RatVal]:
        for u, c in self.initial:
            if u == v:
                return c
        raise KeyError(v)


def write_set(t: Transition, variables: Sequence[Var]) -> list[Var]:
    """Variables whose write copy occurs in the guard."""
    fv = free_variables(t.guard.formula())
    return [v for v in variables if v.with_ann("w") in fv]


def extended_transition(d: DMT, t: Transition) -> Formula:
    """Guard plus frame equalities for all variables it does not write."""
    written = set(write_set(t, d.variables))
    frames: list[Formula] = []
    for v in d.variables:
        if v in written:
            continue
        frames.append(_equal_terms(v.with_ann("w"), v.with_ann("r")))
    return conj([t.guard.formula()] + frames)


def _equal_terms(a: Term, b: Term) -> Formula:
    if a.sort.is_rational:
        coeffs: dict[Term, Fraction] = {}
        const = Fraction(0)
        for t, s in ((a, 1), (b, -1)):
            if isinstance(t, RatVal):
                const += s * t.value
            else:
                coeffs[t] = coeffs.get(t, Fraction(0)) + s
        atom = lin_atom(coeffs, const, "eq")
        if isinstance(atom, bool):
            return TRUE
        return lit(atom)
    return lit(EqAtom(a, b).ordered())


def initial_formula(d: DMT, index: int = 0) -> Formula:
    """Conjunction pinning every indexed variable to its initializer."""
    parts = [_equal_terms(v.with_ann(index), c) for v, c in d.initial]
    return conj(parts)


# ---------------------------------------------------------------------------
# Trace unfoldings


@dataclass
class HistoryFormula:
    """Unfolding of an initializer, guard chain and constraint word over
    indexed variable copies 0..length."""

    formula: Formula
    length: int
    source_transitions: tuple[str, ...]
    source_word: tuple[frozenset, ...]
    cube: tuple[Literal, ...] = ()
    hidden: tuple[Var, ...] = ()  # freshened bound variables of guards/symbols


def _freshen_constraint(c: Constraint, tag: str) -> tuple[Formula, tuple[Var, ...], tuple[Literal, ...]]:
    mapping = {v: Var(f"{v.name}@{tag}", v.sort) for v in c.bound}
    lits = []
    for l in c.literals:
        g = subst(Lit(l), mapping)
        lits.append(g)
    fresh = tuple(mapping.values())
    flat: list[Literal] = []
    for g in lits:
        if isinstance(g, Lit):
            flat.append(g.lit)
        elif g == TRUE:
            continue
        else:
            raise AssertionError("constraint literal did not stay a literal")
    body = conj(lits)
    if fresh:
        return Exists(fresh, body), fresh, tuple(flat)
    return body, (), tuple(flat)


def map_literal(l: Literal, mapping: dict[Var, Term]) -> Optional[Literal]:
    """Substitute variables in one literal; None when it folds to true."""
    g = subst(Lit(l), mapping)
    if isinstance(g, Lit):
        return g.lit
    if g == TRUE:
        return None
    raise AssertionError(f"literal {l} folded to false under renaming")


def state_index_map(d: DMT, i: int) -> dict[Var, Term]:
    """Plain data variables to their indexed copies; hidden variables from
    freshened binders are left alone."""
    return {v: v.with_ann(i) for v in d.variables}


def guard_index_map(d: DMT, i: int, j: int) -> dict[Var, Term]:
    out: dict[Var, Term] = {}
    for v in d.variables:
        out[v.with_ann("r")] = v.with_ann(i)
        out[v.with_ann("w")] = v.with_ann(j)
    return out


def history(d: DMT, sigma: Sequence[str], word: Sequence[Iterable[Constraint]]) -> HistoryFormula:
    """The accumulated formula of a transition sequence and a constraint
    word one element longer."""
    word = [tuple(w) for w in word]
    if len(word) != len(sigma) + 1:
        raise ValueError(f"word length {len(word)} does not fit {len(sigma)} transitions")
    n = len(sigma)
    parts: list[Formula] = [initial_formula(d, 0)]
    cube: list[Literal] = []
    hidden: list[Var] = []
    for f in to_dnf_constraints(initial_formula(d, 0))[0].literals:
        cube.append(f)

    def add_symbol(i: int) -> None:
        for k, c in enumerate(word[i]):
            nested, fresh, flat = _freshen_constraint(c, f"w{i}_{k}")
            parts.append(subst(nested, state_index_map(d, i)))
            hidden.extend(fresh)
            for l in flat:
                l2 = map_literal(l, state_index_map(d, i))
                if l2 is not None:
                    cube.append(l2)

    add_symbol(0)
    for i, name in enumerate(sigma, start=1):
        t = d.transition(name)
        ext = extended_transition(d, t)
        nested, fresh, flat = _freshen_guard(ext, f"t{i}")
        parts.append(subst(nested, guard_index_map(d, i - 1, i)))
        hidden.extend(fresh)
        for l in flat:
            l2 = map_literal(l, guard_index_map(d, i - 1, i))
            if l2 is not None:
                cube.append(l2)
        add_symbol(i)
    return HistoryFormula(
        conj(parts), n, tuple(sigma), tuple(frozenset(w) for w in word), tuple(cube), tuple(hidden)
    )


def _freshen_guard(ext: Formula, tag: str) -> tuple[Formula, tuple[Var, ...], tuple[Literal, ...]]:
    """Extended guards are conjunctions of literals under optional binders;
    freshen the binders and flatten to a cube."""
    cubes = to_dnf_constraints(ext)
    if len(cubes) != 1:
        raise AssertionError("extended transition is not a single cube")
    c = cubes[0]
    nested, fresh, flat = _freshen_constraint(c, tag)
    return nested, fresh, flat


def history_exists(
    d: DMT,
    sigma: Sequence[str],
    word: Sequence[Iterable[Constraint]],
    gateway: Optional[SmtGateway] = None,
) -> Formula:
    """State summary: all indexed copies before the last are eliminated by a
    cover, and the final copy is renamed to the plain variables."""
    h = history(d, sigma, word)
    n = h.length
    eliminate = list(h.hidden)
    for i in range(n):
        for v in d.variables:
            eliminate.append(v.with_ann(i))
    keep = frozenset(v.with_ann(n) for v in d.variables)
    task = qe.EliminationTask(tuple(eliminate), h.cube, keep)
    cover = qe.tame_cover(task, d.ctx)
    return simplify_formula(unindex(cover.formula, n), d.ctx, gateway)


def update(
    phi: Formula,
    d: DMT,
    t: Transition,
    gateway: Optional[SmtGateway] = None,
    simplify: bool = True,
) -> Formula:
    """Strongest state summary after taking the transition from states
    described by phi."""
    disjuncts: list[Formula] = []
    ext = extended_transition(d, t)
    for k, pc in enumerate(to_dnf_constraints(phi)):
        _, fresh, flat = _freshen_constraint(pc, f"u{k}")
        cube: list[Literal] = []
        for l in flat:
            l2 = map_literal(l, state_index_map(d, 0))
            if l2 is not None:
                cube.append(l2)
        _, gfresh, gflat = _freshen_guard(ext, f"ug{k}")
        for l in gflat:
            l2 = map_literal(l, guard_index_map(d, 0, 1))
            if l2 is not None:
                cube.append(l2)
        eliminate = [v.with_ann(0) for v in d.variables] + list(fresh) + list(gfresh)
        keep = frozenset(v.with_ann(1) for v in d.variables)
        task = qe.EliminationTask(tuple(eliminate), tuple(cube), keep)
        cover = qe.tame_cover(task, d.ctx)
        disjuncts.append(unindex(cover.formula, 1))
    from .terms import disj

    out = disj(disjuncts)
    if simplify:
        out = simplify_formula(out, d.ctx, gateway)
    return out


def simplify_formula(f: Formula, ctx: TheoryContext, gateway: Optional[SmtGateway] = None) -> Formula:
    """Normalization used for display and node dedup: duplicate literals and
    constants fold in the constructors; unsatisfiable disjuncts, entailed
    literals and entailed disjuncts are dropped with solver help."""
    from .gateway import SolverConfig
    from .terms import FALSE, cube_formula, disj, neg

    own = gateway is None
    gw = gateway if gateway is not None else SmtGateway(ctx, SolverConfig(backend="inproc"))
    try:
        cubes = to_dnf_constraints(f)
        kept_cubes: list[Constraint] = []
        for c in cubes:
            if gw.check_sat(c.formula(), phase="simplify").verdict != "sat":
                continue
            kept_cubes.append(c)
        # drop literals entailed by the rest of their cube
        slim: list[Formula] = []
        for c in kept_cubes:
            lits = list(c.literals)
            i = 0
            while i < len(lits):
                rest = lits[:i] + lits[i + 1 :]
                if not rest:
                    break
                body = conj([Lit(l) for l in rest])
                probe = body & Lit(lits[i].negate())
                if c.bound:
                    probe = Exists(c.bound, probe)  # binder scope is safe: vars stay bound
                if gw.check_sat(probe, phase="simplify").verdict == "unsat":
                    lits = rest
                else:
                    i += 1
            body = conj([Lit(l) for l in lits])
            slim.append(Exists(c.bound, body) if c.bound else body)
        # drop disjuncts that imply another disjunct
        dropped = [False] * len(slim)
        for i, fi in enumerate(slim):
            if dropped[i]:
                continue
            for j, fj in enumerate(slim):
                if i == j or dropped[j]:
                    continue
                if isinstance(fi, Exists) or isinstance(fj, Exists):
                    continue
                if gw.check_sat(fi & neg(fj), phase="simplify").verdict == "unsat":
                    dropped[i] = True
                    break
        result = [f for i, f in enumerate(slim) if not dropped[i]]
        return disj(result) if result else FALSE
    finally:
        if own:
            gw.close()


# ---------------------------------------------------------------------------
# Runs


Assignment = dict[Var, Value]


@dataclass
class Run:
    """Concrete trace: assignments over the variables joined by transition
    names, certified by a model fragment."""

    assignments: list[Assignment]
    transitions: list[str]
    model: ModelFragment

    def __post_init__(self) -> None:
        if len(self.assignments) != len(self.transitions) + 1:
            raise ValueError("a run has one more assignment than transitions")

    @property
    def length(self) -> int:
        return len(self.transitions)

    def display_value(self, v: Value) -> str:
        """Prefer a constant name over an opaque element label."""
        names = [k for k, val in self.model.constant_values.items() if val == v and not k.startswith("@")]
        if names:
            return sorted(names)[0]
        return str(v)

    def pretty(self) -> str:
        parts = []
        for i, a in enumerate(self.assignments):
            state = "{" + ", ".join(f"{v.name}={self.display_value(a[v])}" for v in sorted(a, key=str)) + "}"
            parts.append(state)
            if i < len(self.transitions):
                parts.append(f"--{self.transitions[i]}-->")
        return " ".join(parts)


def validate_run(d: DMT, run: Run) -> None:
    """Assert initializer, guard and frame conditions step by step."""
    frag = run.model
    for v, c in d.initial:
        init_val = evaluate_term_value(frag, c)
        if run.assignments[0][v] != init_val:
            raise AssertionError(f"run does not start at the initializer: {v}")
    for i, name in enumerate(run.transitions):
        t = d.transition(name)
        env: dict[Var, Value] = {}
        for v in d.variables:
            env[v.with_ann("r")] = run.assignments[i][v]
            env[v.with_ann("w")] = run.assignments[i + 1][v]
        if not evaluate(frag, extended_transition(d, t), env):
            raise AssertionError(f"step {i + 1} violates transition {name}")


def evaluate_term_value(frag: ModelFragment, t: Term) -> Value:
    from .gateway import eval_term

    return eval_term(frag, t, {})


def decode_run(d: DMT, model: ModelFragment, sigma: Sequence[str], n: Optional[int] = None) -> Run:
    """Read the indexed variable values out of a model of an unfolding."""
    length = len(sigma) if n is None else n
    assignments: list[Assignment] = []
    for i in range(length + 1):
        a: Assignment = {}
        for v in d.variables:
            vi = v.with_ann(i)
            if vi not in model.variable_values:
                raise InsufficientModel(f"model does not assign {vi}")
            a[v] = model.variable_values[vi]
        assignments.append(a)
    run = Run(assignments, list(sigma), model)
    for i, name in enumerate(run.transitions):
        t = d.transition(name)
        written = set(write_set(t, d.variables))
        for v in d.variables:
            if v not in written and run.assignments[i][v] != run.assignments[i + 1][v]:
                raise AssertionError(f"frame violation: {v} changed across {name}")
    return run


# ---------------------------------------------------------------------------
# Property evaluation on concrete runs


def evaluate_property(run: Run, psi: Property) -> bool:
    """Finite-trace semantics, evaluated directly on the run."""
    n = run.length
    memo: dict[tuple[int, int], bool] = {}

    def ev(p: Property, i: int) -> bool:
        key = (id(p), i)
        if key in memo:
            return memo[key]
        out = _ev(p, i)
        memo[key] = out
        return out

    def _ev(p: Property, i: int) -> bool:
        if isinstance(p, Leaf):
            env = dict(run.assignments[i])
            return evaluate(run.model, p.constraint, env)
        if isinstance(p, AndP):
            return all(ev(a, i) for a in p.args)
        if isinstance(p, OrP):
            return any(ev(a, i) for a in p.args)
        if isinstance(p, Next):
            return i < n and ev(p.arg, i + 1)
        if isinstance(p, Globally):
            return ev(p.arg, i) and (i == n or ev(p, i + 1))
        if isinstance(p, Until):
            return ev(p.rhs, i) or (i < n and ev(p.lhs, i) and ev(p, i + 1))
        raise TypeError(f"cannot evaluate property {p!r}")

    return ev(psi, 0)
