"""Decision procedure for quantifier-free formulas over uninterpreted
functions and relations combined with linear rational arithmetic.

The engine is the classic convex combination: congruence closure on the
uninterpreted side, Fourier-Motzkin feasibility on the arithmetic side, and
propagation of entailed equalities between the two until a fixpoint.  It
backs the bundled SMT-LIB server process and can also be called in-process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Optional, Union

from .terms import (
    App,
    Const,
    ConstDecl,
    EqAtom,
    LinAtom,
    Literal,
    RatVal,
    RelAtom,
    Term,
    Var,
    lin_atom,
)

Key = Hashable
Value = Union[str, Fraction]


# ---------------------------------------------------------------------------
# Linear systems and Fourier-Motzkin


@dataclass(frozen=True)
class Row:
    """sum(coeffs) + const  op  0 with op one of eq, le, lt."""

    coeffs: tuple[tuple[Key, Fraction], ...]
    const: Fraction
    op: str

    def coeff_map(self) -> dict[Key, Fraction]:
        return dict(self.coeffs)

    def is_ground(self) -> bool:
        return not self.coeffs

    def ground_holds(self) -> bool:
        if self.op == "eq":
            return self.const == 0
        if self.op == "le":
            return self.const <= 0
        return self.const < 0


def make_row(coeffs: dict[Key, Fraction], const: Fraction, op: str) -> Row:
    items = tuple(sorted(((k, c) for k, c in coeffs.items() if c != 0), key=lambda p: repr(p[0])))
    return Row(items, Fraction(const), op)


def row_subst(r: Row, var: Key, expr: tuple[dict[Key, Fraction], Fraction]) -> Row:
    """Replace var by a linear expression (coeffs, const)."""
    cm = r.coeff_map()
    c = cm.pop(var, Fraction(0))
    if c == 0:
        return r
    ecoeffs, econst = expr
    for k, ec in ecoeffs.items():
        cm[k] = cm.get(k, Fraction(0)) + c * ec
    return make_row(cm, r.const + c * econst, r.op)


def solve_for(r: Row, var: Key) -> tuple[dict[Key, Fraction], Fraction]:
    """From an eq row, express var as a linear expression of the rest."""
    cm = r.coeff_map()
    c = cm.pop(var)
    return ({k: -v / c for k, v in cm.items()}, -r.const / c)


@dataclass
class ElimStep:
    kind: str  # "eq" | "fm"
    var: Key
    expr: Optional[tuple[dict[Key, Fraction], Fraction]] = None
    lowers: list[tuple[dict[Key, Fraction], Fraction, bool]] = field(default_factory=list)
    uppers: list[tuple[dict[Key, Fraction], Fraction, bool]] = field(default_factory=list)


def _prune_ground(rows: list[Row]) -> Optional[list[Row]]:
    out = []
    for r in rows:
        if r.is_ground():
            if not r.ground_holds():
                return None
        else:
            out.append(r)
    return out


def fm_eliminate_rows(
    rows: list[Row], elim: Iterable[Key], record: Optional[list[ElimStep]] = None
) -> Optional[list[Row]]:
    """Project rows onto the non-eliminated variables.

    Returns None as soon as a ground row is violated, otherwise the projected
    rows.  When `record` is given, elimination steps are appended so that a
    satisfying assignment can later be reconstructed by back-substitution.
    """
    todo = list(dict.fromkeys(elim))
    rows_opt = _prune_ground(list(rows))
    if rows_opt is None:
        return None
    rows = rows_opt

    # Gaussian phase: use equalities to remove variables outright.
    changed = True
    while changed:
        changed = False
        for r in rows:
            if r.op != "eq":
                continue
            pivot = next((k for k, _ in r.coeffs if k in todo), None)
            if pivot is None:
                continue
            expr = solve_for(r, pivot)
            rows_opt = _prune_ground([row_subst(o, pivot, expr) for o in rows if o is not r])
            if rows_opt is None:
                return None
            rows = rows_opt
            todo.remove(pivot)
            if record is not None:
                record.append(ElimStep("eq", pivot, expr=expr))
            changed = True
            break

    # Fourier-Motzkin phase for the remaining variables.  No equality row
    # mentions a todo variable at this point.
    while todo:
        counts = {k: sum(1 for r in rows for kk, _ in r.coeffs if kk == k) for k in todo}
        var = min(todo, key=lambda k: (counts[k], repr(k)))
        todo.remove(var)
        lowers: list[tuple[Row, Fraction]] = []
        uppers: list[tuple[Row, Fraction]] = []
        rest: list[Row] = []
        for r in rows:
            c = r.coeff_map().get(var, Fraction(0))
            if c == 0:
                rest.append(r)
            elif c > 0:
                uppers.append((r, c))
            else:
                lowers.append((r, c))
        if record is not None:
            step = ElimStep("fm", var)
            for r, c in lowers:  # c < 0, so var >= -rest/c
                cm = {k: -v / c for k, v in r.coeffs if k != var}
                step.lowers.append((cm, -r.const / c, r.op == "lt"))
            for r, c in uppers:  # c > 0, so var <= -rest/c
                cm = {k: -v / c for k, v in r.coeffs if k != var}
                step.uppers.append((cm, -r.const / c, r.op == "lt"))
            record.append(step)
        new_rows = rest
        for rl, cl in lowers:
            for ru, cu in uppers:
                op = "lt" if (rl.op == "lt" or ru.op == "lt") else "le"
                cm: dict[Key, Fraction] = {}
                for k, v in rl.coeffs:
                    if k != var:
                        cm[k] = cm.get(k, Fraction(0)) + v / (-cl)
                for k, v in ru.coeffs:
                    if k != var:
                        cm[k] = cm.get(k, Fraction(0)) + v / cu
                const = rl.const / (-cl) + ru.const / cu
                new_rows.append(make_row(cm, const, op))
        rows_opt = _prune_ground(new_rows)
        if rows_opt is None:
            return None
        rows = rows_opt

    return rows


def fm_feasible(rows: list[Row]) -> bool:
    keys = sorted({k for r in rows for k, _ in r.coeffs}, key=repr)
    return fm_eliminate_rows(rows, keys) is not None


def _eval_expr(expr: tuple[dict[Key, Fraction], Fraction], assign: dict[Key, Fraction]) -> Fraction:
    coeffs, const = expr
    return sum((c * assign[k] for k, c in coeffs.items()), const)


def fm_solve(rows: list[Row]) -> Optional[dict[Key, Fraction]]:
    """A satisfying rational assignment for feasible rows, None otherwise."""
    keys = sorted({k for r in rows for k, _ in r.coeffs}, key=repr)
    record: list[ElimStep] = []
    if fm_eliminate_rows(rows, keys, record) is None:
        return None
    assign: dict[Key, Fraction] = {}
    for step in reversed(record):
        if step.kind == "eq":
            assert step.expr is not None
            assign[step.var] = _eval_expr(step.expr, assign)
            continue
        lo: Optional[Fraction] = None
        lo_strict = False
        for ec, ek, strict in step.lowers:
            v = _eval_expr((ec, ek), assign)
            if lo is None or v > lo or (v == lo and strict):
                lo, lo_strict = v, strict
        hi: Optional[Fraction] = None
        hi_strict = False
        for ec, ek, strict in step.uppers:
            v = _eval_expr((ec, ek), assign)
            if hi is None or v < hi or (v == hi and strict):
                hi, hi_strict = v, strict
        if lo is None and hi is None:
            assign[step.var] = Fraction(0)
        elif lo is None:
            assert hi is not None
            assign[step.var] = hi - 1 if hi_strict else hi
        elif hi is None:
            assign[step.var] = lo + 1 if lo_strict else lo
        elif lo == hi:
            assert not (lo_strict or hi_strict)
            assign[step.var] = lo
        else:
            assign[step.var] = (lo + hi) / 2
    return assign


# ---------------------------------------------------------------------------
# Congruence closure

TRUE_KEY = ("bool", True)
FALSE_KEY = ("bool", False)


class CongruenceClosure:
    """Union-find over a term DAG with congruence propagation.

    Relation atoms are internalized as boolean-valued application nodes and
    asserted by merging them with the designated true/false nodes.
    """

    def __init__(self) -> None:
        self.key_of_node: list = []
        self.node_of_key: dict = {}
        self.parent: list[int] = []
        self.members: list[list[int]] = []
        self.node_sort: list = []
        self.term_of_node: dict[int, Term] = {}
        self.apps: dict[int, tuple[str, tuple[int, ...]]] = {}
        self.use: dict[int, list[int]] = {}
        self.sig: dict[tuple, int] = {}
        self.numeral: dict[int, Fraction] = {}
        self.pending: list[tuple[int, int]] = []
        self.true_n = self._new_node(TRUE_KEY, "bool")
        self.false_n = self._new_node(FALSE_KEY, "bool")

    def _new_node(self, key, sort) -> int:
        n = len(self.parent)
        self.node_of_key[key] = n
        self.key_of_node.append(key)
        self.parent.append(n)
        self.members.append([n])
        self.node_sort.append(sort)
        return n

    def find(self, n: int) -> int:
        while self.parent[n] != n:
            self.parent[n] = self.parent[self.parent[n]]
            n = self.parent[n]
        return n

    def same(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)

    def add_term(self, t: Term) -> int:
        if isinstance(t, Var):
            key = ("var", t.name, str(t.ann), t.sort.name)
        elif isinstance(t, Const):
            key = ("const", t.decl.name)
        elif isinstance(t, RatVal):
            key = ("rat", t.value)
        else:
            children = tuple(self.add_term(a) for a in t.args)
            return self._add_app("f:" + t.func.name, children, t.func.res_sort, t)
        if key in self.node_of_key:
            return self.node_of_key[key]
        n = self._new_node(key, t.sort)
        self.term_of_node[n] = t
        if isinstance(t, RatVal):
            self.numeral[n] = t.value
        return n

    def add_rel(self, a: RelAtom) -> int:
        children = tuple(self.add_term(t) for t in a.args)
        return self._add_app("r:" + a.rel.name, children, "bool", None)

    def _add_app(self, op: str, children: tuple[int, ...], sort, term: Optional[Term]) -> int:
        key = ("app", op, children)
        if key in self.node_of_key:
            return self.node_of_key[key]
        n = self._new_node(key, sort)
        if term is not None:
            self.term_of_node[n] = term
        self.apps[n] = (op, children)
        for c in children:
            self.use.setdefault(self.find(c), []).append(n)
        sig = (op, tuple(self.find(c) for c in children))
        if sig in self.sig:
            self.pending.append((n, self.sig[sig]))
        else:
            self.sig[sig] = n
        return n

    def merge(self, a: int, b: int) -> None:
        self.pending.append((a, b))

    def propagate(self) -> bool:
        """Process pending merges; False on a hard conflict (true = false, or
        two distinct numerals identified)."""
        while self.pending:
            a, b = self.pending.pop()
            ra, rb = self.find(a), self.find(b)
            if ra == rb:
                continue
            if len(self.members[ra]) < len(self.members[rb]):
                ra, rb = rb, ra
            na, nb = self.numeral.get(ra), self.numeral.get(rb)
            if na is not None and nb is not None and na != nb:
                return False
            if nb is not None:
                self.numeral[ra] = nb
            self.parent[rb] = ra
            self.members[ra].extend(self.members[rb])
            for app_n in self.use.pop(rb, []):
                op, children = self.apps[app_n]
                sig = (op, tuple(self.find(c) for c in children))
                prev = self.sig.get(sig)
                if prev is None:
                    self.sig[sig] = app_n
                elif not self.same(prev, app_n):
                    self.pending.append((prev, app_n))
                self.use.setdefault(ra, []).append(app_n)
        return not self.same(self.true_n, self.false_n)

    def roots(self) -> list[int]:
        return [n for n in range(len(self.parent)) if self.find(n) == n]


# ---------------------------------------------------------------------------
# Combined solver


class TheoryAxioms:
    """Ground background facts: positive atoms, function-value equations and
    groups of pairwise distinct constants."""

    def __init__(
        self,
        facts: Iterable[Literal] = (),
        distinct: Iterable[tuple[ConstDecl, ...]] = (),
    ) -> None:
        self.facts = tuple(facts)
        self.distinct = tuple(tuple(g) for g in distinct)


@dataclass
class InternalModel:
    """Concrete values for every internalized term, one per class."""

    term_value: dict[Term, Value]
    relations: dict[str, set[tuple[Value, ...]]]
    functions: dict[str, dict[tuple[Value, ...], Value]]

    def eval_term(self, t: Term) -> Value:
        if t in self.term_value:
            return self.term_value[t]
        if isinstance(t, RatVal):
            return t.value
        if isinstance(t, App):
            args = tuple(self.eval_term(a) for a in t.args)
            table = self.functions.get(t.func.name, {})
            if args in table:
                return table[args]
            raise KeyError(f"no interpretation for {t}")
        raise KeyError(f"no value for term {t}")


class CubeSolver:
    """Satisfiability of conjunctions of literals modulo the axioms."""

    def __init__(self, axioms: TheoryAxioms):
        self.axioms = axioms

    def solve(
        self, literals: list[Literal], want_model: bool = False, extra_terms: Iterable[Term] = ()
    ) -> Optional[InternalModel]:
        """A model when satisfiable (a sentinel when want_model is False),
        None when unsatisfiable."""
        for i, l in enumerate(literals):
            if isinstance(l.atom, LinAtom) and l.atom.op == "ne":
                base = literals[:i] + literals[i + 1 :]
                for op in ("lt", "gt"):
                    alt = _lin_literal(dict(l.atom.coeffs), l.atom.const, op)
                    if alt is True:
                        res: Optional[InternalModel] = self.solve(base, want_model, extra_terms)
                    elif alt is False:
                        res = None
                    else:
                        res = self.solve(base + [alt], want_model, extra_terms)
                    if res is not None:
                        return res
                return None
        return self._solve_convex(literals, want_model, extra_terms)

    def _solve_convex(
        self, literals: list[Literal], want_model: bool, extra_terms: Iterable[Term]
    ) -> Optional[InternalModel]:
        cc = CongruenceClosure()
        diseqs: list[tuple[int, int]] = []
        lin: list[LinAtom] = []

        def assert_lit(l: Literal) -> None:
            a = l.atom
            if isinstance(a, LinAtom):
                assert l.positive and a.op != "ne"
                for t in a.terms():
                    cc.add_term(t)
                if a.op == "eq" and len(a.coeffs) == 2 and a.const == 0:
                    (t1, c1), (t2, c2) = a.coeffs
                    if c1 == -c2:
                        cc.merge(cc.add_term(t1), cc.add_term(t2))
                lin.append(a)
            elif isinstance(a, EqAtom):
                n1, n2 = cc.add_term(a.lhs), cc.add_term(a.rhs)
                if l.positive:
                    cc.merge(n1, n2)
                else:
                    diseqs.append((n1, n2))
            else:
                n = cc.add_rel(a)
                cc.merge(n, cc.true_n if l.positive else cc.false_n)

        for l in self.axioms.facts:
            assert_lit(l)
        for group in self.axioms.distinct:
            nodes = [cc.add_term(Const(d)) for d in group]
            for i in range(len(nodes)):
                for j in range(i + 1, len(nodes)):
                    diseqs.append((nodes[i], nodes[j]))
        for l in literals:
            assert_lit(l)
        for t in extra_terms:
            cc.add_term(t)

        rows: list[Row] = []
        for _ in range(10000):
            if not cc.propagate():
                return None
            for n1, n2 in diseqs:
                if cc.same(n1, n2):
                    return None
            rows = self._lin_rows(cc, lin)
            solution = fm_solve(rows)
            if solution is None:
                return None
            if not self._propagate_equalities(cc, rows, solution):
                break
        else:  # pragma: no cover
            raise RuntimeError("combination loop did not stabilize")

        if not want_model:
            return InternalModel({}, {}, {})
        return self._build_model(cc, lin, diseqs)

    # -- arithmetic side ------------------------------------------------------

    def _lin_rows(self, cc: CongruenceClosure, lin: list[LinAtom]) -> list[Row]:
        rows = []
        for a in lin:
            coeffs: dict[Key, Fraction] = {}
            const = a.const
            for t, c in a.coeffs:
                root = cc.find(cc.add_term(t))
                if root in cc.numeral:
                    const += c * cc.numeral[root]
                else:
                    k = ("lp", root)
                    coeffs[k] = coeffs.get(k, Fraction(0)) + c
            rows.append(make_row(coeffs, const, a.op))
        return rows

    def _shared_rational_roots(self, cc: CongruenceClosure) -> list[int]:
        """Rational classes appearing as relation or function arguments;
        equalities among these must flow back into the congruence closure."""
        out: list[int] = []
        for _, (_, children) in sorted(cc.apps.items()):
            for c in children:
                sort = cc.node_sort[c]
                if getattr(sort, "is_rational", False):
                    r = cc.find(c)
                    if r not in out:
                        out.append(r)
        return out

    def _root_value(
        self, cc: CongruenceClosure, root: int, solution: dict[Key, Fraction]
    ) -> Optional[Fraction]:
        if root in cc.numeral:
            return cc.numeral[root]
        return solution.get(("lp", root))

    def _diff_row(self, cc: CongruenceClosure, u: int, v: int, sign: int) -> Row:
        coeffs: dict[Key, Fraction] = {}
        const = Fraction(0)
        for root, s in ((u, sign), (v, -sign)):
            if root in cc.numeral:
                const += s * cc.numeral[root]
            else:
                k = ("lp", root)
                coeffs[k] = coeffs.get(k, Fraction(0)) + s
        return make_row(coeffs, const, "lt")

    def _propagate_equalities(
        self, cc: CongruenceClosure, rows: list[Row], solution: dict[Key, Fraction]
    ) -> bool:
        shared = self._shared_rational_roots(cc)
        merged = False
        for i in range(len(shared)):
            for j in range(i + 1, len(shared)):
                u, v = cc.find(shared[i]), cc.find(shared[j])
                if u == v:
                    continue
                vu, vv = self._root_value(cc, u, solution), self._root_value(cc, v, solution)
                if vu is None or vv is None or vu != vv:
                    continue
                if not fm_feasible(rows + [self._diff_row(cc, u, v, 1)]) and not fm_feasible(
                    rows + [self._diff_row(cc, u, v, -1)]
                ):
                    cc.merge(u, v)
                    merged = True
        return merged

    # -- model construction ----------------------------------------------------

    def _build_model(
        self, cc: CongruenceClosure, lin: list[LinAtom], diseqs: list[tuple[int, int]]
    ) -> InternalModel:
        rows = self._lin_rows(cc, lin)
        extra: list[Row] = []
        solution: dict[Key, Fraction] = {}
        for _ in range(1000):
            solution_opt = fm_solve(rows + extra)
            if solution_opt is None:
                raise RuntimeError("rational model construction diverged")
            solution = solution_opt
            shared = self._shared_rational_roots(cc)
            clash = None
            for i in range(len(shared)):
                for j in range(i + 1, len(shared)):
                    u, v = cc.find(shared[i]), cc.find(shared[j])
                    if u == v:
                        continue
                    vu = self._root_value(cc, u, solution)
                    vv = self._root_value(cc, v, solution)
                    if vu is not None and vu == vv:
                        clash = (u, v)
                        break
                if clash:
                    break
            if clash is None:
                break
            u, v = clash
            for sign in (1, -1):
                cand = self._diff_row(cc, u, v, sign)
                if fm_feasible(rows + extra + [cand]):
                    extra.append(cand)
                    break
            else:
                # neither order is feasible: the pair is entailed equal
                cc.merge(u, v)
                if not cc.propagate():
                    raise RuntimeError("late conflict during model construction")
                for n1, n2 in diseqs:
                    if cc.same(n1, n2):
                        raise RuntimeError("late conflict during model construction")
                rows = self._lin_rows(cc, lin)
        else:  # pragma: no cover
            raise RuntimeError("distinctness search did not converge")

        label_count: dict[str, int] = {}
        root_val: dict[int, Value] = {}
        used_rat = set(cc.numeral.values()) | set(solution.values())
        fresh_rat = Fraction(7_000_003)
        for n in range(len(cc.parent)):
            r = cc.find(n)
            if r in root_val:
                continue
            sort = cc.node_sort[r]
            if sort == "bool":
                root_val[r] = "true" if cc.same(r, cc.true_n) else "false"
            elif getattr(sort, "is_rational", False):
                v = self._root_value(cc, r, solution)
                if v is None:
                    while fresh_rat in used_rat:
                        fresh_rat += 1
                    v = fresh_rat
                    used_rat.add(v)
                root_val[r] = v
            else:
                k = label_count.get(sort.name, 0)
                label_count[sort.name] = k + 1
                root_val[r] = f"@{sort.name}_{k}"

        term_value = {t: root_val[cc.find(n)] for n, t in cc.term_of_node.items()}
        relations: dict[str, set[tuple[Value, ...]]] = {}
        functions: dict[str, dict[tuple[Value, ...], Value]] = {}
        for node, (op, children) in sorted(cc.apps.items()):
            vals = tuple(root_val[cc.find(c)] for c in children)
            if op.startswith("r:"):
                relations.setdefault(op[2:], set())
                if cc.same(node, cc.true_n):
                    relations[op[2:]].add(vals)
            else:
                functions.setdefault(op[2:], {})[vals] = root_val[cc.find(node)]
        return InternalModel(term_value, relations, functions)


def _lin_literal(coeffs: dict[Term, Fraction], const: Fraction, op: str) -> Union[Literal, bool]:
    atom = lin_atom(coeffs, const, op)
    if isinstance(atom, bool):
        return atom
    return Literal(atom)


# ---------------------------------------------------------------------------
# Formula-level satisfiability: skolemization plus branching over disjuncts


def skolemize(f, fresh: Iterable[int]) -> tuple:
    """Replace every existential binder by fresh constants.

    Valid in negation normal form, where all binders occur positively.
    Returns the quantifier-free formula and the introduced constants keyed by
    the (occurrence-specific) bound variable they replaced.
    """
    from .terms import AndF, Exists, FalseF, Formula, Lit as LitF, OrF, TrueF, subst

    produced: dict[Var, Const] = {}

    def walk(g):
        if isinstance(g, (TrueF, FalseF, LitF)):
            return g
        if isinstance(g, AndF):
            return AndF(tuple(walk(a) for a in g.args))
        if isinstance(g, OrF):
            return OrF(tuple(walk(a) for a in g.args))
        if isinstance(g, Exists):
            mapping = {}
            for v in g.bound:
                decl = ConstDecl(f"@sk_{next(counter)}_{v.name}", v.sort)
                produced[v] = decl
                mapping[v] = Const(decl)
            return walk(subst(g.matrix, mapping))
        raise TypeError(f"cannot skolemize {type(g).__name__}")

    counter = iter(fresh)
    return walk(f), produced


def formula_terms(f) -> list[Term]:
    """Every term occurring in the formula, subterm-closed, in first-seen
    order."""
    from .terms import AndF, Exists, FalseF, Lit as LitF, NotF, OrF, TrueF

    out: list[Term] = []
    seen: set[Term] = set()

    def add_term(t: Term) -> None:
        if t in seen:
            return
        seen.add(t)
        if isinstance(t, App):
            for a in t.args:
                add_term(a)
        out.append(t)

    def walk(g) -> None:
        if isinstance(g, (TrueF, FalseF)):
            return
        if isinstance(g, LitF):
            a = g.lit.atom
            if isinstance(a, RelAtom):
                for t in a.args:
                    add_term(t)
            elif isinstance(a, EqAtom):
                add_term(a.lhs)
                add_term(a.rhs)
            else:
                for t in a.terms():
                    add_term(t)
            return
        if isinstance(g, (AndF, OrF)):
            for x in g.args:
                walk(x)
            return
        if isinstance(g, NotF):
            walk(g.arg)
            return
        if isinstance(g, Exists):
            walk(g.matrix)
            return
        raise TypeError(f"no terms for {type(g).__name__}")

    walk(f)
    return out


def formula_rel_atoms(f) -> list[RelAtom]:
    from .terms import AndF, Exists, Lit as LitF, NotF, OrF

    out: list[RelAtom] = []

    def walk(g) -> None:
        if isinstance(g, LitF):
            if isinstance(g.lit.atom, RelAtom) and g.lit.atom not in out:
                out.append(g.lit.atom)
        elif isinstance(g, (AndF, OrF)):
            for x in g.args:
                walk(x)
        elif isinstance(g, NotF):
            walk(g.arg)
        elif isinstance(g, Exists):
            walk(g.matrix)

    walk(f)
    return out


class FormulaSolver:
    """Satisfiability search over quantifier-free formulas: depth-first
    selection of disjuncts with theory checks pruning dead branches."""

    def __init__(self, axioms: TheoryAxioms):
        self.cubes = CubeSolver(axioms)

    def check(self, f, want_model: bool = False, extra_terms: Iterable[Term] = ()) -> Optional[InternalModel]:
        from .terms import nnf

        g = nnf(f)
        g, _ = skolemize(g, iter(range(10**9)))
        extras = list(extra_terms)
        return self._search([], [g], want_model, extras, checked=0)

    def _search(
        self,
        cube: list[Literal],
        todo: list,
        want_model: bool,
        extras: list[Term],
        checked: int,
    ) -> Optional[InternalModel]:
        from .terms import AndF, FalseF, Lit as LitF, OrF, TrueF

        cube = list(cube)
        todo = list(todo)
        while todo:
            g = todo.pop()
            if isinstance(g, TrueF):
                continue
            if isinstance(g, FalseF):
                return None
            if isinstance(g, LitF):
                neg = g.lit.negate()
                if any(l == neg for l in cube):
                    return None
                if g.lit not in cube:
                    cube.append(g.lit)
                continue
            if isinstance(g, AndF):
                todo.extend(reversed(g.args))
                continue
            if isinstance(g, OrF):
                if len(cube) > checked and self.cubes.solve(cube) is None:
                    return None
                for arg in g.args:
                    res = self._search(cube, todo + [arg], want_model, extras, len(cube))
                    if res is not None:
                        return res
                return None
            raise TypeError(f"unexpected {type(g).__name__} in search")
        return self.cubes.solve(cube, want_model, extras)
