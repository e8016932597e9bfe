"""Quantifier elimination and covers.

Three engines:
  * fm_eliminate: exact Fourier-Motzkin projection for linear rational
    arithmetic (disequalities split into strict disjuncts first),
  * euf_cover: covers for equality with unary uninterpreted functions and
    arbitrary relations, computed on the congruence closure of the matrix,
  * tame_cover: their combination for tame signatures, where the rational
    sorts are leaves of the sort graph.

A cover is characterized operationally: conjoining any residue constraint
over the kept variables to the cover is equisatisfiable with conjoining it
to the original existential formula.  cover_property_test checks exactly
that on random residues.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from . import theory
from .gateway import SmtGateway, TheoryContext
from .terms import (
    App,
    Const,
    EqAtom,
    FALSE,
    Formula,
    LinAtom,
    Lit,
    Literal,
    RatVal,
    RelAtom,
    Term,
    TRUE,
    Var,
    atom_vars,
    conj,
    cube_formula,
    disj,
    lin_atom,
    lit,
    term_key,
    to_dnf_constraints,
)


class UnsupportedAtom(Exception):
    pass


class UnsupportedSignature(Exception):
    pass


@dataclass(frozen=True)
class EliminationTask:
    eliminate: tuple[Var, ...]
    matrix: tuple[Literal, ...]
    keep: frozenset[Var]

    def __post_init__(self) -> None:
        if set(self.eliminate) & self.keep:
            raise ValueError("eliminate and keep overlap")
        free = set()
        for l in self.matrix:
            free |= atom_vars(l.atom)
        stray = free - set(self.eliminate) - self.keep
        if stray:
            raise ValueError(f"matrix variables outside eliminate+keep: {stray}")


@dataclass
class CoverResult:
    formula: Formula
    residual_terms: tuple[Term, ...] = ()


# ---------------------------------------------------------------------------
# Fourier-Motzkin for pure linear rational arithmetic


def _lin_branches(literals: Iterable[Literal]) -> list[list[LinAtom]]:
    """Split every rational disequality into < and > alternatives."""
    branches: list[list[LinAtom]] = [[]]
    for l in literals:
        a = l.atom
        if not isinstance(a, LinAtom):
            raise UnsupportedAtom(f"non-arithmetic atom {a}")
        if a.op == "ne":
            lt = lin_atom(dict(a.coeffs), a.const, "lt")
            gt = lin_atom(dict(a.coeffs), a.const, "gt")
            new = []
            for br in branches:
                for alt in (lt, gt):
                    if alt is True:
                        new.append(list(br))
                    elif alt is not False:
                        new.append(br + [alt])
            branches = new
        else:
            for br in branches:
                br.append(a)
    return branches


def _atom_rows(atoms: Iterable[LinAtom]) -> list[theory.Row]:
    rows = []
    for a in atoms:
        for t in a.terms():
            if not isinstance(t, (Var, Const)):
                raise UnsupportedAtom(f"non-variable rational term {t} in pure arithmetic task")
        rows.append(theory.make_row({t: c for t, c in a.coeffs}, a.const, a.op))
    return rows


def _row_to_formula(r: theory.Row) -> Formula:
    atom = lin_atom({t: c for t, c in r.coeffs}, r.const, r.op)
    if isinstance(atom, bool):
        return TRUE if atom else FALSE
    return lit(atom)


def fm_eliminate(task: EliminationTask) -> Formula:
    """Exact projection: the result is LRA-equivalent to the existential
    closure of the matrix over the eliminated variables."""
    for v in task.eliminate:
        if not v.sort.is_rational:
            raise UnsupportedAtom(f"eliminated variable {v} is not rational")
    disjuncts = []
    for branch in _lin_branches(task.matrix):
        rows = _atom_rows(branch)
        projected = theory.fm_eliminate_rows(rows, list(task.eliminate))
        if projected is None:
            continue
        parts = [_row_to_formula(r) for r in projected]
        disjuncts.append(conj(parts))
    return disj(disjuncts)


# ---------------------------------------------------------------------------
# Covers on the congruence closure


class _CoverEngine:
    """One convex branch (no rational disequalities) of a cover task."""

    def __init__(self, euf_literals: list[Literal], lin_atoms: list[LinAtom], task: EliminationTask):
        self.task = task
        self.cc = theory.CongruenceClosure()
        self.diseqs: list[tuple[int, int]] = []
        self.pos_rels: list[int] = []
        self.neg_rels: list[int] = []
        self.lin_atoms = lin_atoms
        self.euf_literals = euf_literals
        for l in euf_literals:
            a = l.atom
            if isinstance(a, EqAtom):
                n1, n2 = self.cc.add_term(a.lhs), self.cc.add_term(a.rhs)
                if l.positive:
                    self.cc.merge(n1, n2)
                else:
                    self.diseqs.append((n1, n2))
            elif isinstance(a, RelAtom):
                n = self.cc.add_rel(a)
                if l.positive:
                    self.cc.merge(n, self.cc.true_n)
                    self.pos_rels.append(n)
                else:
                    self.cc.merge(n, self.cc.false_n)
                    self.neg_rels.append(n)
            else:
                raise UnsupportedAtom(f"unexpected atom {a}")
        for a in lin_atoms:
            for t in a.terms():
                self.cc.add_term(t)
            if a.op == "eq" and len(a.coeffs) == 2 and a.const == 0:
                (t1, c1), (t2, c2) = a.coeffs
                if c1 == -c2:
                    self.cc.merge(self.cc.add_term(t1), self.cc.add_term(t2))

    # -- closure and cross-theory propagation ------------------------------

    def saturate(self) -> bool:
        cc = self.cc
        for _ in range(10000):
            if not cc.propagate():
                return False
            for n1, n2 in self.diseqs:
                if cc.same(n1, n2):
                    return False
            rows = self._rows()
            solution = theory.fm_solve(rows)
            if solution is None:
                return False
            if not self._propagate_equalities(rows, solution):
                return True
        raise RuntimeError("cover saturation did not stabilize")  # pragma: no cover

    def _rows(self) -> list[theory.Row]:
        rows = []
        for a in self.lin_atoms:
            coeffs: dict = {}
            const = a.const
            for t, c in a.coeffs:
                root = self.cc.find(self.cc.add_term(t))
                if root in self.cc.numeral:
                    const += c * self.cc.numeral[root]
                else:
                    k = ("lp", root)
                    coeffs[k] = coeffs.get(k, Fraction(0)) + c
            rows.append(theory.make_row(coeffs, const, a.op))
        return rows

    def _rational_roots(self) -> list[int]:
        out = []
        for n in range(len(self.cc.parent)):
            sort = self.cc.node_sort[n]
            if getattr(sort, "is_rational", False):
                r = self.cc.find(n)
                if r not in out:
                    out.append(r)
        return out

    def _propagate_equalities(self, rows: list[theory.Row], solution: dict) -> bool:
        roots = self._rational_roots()
        merged = False
        for i in range(len(roots)):
            for j in range(i + 1, len(roots)):
                u, v = self.cc.find(roots[i]), self.cc.find(roots[j])
                if u == v:
                    continue
                vu = self.cc.numeral.get(u, solution.get(("lp", u)))
                vv = self.cc.numeral.get(v, solution.get(("lp", v)))
                if vu is None or vv is None or vu != vv:
                    continue
                if not any(
                    theory.fm_eliminate_rows(rows + [self._diff_row(u, v, s)], _keys(rows)) is not None
                    for s in (1, -1)
                ):
                    self.cc.merge(u, v)
                    merged = True
        return merged

    def _diff_row(self, u: int, v: int, sign: int) -> theory.Row:
        coeffs: dict = {}
        const = Fraction(0)
        for root, s in ((u, sign), (v, -sign)):
            if root in self.cc.numeral:
                const += s * self.cc.numeral[root]
            else:
                k = ("lp", root)
                coeffs[k] = coeffs.get(k, Fraction(0)) + s
        return theory.make_row(coeffs, const, "lt")

    # -- representability ----------------------------------------------------

    def compute_reps(self) -> dict[int, Term]:
        """Smallest keep-term naming each representable class."""
        cc = self.cc
        best: dict[int, tuple[int, tuple, Term]] = {}

        def offer(root: int, depth: int, t: Term) -> bool:
            cand = (depth, term_key(t), t)
            cur = best.get(root)
            if cur is None or cand[:2] < cur[:2]:
                best[root] = cand
                return True
            return False

        for n, t in cc.term_of_node.items():
            if isinstance(t, (Const, RatVal)):
                offer(cc.find(n), 0, t)
            elif isinstance(t, Var) and (t in self.task.keep or t not in self.task.eliminate):
                offer(cc.find(n), 0, t)
        changed = True
        while changed:
            changed = False
            for n, (op, children) in cc.apps.items():
                if not op.startswith("f:"):
                    continue
                t = cc.term_of_node.get(n)
                if t is None or not isinstance(t, App):
                    continue
                reps = [best.get(cc.find(c)) for c in children]
                if any(r is None for r in reps):
                    continue
                depth = 1 + max(r[0] for r in reps)  # type: ignore[index]
                new_t = App(t.func, tuple(r[2] for r in reps))  # type: ignore[index]
                if offer(cc.find(n), depth, new_t):
                    changed = True
        return {root: entry[2] for root, entry in best.items()}

    # -- emission --------------------------------------------------------------

    def emit(self) -> Optional[tuple[list[Formula], list[Term]]]:
        if not self.saturate():
            return None
        cc = self.cc
        reps = self.compute_reps()
        out: list[Formula] = []

        def rep_of(node: int) -> Optional[Term]:
            return reps.get(cc.find(node))

        # equalities within classes: every representable member form equates
        # to the class representative
        for root, members in sorted(self._class_members().items()):
            anchor = reps.get(root)
            if anchor is None:
                continue
            forms = []
            for n in members:
                f = self._member_form(n, reps)
                if f is not None and f != anchor and f not in forms:
                    forms.append(f)
            for f in forms:
                out.append(_equate(anchor, f))

        # disequalities with both sides representable
        for n1, n2 in self.diseqs:
            r1, r2 = rep_of(n1), rep_of(n2)
            if r1 is not None and r2 is not None:
                out.append(_distinguish(r1, r2))

        # relation literals with every argument representable
        dropped_pos: list[int] = []
        dropped_neg: list[int] = []
        for n in self.pos_rels + self.neg_rels:
            op, children = cc.apps[n]
            arg_reps = [rep_of(c) for c in children]
            positive = n in self.pos_rels
            if all(r is not None for r in arg_reps):
                relname = op[2:]
                decl = self._rel_decl(n)
                out.append(lit(RelAtom(decl, tuple(arg_reps)), positive))  # type: ignore[arg-type]
            elif positive:
                dropped_pos.append(n)
            else:
                dropped_neg.append(n)

        # consequences of clashing positive/negative pairs whose hidden
        # arguments coincide; pairs that were fully emitted above already
        # imply their clause
        for p in self.pos_rels:
            for q in self.neg_rels:
                if p in dropped_pos or q in dropped_neg:
                    clause = self._pair_clause(p, q, reps)
                    if clause is not None and clause not in out:
                        out.append(clause)

        residuals = []
        for f in out:
            for t in _formula_app_terms(f):
                if t.sort.is_rational and t not in residuals:
                    residuals.append(t)
        return out, residuals

    def _class_members(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for n in range(len(self.cc.parent)):
            if n in (self.cc.true_n, self.cc.false_n):
                continue
            if self.cc.node_sort[n] == "bool":
                continue
            out.setdefault(self.cc.find(n), []).append(n)
        return out

    def _member_form(self, n: int, reps: dict[int, Term]) -> Optional[Term]:
        t = self.cc.term_of_node.get(n)
        if t is None:
            return None
        if isinstance(t, (Const, RatVal)):
            return t
        if isinstance(t, Var):
            return t if t not in self.task.eliminate else None
        key = self.cc.key_of_node[n]
        _, _, children = key
        arg_reps = [reps.get(self.cc.find(c)) for c in children]
        if any(r is None for r in arg_reps):
            return None
        return App(t.func, tuple(arg_reps))  # type: ignore[arg-type]

    def _rel_decl(self, n: int):
        # recover the declaration from any literal that produced this node
        op, _ = self.cc.apps[n]
        name = op[2:]
        for l in self.euf_literals:
            if isinstance(l.atom, RelAtom) and l.atom.rel.name == name:
                return l.atom.rel
        raise AssertionError(f"unknown relation {name}")

    def _pair_clause(self, p: int, q: int, reps: dict[int, Term]) -> Optional[Formula]:
        cc = self.cc
        op_p, args_p = cc.apps[p]
        op_q, args_q = cc.apps[q]
        if op_p != op_q:
            return None
        disjuncts: list[Formula] = []
        for a, b in zip(args_p, args_q):
            if cc.same(a, b):
                continue
            ra, rb = reps.get(cc.find(a)), reps.get(cc.find(b))
            if ra is None or rb is None:
                return None  # a hidden argument can always differ
            disjuncts.append(_distinguish(ra, rb))
        if not disjuncts:
            return FALSE  # fully congruent pair: contradiction
        return disj(disjuncts)


def _keys(rows: list[theory.Row]) -> list:
    return sorted({k for r in rows for k, _ in r.coeffs}, key=repr)


def _equate(a: Term, b: Term) -> Formula:
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
            return TRUE if atom else FALSE
        return lit(atom)
    return lit(EqAtom(a, b).ordered())


def _distinguish(a: Term, b: Term) -> Formula:
    if a.sort.is_rational:
        coeffs: dict[Term, Fraction] = {}
        const = Fraction(0)
        for t, s in ((a, 1), (b, -1)):
            if isinstance(t, RatVal):
                const += s * t.value
            else:
                coeffs[t] = coeffs.get(t, Fraction(0)) + s
        atom = lin_atom(coeffs, const, "ne")
        if isinstance(atom, bool):
            return TRUE if atom else FALSE
        return lit(atom)
    return lit(EqAtom(a, b).ordered(), positive=False)


def _formula_app_terms(f: Formula) -> list[Term]:
    out = []
    for t in theory.formula_terms(f):
        if isinstance(t, App):
            out.append(t)
    return out


def _check_unary(literals: Iterable[Literal]) -> None:
    for l in literals:
        for t in theory.formula_terms(Lit(l)):
            if isinstance(t, App) and len(t.args) != 1:
                raise UnsupportedSignature(f"non-unary function {t.func.name}")


def euf_cover(task: EliminationTask) -> Formula:
    """Cover of an existential conjunction of equality-logic literals with
    unary functions and arbitrary relations."""
    euf_lits = []
    for l in task.matrix:
        if isinstance(l.atom, LinAtom):
            raise UnsupportedAtom(f"arithmetic atom {l.atom} in equality-logic cover")
        euf_lits.append(l)
    _check_unary(euf_lits)
    engine = _CoverEngine(euf_lits, [], task)
    emitted = engine.emit()
    if emitted is None:
        return FALSE
    parts, _ = emitted
    return conj(parts)


def tame_cover(task: EliminationTask, ctx: TheoryContext) -> CoverResult:
    """Cover for the tame combination: rational sorts are sort-graph leaves.

    The result has the shape (equality-logic part) and (arithmetic part over
    kept variables and rational terms built on kept variables)."""
    from .analyzer import check_tame

    if not check_tame(ctx.signature):
        raise UnsupportedSignature("signature is not tame")
    euf_lits: list[Literal] = []
    lin_lits: list[Literal] = []
    for l in task.matrix:
        if isinstance(l.atom, LinAtom):
            lin_lits.append(l)
        else:
            euf_lits.append(l)
    _check_unary(task.matrix)
    if not lin_lits:
        return CoverResult(euf_cover(task), ())
    if not euf_lits and all(
        isinstance(t, Var) for l in lin_lits for t in l.atom.terms()  # type: ignore[union-attr]
    ):
        return CoverResult(fm_eliminate(task), ())

    disjuncts: list[Formula] = []
    residuals: list[Term] = []
    for branch in _lin_branches(lin_lits):
        engine = _CoverEngine(euf_lits, branch, task)
        emitted = engine.emit()
        if emitted is None:
            continue
        parts, res = emitted
        reps = engine.compute_reps()
        rows = engine._rows()
        elim_keys = []
        for root in engine._rational_roots():
            r = engine.cc.find(root)
            if ("lp", r) not in elim_keys and reps.get(r) is None:
                elim_keys.append(("lp", r))
        projected = theory.fm_eliminate_rows(rows, elim_keys)
        if projected is None:
            continue
        arith_parts = []
        for row in projected:
            coeffs: dict[Term, Fraction] = {}
            ok = True
            for (tag, root), c in row.coeffs:
                rep = reps.get(engine.cc.find(root))
                if rep is None:
                    ok = False
                    break
                coeffs[rep] = coeffs.get(rep, Fraction(0)) + c
                if isinstance(rep, App) and rep not in residuals:
                    residuals.append(rep)
            if not ok:
                continue
            atom = lin_atom(coeffs, row.const, row.op)
            if atom is True:
                continue
            if atom is False:
                arith_parts = [FALSE]
                break
            arith_parts.append(lit(atom))
        for t in res:
            if t not in residuals:
                residuals.append(t)
        disjuncts.append(conj(parts + arith_parts))
    return CoverResult(disj(disjuncts), tuple(residuals))


# ---------------------------------------------------------------------------
# Operational cover check


@dataclass
class CoverReport:
    passed: bool
    trials: int
    failures: list[dict] = field(default_factory=list)


def cover_property_test(
    task: EliminationTask,
    candidate: Formula,
    ctx: TheoryContext,
    trials: int = 100,
    seed: int = 0,
    gateway: Optional[SmtGateway] = None,
) -> CoverReport:
    """Sample residue constraints over keep plus two fresh variables and
    require equisatisfiability of candidate-with-residue and
    matrix-with-residue."""
    from .gateway import SolverConfig

    rng = random.Random(seed)
    own = gateway is None
    gw = gateway if gateway is not None else SmtGateway(ctx, SolverConfig(backend="inproc"))
    report = CoverReport(True, trials)
    try:
        for k in range(trials):
            chi = _random_residue(rng, task, ctx)
            with_cand = conj([candidate, chi])
            with_orig = conj([cube_formula(task.matrix), chi])
            s1 = gw.check_sat(with_cand, phase="cover-test").verdict
            s2 = gw.check_sat(with_orig, phase="cover-test").verdict
            if s1 != s2:
                report.passed = False
                report.failures.append({"trial": k, "residue": str(chi), "candidate": s1, "original": s2})
    finally:
        if own:
            gw.close()
    return report


def _random_residue(rng: random.Random, task: EliminationTask, ctx: TheoryContext) -> Formula:
    from .terms import RAT

    sig = ctx.signature
    pool: list[Term] = sorted(task.keep, key=term_key)
    fresh_sorts = sorted({v.sort for v in task.keep} | set(sig.sorts), key=str)
    if ctx.arithmetic == "lra" and RAT not in fresh_sorts:
        fresh_sorts.append(RAT)
    for i in (1, 2):
        if fresh_sorts:
            pool.append(Var(f"fr{i}", rng.choice(fresh_sorts)))
    consts = [Const(c) for c in sig.constants]
    funcs = [f for f in sig.functions if len(f.arg_sorts) == 1]

    def random_term(sort, depth: int = 0) -> Optional[Term]:
        opts: list[Term] = [t for t in pool if t.sort == sort] + [c for c in consts if c.sort == sort]
        if depth < 2:
            for f in funcs:
                if f.res_sort == sort and rng.random() < 0.3:
                    arg = random_term(f.arg_sorts[0], depth + 1)
                    if arg is not None:
                        opts.append(App(f, (arg,)))
        if sort.is_rational:
            opts.append(RatVal(Fraction(rng.randint(-3, 3))))
        if not opts:
            return None
        return rng.choice(opts)

    lits: list[Formula] = []
    for _ in range(rng.randint(1, 3)):
        kind = rng.random()
        if kind < 0.45 and sig.relations:
            rel = rng.choice(sorted(sig.relations, key=str))
            args = [random_term(s) for s in rel.arg_sorts]
            if any(a is None for a in args):
                continue
            lits.append(lit(RelAtom(rel, tuple(args)), rng.random() < 0.7))
        else:
            sorts = sorted({t.sort for t in pool} | {c.sort for c in consts}, key=str)
            if not sorts:
                continue
            sort = rng.choice(sorts)
            a, b = random_term(sort), random_term(sort)
            if a is None or b is None or a == b:
                continue
            if sort.is_rational:
                coeffs: dict[Term, Fraction] = {}
                const = Fraction(0)
                for t, s in ((a, 1), (b, -1)):
                    if isinstance(t, RatVal):
                        const += s * t.value
                    else:
                        coeffs[t] = coeffs.get(t, Fraction(0)) + s
                op = rng.choice(["eq", "ne", "le", "lt"])
                atom = lin_atom(coeffs, const, op)
                if not isinstance(atom, bool):
                    lits.append(lit(atom))
            else:
                lits.append(lit(EqAtom(a, b).ordered(), rng.random() < 0.5))
    return conj(lits) if lits else TRUE
