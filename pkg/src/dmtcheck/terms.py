"""Multi-sorted first-order syntax: sorts, signatures, terms, literals,
constraints and quantifier-free formulas.

All values are immutable and hashable, so formulas can be shared freely and
used as dictionary keys (the product automaton dedups on them).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Optional, Union


class SortError(Exception):
    """A term or atom is not well-sorted."""


class ContextError(Exception):
    """A formula is used in a context its annotations do not allow."""


# ---------------------------------------------------------------------------
# Sorts and signatures


@dataclass(frozen=True)
class Sort:
    name: str
    kind: str = "uninterpreted"  # "uninterpreted" | "rational"

    def __str__(self) -> str:
        return self.name

    @property
    def is_rational(self) -> bool:
        return self.kind == "rational"


RAT = Sort("rat", "rational")


@dataclass(frozen=True)
class FuncDecl:
    name: str
    arg_sorts: tuple[Sort, ...]
    res_sort: Sort

    def __str__(self) -> str:
        args = ", ".join(str(s) for s in self.arg_sorts)
        return f"{self.name}({args}) -> {self.res_sort}"


@dataclass(frozen=True)
class RelDecl:
    name: str
    arg_sorts: tuple[Sort, ...]

    def __str__(self) -> str:
        args = ", ".join(str(s) for s in self.arg_sorts)
        return f"{self.name}({args})"


@dataclass(frozen=True)
class ConstDecl:
    name: str
    sort: Sort

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Signature:
    """Symbols of a system: sorts, functions, relations, constants, and the
    ordered data variables."""

    sorts: tuple[Sort, ...]
    functions: tuple[FuncDecl, ...] = ()
    relations: tuple[RelDecl, ...] = ()
    constants: tuple[ConstDecl, ...] = ()
    variables: tuple[tuple[str, Sort], ...] = ()

    def __post_init__(self) -> None:
        names = [s.name for s in self.sorts]
        if len(set(names)) != len(names):
            raise SortError("duplicate sort names")
        declared = set(self.sorts) | {RAT}
        for f in self.functions:
            for s in f.arg_sorts + (f.res_sort,):
                if s not in declared:
                    raise SortError(f"function {f.name} uses undeclared sort {s}")
        for r in self.relations:
            for s in r.arg_sorts:
                if s not in declared:
                    raise SortError(f"relation {r.name} uses undeclared sort {s}")
        for c in self.constants:
            if c.sort not in declared:
                raise SortError(f"constant {c.name} has undeclared sort {c.sort}")
        for _, s in self.variables:
            if s not in declared:
                raise SortError(f"variable of undeclared sort {s}")

    def sort_named(self, name: str) -> Sort:
        if name == RAT.name:
            return RAT
        for s in self.sorts:
            if s.name == name:
                return s
        raise SortError(f"unknown sort {name}")

    def function(self, name: str) -> FuncDecl:
        for f in self.functions:
            if f.name == name:
                return f
        raise SortError(f"unknown function {name}")

    def relation(self, name: str) -> RelDecl:
        for r in self.relations:
            if r.name == name:
                return r
        raise SortError(f"unknown relation {name}")

    def constant(self, name: str) -> ConstDecl:
        for c in self.constants:
            if c.name == name:
                return c
        raise SortError(f"unknown constant {name}")

    def var_sort(self, name: str) -> Sort:
        for n, s in self.variables:
            if n == name:
                return s
        raise SortError(f"unknown variable {name}")


# ---------------------------------------------------------------------------
# Terms
#
# Variable annotations are part of the variable's identity: the same name with
# ann=None, ann="r", ann="w" or an integer index are four different variables.
# This rules out capture bugs when guards are instantiated at trace positions.

Ann = Union[None, str, int]  # None | "r" | "w" | index >= 0


@dataclass(frozen=True)
class Var:
    name: str
    sort: Sort
    ann: Ann = None

    def __post_init__(self) -> None:
        if isinstance(self.ann, str) and self.ann not in ("r", "w"):
            raise ValueError(f"bad annotation {self.ann!r}")
        if isinstance(self.ann, int) and self.ann < 0:
            raise ValueError("negative index annotation")

    def __str__(self) -> str:
        if self.ann is None:
            return self.name
        if isinstance(self.ann, int):
            return f"{self.name}{self.ann}"
        return f"{self.name}^{self.ann}"

    def with_ann(self, ann: Ann) -> "Var":
        return Var(self.name, self.sort, ann)


@dataclass(frozen=True)
class Const:
    decl: ConstDecl

    def __str__(self) -> str:
        return self.decl.name

    @property
    def sort(self) -> Sort:
        return self.decl.sort


@dataclass(frozen=True)
class RatVal:
    """A rational numeral."""

    value: Fraction

    def __str__(self) -> str:
        return str(self.value)

    @property
    def sort(self) -> Sort:
        return RAT


@dataclass(frozen=True)
class App:
    func: FuncDecl
    args: tuple["Term", ...]

    def __post_init__(self) -> None:
        if len(self.args) != len(self.func.arg_sorts):
            raise SortError(f"{self.func.name}: arity mismatch")
        for a, s in zip(self.args, self.func.arg_sorts):
            if a.sort != s:
                raise SortError(f"{self.func.name}: argument {a} is not of sort {s}")

    def __str__(self) -> str:
        return f"{self.func.name}({', '.join(str(a) for a in self.args)})"

    @property
    def sort(self) -> Sort:
        return self.func.res_sort


Term = Union[Var, Const, RatVal, App]


def term_key(t: Term) -> tuple:
    """Deterministic ordering key over terms (used for canonical forms)."""
    if isinstance(t, Var):
        ann = t.ann if t.ann is not None else ""
        return (0, t.name, str(ann))
    if isinstance(t, Const):
        return (1, t.decl.name)
    if isinstance(t, RatVal):
        return (2, t.value)
    return (3, t.func.name) + tuple(term_key(a) for a in t.args)


# ---------------------------------------------------------------------------
# Atoms and literals


@dataclass(frozen=True)
class RelAtom:
    rel: RelDecl
    args: tuple[Term, ...]

    def __post_init__(self) -> None:
        if len(self.args) != len(self.rel.arg_sorts):
            raise SortError(f"{self.rel.name}: arity mismatch")
        for a, s in zip(self.args, self.rel.arg_sorts):
            if a.sort != s:
                raise SortError(f"{self.rel.name}: argument {a} is not of sort {s}")

    def __str__(self) -> str:
        return f"{self.rel.name}({', '.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class EqAtom:
    """Equality between two terms of the same uninterpreted sort."""

    lhs: Term
    rhs: Term

    def __post_init__(self) -> None:
        if self.lhs.sort != self.rhs.sort:
            raise SortError(f"equality between sorts {self.lhs.sort} and {self.rhs.sort}")
        if self.lhs.sort.is_rational:
            raise SortError("rational equality must be a linear atom")

    def __str__(self) -> str:
        return f"{self.lhs} = {self.rhs}"

    def ordered(self) -> "EqAtom":
        if term_key(self.rhs) < term_key(self.lhs):
            return EqAtom(self.rhs, self.lhs)
        return self


# Linear atoms are kept normalized: sum(coeff * term) + const  op  0 with
# exact rational coefficients.  op "ge"/"gt" inputs are flipped to "le"/"lt".

LIN_OPS = ("eq", "ne", "le", "lt")


@dataclass(frozen=True)
class LinAtom:
    coeffs: tuple[tuple[Term, Fraction], ...]  # sorted by term_key, coeff != 0
    const: Fraction
    op: str

    def __post_init__(self) -> None:
        if self.op not in LIN_OPS:
            raise ValueError(f"bad linear op {self.op}")
        for t, c in self.coeffs:
            if not t.sort.is_rational:
                raise SortError(f"non-rational term {t} in linear atom")
            if isinstance(t, RatVal):
                raise SortError("numerals must be folded into the constant")
            if c == 0:
                raise ValueError("zero coefficient")

    def __str__(self) -> str:
        sym = {"eq": "=", "ne": "!=", "le": "<=", "lt": "<"}[self.op]
        if not self.coeffs:
            return f"{self.const} {sym} 0"
        parts = []
        for t, c in self.coeffs:
            if c == 1:
                parts.append(str(t))
            elif c == -1:
                parts.append(f"-{t}")
            else:
                parts.append(f"{c}*{t}")
        lhs = " + ".join(parts).replace("+ -", "- ")
        if self.const:
            lhs += f" + {self.const}" if self.const > 0 else f" - {-self.const}"
        return f"{lhs} {sym} 0"

    def terms(self) -> Iterator[Term]:
        for t, _ in self.coeffs:
            yield t


def lin_atom(coeffs: Mapping[Term, Fraction], const: Fraction, op: str) -> Union[LinAtom, bool]:
    """Build a normalized linear atom; ground atoms fold to True/False."""
    if op == "ge":
        return lin_atom({t: -c for t, c in coeffs.items()}, -const, "le")
    if op == "gt":
        return lin_atom({t: -c for t, c in coeffs.items()}, -const, "lt")
    items = sorted(((t, Fraction(c)) for t, c in coeffs.items() if c != 0), key=lambda p: term_key(p[0]))
    const = Fraction(const)
    if not items:
        if op == "eq":
            return const == 0
        if op == "ne":
            return const != 0
        if op == "le":
            return const <= 0
        return const < 0
    # canonical scaling: first coefficient has absolute value 1, eq/ne positive
    scale = abs(items[0][1]) if op in ("le", "lt") else items[0][1]
    if op in ("eq", "ne") or scale > 0:
        items = [(t, c / scale) for t, c in items]
        const = const / scale
    else:
        # dividing an inequality by a negative would flip it; scale by |.|
        items = [(t, c / abs(scale)) for t, c in items]
        const = const / abs(scale)
    return LinAtom(tuple(items), const, op)


Atom = Union[RelAtom, EqAtom, LinAtom]


@dataclass(frozen=True)
class Literal:
    atom: Atom
    positive: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.atom, LinAtom) and not self.positive:
            raise ValueError("linear literals are normalized to positive polarity")

    def __str__(self) -> str:
        return str(self.atom) if self.positive else f"!{self.atom}"

    def negate(self) -> "Literal":
        a = self.atom
        if isinstance(a, LinAtom):
            neg_op = {"eq": "ne", "ne": "eq", "le": "gt", "lt": "ge"}[a.op]
            out = lin_atom(dict(a.coeffs), a.const, neg_op)
            if isinstance(out, bool):
                raise AssertionError("nonground atom negated to a constant")
            return Literal(out)
        return Literal(a, not self.positive)


# ---------------------------------------------------------------------------
# Formulas


class Formula:
    """Base class; concrete formulas below are frozen dataclasses."""

    def __and__(self, other: "Formula") -> "Formula":
        return conj([self, other])

    def __or__(self, other: "Formula") -> "Formula":
        return disj([self, other])


@dataclass(frozen=True)
class TrueF(Formula):
    def __str__(self) -> str:
        return "true"


@dataclass(frozen=True)
class FalseF(Formula):
    def __str__(self) -> str:
        return "false"


TRUE = TrueF()
FALSE = FalseF()


@dataclass(frozen=True)
class Lit(Formula):
    lit: Literal

    def __str__(self) -> str:
        return str(self.lit)


@dataclass(frozen=True)
class AndF(Formula):
    args: tuple[Formula, ...]

    def __str__(self) -> str:
        return "(" + " & ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class OrF(Formula):
    args: tuple[Formula, ...]

    def __str__(self) -> str:
        return "(" + " | ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class NotF(Formula):
    arg: Formula

    def __str__(self) -> str:
        return f"!({self.arg})"


@dataclass(frozen=True)
class Exists(Formula):
    """Existential prefix over a quantifier-free matrix."""

    bound: tuple[Var, ...]
    matrix: Formula

    def __post_init__(self) -> None:
        for v in self.bound:
            if v.ann is not None:
                raise ContextError("bound variables carry no annotation")

    def __str__(self) -> str:
        vs = ", ".join(f"{v.name}:{v.sort}" for v in self.bound)
        return f"(exists {vs}. {self.matrix})"


def lit(atom: Atom, positive: bool = True) -> Formula:
    if isinstance(atom, LinAtom) and not positive:
        return Lit(Literal(atom).negate())
    return Lit(Literal(atom, positive))


def conj(args: Iterable[Formula]) -> Formula:
    flat: list[Formula] = []
    for a in args:
        if isinstance(a, FalseF):
            return FALSE
        if isinstance(a, TrueF):
            continue
        if isinstance(a, AndF):
            flat.extend(a.args)
        else:
            flat.append(a)
    seen: list[Formula] = []
    for a in flat:
        if a not in seen:
            seen.append(a)
    if not seen:
        return TRUE
    if len(seen) == 1:
        return seen[0]
    return AndF(tuple(seen))


def disj(args: Iterable[Formula]) -> Formula:
    flat: list[Formula] = []
    for a in args:
        if isinstance(a, TrueF):
            return TRUE
        if isinstance(a, FalseF):
            continue
        if isinstance(a, OrF):
            flat.extend(a.args)
        else:
            flat.append(a)
    seen: list[Formula] = []
    for a in flat:
        if a not in seen:
            seen.append(a)
    if not seen:
        return FALSE
    if len(seen) == 1:
        return seen[0]
    return OrF(tuple(seen))


def neg(f: Formula) -> Formula:
    """Negate and push to negation normal form."""
    if isinstance(f, TrueF):
        return FALSE
    if isinstance(f, FalseF):
        return TRUE
    if isinstance(f, Lit):
        return Lit(f.lit.negate())
    if isinstance(f, AndF):
        return disj([neg(a) for a in f.args])
    if isinstance(f, OrF):
        return conj([neg(a) for a in f.args])
    if isinstance(f, NotF):
        return nnf(f.arg)
    raise ContextError(f"cannot negate {type(f).__name__}")


def nnf(f: Formula) -> Formula:
    if isinstance(f, (TrueF, FalseF, Lit)):
        return f
    if isinstance(f, AndF):
        return conj([nnf(a) for a in f.args])
    if isinstance(f, OrF):
        return disj([nnf(a) for a in f.args])
    if isinstance(f, NotF):
        return neg(f.arg)
    if isinstance(f, Exists):
        return Exists(f.bound, nnf(f.matrix))
    raise ContextError(f"no NNF for {type(f).__name__}")


# ---------------------------------------------------------------------------
# Constraints: existentially quantified conjunctions of literals


@dataclass(frozen=True)
class Constraint:
    bound: tuple[Var, ...]
    literals: tuple[Literal, ...]

    def __str__(self) -> str:
        body = " & ".join(str(l) for l in self.literals) or "true"
        if not self.bound:
            return body
        vs = ", ".join(f"{v.name}:{v.sort}" for v in self.bound)
        return f"exists {vs}. {body}"

    def formula(self) -> Formula:
        body = conj([Lit(l) for l in self.literals])
        if not self.bound:
            return body
        return Exists(self.bound, body)


TRUE_CONSTRAINT = Constraint((), ())


# ---------------------------------------------------------------------------
# Free variables, substitution, renaming


def term_vars(t: Term) -> set[Var]:
    if isinstance(t, Var):
        return {t}
    if isinstance(t, App):
        out: set[Var] = set()
        for a in t.args:
            out |= term_vars(a)
        return out
    return set()


def atom_vars(a: Atom) -> set[Var]:
    if isinstance(a, RelAtom):
        out: set[Var] = set()
        for t in a.args:
            out |= term_vars(t)
        return out
    if isinstance(a, EqAtom):
        return term_vars(a.lhs) | term_vars(a.rhs)
    out = set()
    for t, _ in a.coeffs:
        out |= term_vars(t)
    return out


def free_variables(f: Union[Formula, Constraint]) -> set[Var]:
    """Exact free-variable set, respecting existential binders."""
    if isinstance(f, Constraint):
        out: set[Var] = set()
        for l in f.literals:
            out |= atom_vars(l.atom)
        return out - set(f.bound)
    if isinstance(f, (TrueF, FalseF)):
        return set()
    if isinstance(f, Lit):
        return atom_vars(f.lit.atom)
    if isinstance(f, (AndF, OrF)):
        out = set()
        for a in f.args:
            out |= free_variables(a)
        return out
    if isinstance(f, NotF):
        return free_variables(f.arg)
    if isinstance(f, Exists):
        return free_variables(f.matrix) - set(f.bound)
    raise TypeError(f"not a formula: {f!r}")


def subst_term(t: Term, mapping: Mapping[Var, Term]) -> Term:
    if isinstance(t, Var):
        return mapping.get(t, t)
    if isinstance(t, App):
        return App(t.func, tuple(subst_term(a, mapping) for a in t.args))
    return t


def subst_atom(a: Atom, mapping: Mapping[Var, Term]) -> Union[Atom, bool]:
    if isinstance(a, RelAtom):
        return RelAtom(a.rel, tuple(subst_term(t, mapping) for t in a.args))
    if isinstance(a, EqAtom):
        lhs = subst_term(a.lhs, mapping)
        rhs = subst_term(a.rhs, mapping)
        if lhs == rhs:
            return True
        return EqAtom(lhs, rhs).ordered()
    coeffs: dict[Term, Fraction] = {}
    const = a.const
    for t, c in a.coeffs:
        t2 = subst_term(t, mapping)
        if isinstance(t2, RatVal):
            const += c * t2.value
        else:
            coeffs[t2] = coeffs.get(t2, Fraction(0)) + c
    return lin_atom(coeffs, const, a.op)


def subst(f: Formula, mapping: Mapping[Var, Term]) -> Formula:
    """Capture-avoiding substitution of free variables."""
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Lit):
        out = subst_atom(f.lit.atom, mapping)
        if isinstance(out, bool):
            holds = out == f.lit.positive
            return TRUE if holds else FALSE
        return lit(out, f.lit.positive)
    if isinstance(f, AndF):
        return conj([subst(a, mapping) for a in f.args])
    if isinstance(f, OrF):
        return disj([subst(a, mapping) for a in f.args])
    if isinstance(f, NotF):
        return NotF(subst(f.arg, mapping))
    if isinstance(f, Exists):
        inner = {v: t for v, t in mapping.items() if v not in f.bound}
        clashing = set()
        for t in inner.values():
            clashing |= term_vars(t)
        if clashing & set(f.bound):
            raise ContextError("substitution would capture a bound variable")
        return Exists(f.bound, subst(f.matrix, inner))
    raise TypeError(f"not a formula: {f!r}")


def rename_to_index(f: Formula, i: int) -> Formula:
    """Rename every plain free variable v to its indexed copy v_i."""
    fv = free_variables(f)
    for v in fv:
        if isinstance(v.ann, str):
            raise ContextError(f"annotated variable {v} in a state formula")
    mapping = {v: v.with_ann(i) for v in fv if v.ann is None}
    return subst(f, mapping)


def unindex(f: Formula, i: int) -> Formula:
    """Inverse of rename_to_index: v_i back to v."""
    mapping = {v: v.with_ann(None) for v in free_variables(f) if v.ann == i}
    return subst(f, mapping)


def instantiate_transition(f: Formula, i: int, j: int) -> Formula:
    """Replace read copies by index i and write copies by index j."""
    fv = free_variables(f)
    mapping: dict[Var, Term] = {}
    for v in fv:
        if v.ann == "r":
            mapping[v] = v.with_ann(i)
        elif v.ann == "w":
            mapping[v] = v.with_ann(j)
        else:
            raise ContextError(f"unannotated free variable {v} in a guard")
    return subst(f, mapping)


# ---------------------------------------------------------------------------
# Disjunctive normal form


def to_dnf_constraints(f: Formula) -> list[Constraint]:
    """Equivalent list of constraints whose disjunction is f.

    Existential prefixes distribute into the disjuncts.  Cubes that contain a
    syntactically complementary pair are dropped.
    """
    bound: tuple[Var, ...] = ()
    if isinstance(f, Exists):
        bound = f.bound
        f = f.matrix
    f = nnf(f)
    cubes = _dnf(f)
    out = []
    for cube in cubes:
        used = set()
        for l in cube:
            used |= atom_vars(l.atom)
        keep = tuple(v for v in bound if v in used)
        out.append(Constraint(keep, cube))
    return out


def _dnf(f: Formula) -> list[tuple[Literal, ...]]:
    if isinstance(f, TrueF):
        return [()]
    if isinstance(f, FalseF):
        return []
    if isinstance(f, Lit):
        return [(f.lit,)]
    if isinstance(f, OrF):
        out: list[tuple[Literal, ...]] = []
        for a in f.args:
            for cube in _dnf(a):
                if cube not in out:
                    out.append(cube)
        return out
    if isinstance(f, AndF):
        acc: list[tuple[Literal, ...]] = [()]
        for a in f.args:
            nxt: list[tuple[Literal, ...]] = []
            for left in acc:
                for right in _dnf(a):
                    cube = merge_cube(left, right)
                    if cube is not None and cube not in nxt:
                        nxt.append(cube)
            acc = nxt
            if not acc:
                return []
        return acc
    raise ContextError(f"DNF over {type(f).__name__}")


def merge_cube(a: tuple[Literal, ...], b: tuple[Literal, ...]) -> Optional[tuple[Literal, ...]]:
    """Concatenate cubes, dropping duplicates; None on syntactic clash."""
    out = list(a)
    for l in b:
        if l.negate() in out:
            return None
        if l not in out:
            out.append(l)
    return tuple(out)


def cube_formula(lits: Iterable[Literal]) -> Formula:
    return conj([Lit(l) for l in lits])


def canonical_key(f: Formula) -> tuple:
    """Order-insensitive structural key: used to dedup product nodes cheaply."""
    if isinstance(f, TrueF):
        return ("T",)
    if isinstance(f, FalseF):
        return ("F",)
    if isinstance(f, Lit):
        return ("L", str(f.lit))
    if isinstance(f, AndF):
        return ("A",) + tuple(sorted(canonical_key(a) for a in f.args))
    if isinstance(f, OrF):
        return ("O",) + tuple(sorted(canonical_key(a) for a in f.args))
    if isinstance(f, NotF):
        return ("N", canonical_key(f.arg))
    if isinstance(f, Exists):
        return ("E", tuple(str(v) for v in f.bound), canonical_key(f.matrix))
    raise TypeError(f"not a formula: {f!r}")
