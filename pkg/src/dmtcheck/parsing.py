"""Text formats for systems and properties.

System files are line oriented: declarations (sort, const, function,
relation, var, control, fact, distinct) followed by named transitions whose
guards are conjunctions of literals with read/write annotated variables and
an optional existential prefix.  Property files name constraint leaves with
`let` and state one finite-trace temporal expression with `prop`.  The full
grammar is documented in the README."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

from . import ltlf
from .gateway import TheoryContext
from .system import DMT, Transition
from .terms import (
    App,
    Const,
    ConstDecl,
    Constraint,
    EqAtom,
    FuncDecl,
    LinAtom,
    Literal,
    RatVal,
    RAT,
    RelAtom,
    RelDecl,
    Signature,
    Sort,
    Term,
    Var,
    lin_atom,
)


class ParseError(Exception):
    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


# ---------------------------------------------------------------------------
# Tokenizer for guard and property expressions

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d+|\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_']*)"
    r"|(?P<op>\^r\b|\^w\b|!=|<=|>=|->|[()=<>!&|,.:*/+-]))"
)


def _tokenize(text: str, line: Optional[int]) -> list[str]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise ParseError(f"cannot tokenize near {rest[:20]!r}", line)
        out.append(m.group(m.lastgroup))  # type: ignore[arg-type]
        pos = m.end()
    return out


class _Tokens:
    def __init__(self, toks: list[str], line: Optional[int]):
        self.toks = toks
        self.i = 0
        self.line = line

    def peek(self) -> Optional[str]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> str:
        if self.i >= len(self.toks):
            raise ParseError("unexpected end of expression", self.line)
        self.i += 1
        return self.toks[self.i - 1]

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise ParseError(f"expected {tok!r}, found {got!r}", self.line)

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def error(self, msg: str) -> ParseError:
        return ParseError(msg, self.line)


# ---------------------------------------------------------------------------
# Symbol environment shared by guards and properties


@dataclass
class SymbolEnv:
    sig: Signature
    variables: dict[str, Var]
    annotations: bool  # guards allow ^r/^w; state formulas do not

    def sort(self, name: str) -> Sort:
        if name == "rat":
            return RAT
        return self.sig.sort_named(name)


_NUM_SPLIT = re.compile(r"^(\d+)\.(\d+)$")


def _fraction(tok: str) -> Fraction:
    m = _NUM_SPLIT.match(tok)
    if m:
        whole, frac = m.groups()
        return Fraction(int(whole) * 10 ** len(frac) + int(frac), 10 ** len(frac))
    return Fraction(int(tok))


Arith = tuple[dict[Term, Fraction], Fraction]


class ExprParser:
    """Constraints: optional existential prefix over a conjunction of
    literals built from relation atoms and comparisons."""

    def __init__(self, env: SymbolEnv, ts: _Tokens, bound: Optional[dict[str, Var]] = None):
        self.env = env
        self.ts = ts
        self.bound = dict(bound or {})

    def parse_constraint(self) -> Constraint:
        bound_vars: list[Var] = []
        if self.ts.peek() == "exists":
            bound_vars.extend(self._parse_binders())
        literals: list[Literal] = []
        self._parse_piece(bound_vars, literals)
        while self.ts.peek() in ("&", "and"):
            self.ts.next()
            self._parse_piece(bound_vars, literals)
        return Constraint(tuple(bound_vars), tuple(literals))

    def _parse_binders(self) -> list[Var]:
        self.ts.expect("exists")
        self.ts.expect("(")
        out: list[Var] = []
        while True:
            name = self.ts.next()
            self.ts.expect(":")
            sort = self.env.sort(self.ts.next())
            if name in self.bound or name in self.env.variables:
                raise self.ts.error(f"bound variable {name!r} shadows another name; rename it")
            v = Var(name, sort)
            out.append(v)
            self.bound[name] = v
            nxt = self.ts.next()
            if nxt == ")":
                break
            if nxt != ",":
                raise self.ts.error(f"expected ',' or ')', found {nxt!r}")
        if self.ts.peek() == ".":
            self.ts.next()
        return out

    def _parse_piece(self, bound_vars: list[Var], literals: list[Literal]) -> None:
        """One conjunct: a literal, or a parenthesized existential whose
        binders hoist to the enclosing constraint."""
        if self.ts.peek() == "(" and self.ts.toks[self.ts.i + 1 : self.ts.i + 2] == ["exists"]:
            self.ts.next()
            inner = self.parse_constraint()
            self.ts.expect(")")
            bound_vars.extend(inner.bound)
            literals.extend(inner.literals)
            return
        if self.ts.peek() == "exists":
            inner = self.parse_constraint()
            bound_vars.extend(inner.bound)
            literals.extend(inner.literals)
            return
        literals.append(self.parse_literal())

    def parse_leaf_constraint(self) -> Constraint:
        """One property leaf: an exists-prefixed conjunction, or a single
        literal when there is no prefix (conjunction then binds at the
        temporal level)."""
        if self.ts.peek() == "exists":
            return self.parse_constraint()
        return Constraint((), (self.parse_literal(),))

    def parse_literal(self) -> Literal:
        negated = False
        while self.ts.peek() in ("!", "not"):
            self.ts.next()
            negated = not negated
        if self.ts.peek() == "(":
            save = self.ts.i
            self.ts.next()
            try:
                inner = self.parse_literal()
                self.ts.expect(")")
                return inner.negate() if negated else inner
            except ParseError:
                self.ts.i = save
        lit = self._comparison_or_relation()
        return lit.negate() if negated else lit

    def _comparison_or_relation(self) -> Literal:
        # relation atom?
        save = self.ts.i
        tok = self.ts.peek()
        if tok is not None and re.match(r"[A-Za-z_]", tok):
            name = self.ts.next()
            try:
                self.env.sig.relation(name)
                is_rel = True
            except Exception:
                is_rel = False
            if is_rel and self.ts.peek() == "(":
                rel = self.env.sig.relation(name)
                self.ts.next()
                args = []
                while True:
                    args.append(self.parse_term())
                    nxt = self.ts.next()
                    if nxt == ")":
                        break
                    if nxt != ",":
                        raise self.ts.error(f"expected ',' or ')' in relation arguments, found {nxt!r}")
                try:
                    return Literal(RelAtom(rel, tuple(args)))
                except Exception as e:
                    raise self.ts.error(str(e))
            self.ts.i = save
        lhs = self.parse_arith()
        op_tok = self.ts.next()
        ops = {"=": "eq", "!=": "ne", "<=": "le", "<": "lt", ">=": "ge", ">": "gt"}
        if op_tok not in ops:
            raise self.ts.error(f"expected a comparison operator, found {op_tok!r}")
        rhs = self.parse_arith()
        return self._make_comparison(lhs, rhs, ops[op_tok])

    def _make_comparison(self, lhs: Arith, rhs: Arith, op: str) -> Literal:
        lc, lk = lhs
        rc, rk = rhs
        sorts = {t.sort for t in lc} | {t.sort for t in rc}
        if sorts and not all(s.is_rational for s in sorts):
            # uninterpreted equality: each side must be a single plain term
            if op not in ("eq", "ne"):
                raise self.ts.error("ordering comparisons need rational operands")
            lt_ = _single_term(lc, lk, self.ts)
            rt_ = _single_term(rc, rk, self.ts)
            if lt_.sort != rt_.sort:
                raise self.ts.error(f"equality between sorts {lt_.sort} and {rt_.sort}")
            return Literal(EqAtom(lt_, rt_).ordered(), op == "eq")
        coeffs: dict[Term, Fraction] = dict(lc)
        for t, c in rc.items():
            coeffs[t] = coeffs.get(t, Fraction(0)) - c
        atom = lin_atom(coeffs, lk - rk, op)
        if isinstance(atom, bool):
            raise self.ts.error("comparison folds to a constant; drop it")
        return Literal(atom)

    def parse_arith(self) -> Arith:
        coeffs, const = self.parse_product()
        while self.ts.peek() in ("+", "-"):
            sign = 1 if self.ts.next() == "+" else -1
            c2, k2 = self.parse_product()
            for t, c in c2.items():
                coeffs[t] = coeffs.get(t, Fraction(0)) + sign * c
            const += sign * k2
        return {t: c for t, c in coeffs.items() if c != 0}, const

    def parse_product(self) -> Arith:
        factors: list[Arith] = [self.parse_factor()]
        while self.ts.peek() in ("*", "/"):
            op = self.ts.next()
            rhs = self.parse_factor()
            lhsc, lhsk = factors[-1]
            rc, rk = rhs
            if op == "*":
                if not lhsc:
                    factors[-1] = ({t: c * lhsk for t, c in rc.items()}, rk * lhsk)
                elif not rc:
                    factors[-1] = ({t: c * rk for t, c in lhsc.items()}, lhsk * rk)
                else:
                    raise self.ts.error("nonlinear product")
            else:
                if rc or rk == 0:
                    raise self.ts.error("division only by a nonzero number")
                factors[-1] = ({t: c / rk for t, c in lhsc.items()}, lhsk / rk)
        return factors[0]

    def parse_factor(self) -> Arith:
        tok = self.ts.peek()
        if tok == "-":
            self.ts.next()
            c, k = self.parse_factor()
            return {t: -x for t, x in c.items()}, -k
        if tok == "(":
            self.ts.next()
            out = self.parse_arith()
            self.ts.expect(")")
            return out
        if tok is not None and tok[0].isdigit():
            self.ts.next()
            return {}, _fraction(tok)
        t = self.parse_term()
        if isinstance(t, RatVal):
            return {}, t.value
        return {t: Fraction(1)}, Fraction(0)

    def parse_term(self) -> Term:
        tok = self.ts.next()
        if tok[0].isdigit():
            return RatVal(_fraction(tok))
        if not re.match(r"[A-Za-z_]", tok):
            raise self.ts.error(f"expected a term, found {tok!r}")
        name = tok
        if self.ts.peek() == "(":
            try:
                fn = self.env.sig.function(name)
            except Exception:
                raise self.ts.error(f"unknown function {name!r}")
            self.ts.next()
            args = []
            while True:
                args.append(self.parse_term())
                nxt = self.ts.next()
                if nxt == ")":
                    break
                if nxt != ",":
                    raise self.ts.error("expected ',' or ')' in function arguments")
            try:
                return App(fn, tuple(args))
            except Exception as e:
                raise self.ts.error(str(e))
        if name in self.bound:
            return self.bound[name]
        if name in self.env.variables:
            v = self.env.variables[name]
            if self.ts.peek() in ("^r", "^w"):
                if not self.env.annotations:
                    raise self.ts.error(f"read/write annotations are not allowed here: {name}")
                ann = self.ts.next()[1]
                return v.with_ann(ann)
            if self.env.annotations:
                raise self.ts.error(f"variable {name} needs a ^r or ^w annotation in a guard")
            return v
        try:
            return Const(self.env.sig.constant(name))
        except Exception:
            raise self.ts.error(f"unknown symbol {name!r}")


def _single_term(coeffs: dict[Term, Fraction], const: Fraction, ts: _Tokens) -> Term:
    if const == 0 and len(coeffs) == 1:
        (t, c), = coeffs.items()
        if c == 1:
            return t
    if not coeffs:
        return RatVal(const)
    raise ts.error("expected a plain term on this side of the comparison")


# ---------------------------------------------------------------------------
# System files


def _logical_lines(text: str) -> list[tuple[int, str]]:
    """Join indented continuation lines onto their header line."""
    out: list[tuple[int, str]] = []
    for idx, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line[0] in " \t" and out:
            prev_idx, prev = out[-1]
            out[-1] = (prev_idx, prev + " " + line.strip())
        else:
            out.append((idx, line.strip()))
    return out


_CONTROL_SUFFIX = "_states"


def parse_system(text: str) -> DMT:
    sorts: list[Sort] = []
    functions: list[FuncDecl] = []
    relations: list[RelDecl] = []
    constants: list[ConstDecl] = []
    variables: list[tuple[str, Sort]] = []
    initials: list[tuple[str, str]] = []  # variable name, constant token
    distinct_groups: list[tuple[str, ...]] = []
    fact_lines: list[tuple[int, str]] = []
    transition_lines: list[tuple[int, str, str]] = []
    theory = "euf"

    def sort_named(name: str, ln: int) -> Sort:
        if name == "rat":
            return RAT
        for s in sorts:
            if s.name == name:
                return s
        raise ParseError(f"unknown sort {name!r}", ln)

    for ln, line in _logical_lines(text):
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == "theory":
            if rest not in ("euf", "lra", "euf+lra"):
                raise ParseError(
                    f"unsupported theory {rest!r}: this checker supports euf, lra and euf+lra", ln
                )
            theory = rest
        elif head == "sort":
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", rest):
                raise ParseError(f"bad sort name {rest!r}", ln)
            if rest == "rat":
                raise ParseError("the rational sort is built in", ln)
            sorts.append(Sort(rest))
        elif head == "const":
            m = re.fullmatch(r"(.+?)\s*:\s*([A-Za-z_][A-Za-z0-9_]*)\s*(distinct)?", rest)
            if not m:
                raise ParseError("expected: const NAME... : SORT [distinct]", ln)
            names = m.group(1).replace(",", " ").split()
            sort = sort_named(m.group(2), ln)
            for n in names:
                constants.append(ConstDecl(n, sort))
            if m.group(3):
                distinct_groups.append(tuple(names))
        elif head == "function":
            m = re.fullmatch(r"([A-Za-z_]\w*)\s*\(([^)]*)\)\s*->\s*([A-Za-z_]\w*)", rest)
            if not m:
                raise ParseError("expected: function NAME(SORT,...) -> SORT", ln)
            args = tuple(sort_named(a.strip(), ln) for a in m.group(2).split(",") if a.strip())
            functions.append(FuncDecl(m.group(1), args, sort_named(m.group(3), ln)))
        elif head == "relation":
            m = re.fullmatch(r"([A-Za-z_]\w*)\s*\(([^)]*)\)", rest)
            if not m:
                raise ParseError("expected: relation NAME(SORT,...)", ln)
            args = tuple(sort_named(a.strip(), ln) for a in m.group(2).split(",") if a.strip())
            relations.append(RelDecl(m.group(1), args))
        elif head == "var":
            m = re.fullmatch(r"([A-Za-z_]\w*)\s*:\s*([A-Za-z_]\w*)\s*=\s*(\S+)", rest)
            if not m:
                raise ParseError("expected: var NAME : SORT = CONSTANT", ln)
            sort = sort_named(m.group(2), ln)
            variables.append((m.group(1), sort))
            initials.append((m.group(1), m.group(3)))
        elif head == "control":
            m = re.fullmatch(r"([A-Za-z_]\w*)\s*:\s*(.+?)\s+init\s+([A-Za-z_]\w*)", rest)
            if not m:
                raise ParseError("expected: control VAR : STATE... init STATE", ln)
            vname = m.group(1)
            states = m.group(2).replace(",", " ").split()
            init = m.group(3)
            if init not in states:
                raise ParseError(f"initial state {init!r} is not among the declared states", ln)
            csort = Sort(vname + _CONTROL_SUFFIX)
            sorts.append(csort)
            for st in states:
                constants.append(ConstDecl(st, csort))
            distinct_groups.append(tuple(states))
            variables.append((vname, csort))
            initials.append((vname, init))
        elif head == "transition":
            m = re.fullmatch(r"([A-Za-z_][\w']*)\s*(\[\s*([A-Za-z_]\w*)\s*->\s*([A-Za-z_]\w*)\s*\])?\s*:\s*(.*)", rest)
            if not m:
                raise ParseError("expected: transition NAME [FROM -> TO]: GUARD", ln)
            guard = m.group(5)
            if m.group(2):
                # control-state sugar: conjoin the location change; the
                # control variable is the unique one with a _states sort
                controls = [v for v, s in variables if s.name.endswith(_CONTROL_SUFFIX)]
                if not controls:
                    raise ParseError("transition uses [from -> to] but no control is declared", ln)
                c = controls[0]
                move = f"{c}^r = {m.group(3)} & {c}^w = {m.group(4)}"
                guard = f"{move} & {guard}" if guard.strip() and guard.strip() != "true" else move
            elif guard.strip() == "true":
                guard = ""
            transition_lines.append((ln, m.group(1), guard))
        elif head == "fact":
            fact_lines.append((ln, rest))
        elif head == "distinct":
            names = rest.replace(",", " ").split()
            if len(names) < 2:
                raise ParseError("distinct needs at least two constants", ln)
            distinct_groups.append(tuple(names))
        else:
            raise ParseError(f"unknown declaration {head!r}", ln)

    if not variables:
        raise ParseError("the variable set must be nonempty: declare at least one var or control")
    try:
        sig = Signature(
            sorts=tuple(sorts),
            functions=tuple(functions),
            relations=tuple(relations),
            constants=tuple(constants),
            variables=tuple(variables),
        )
    except Exception as e:
        raise ParseError(str(e))

    var_objs = {name: Var(name, sort) for name, sort in variables}

    def constant_term(tok: str, sort: Sort, ln: int) -> Union[Const, RatVal]:
        if tok[0].isdigit() or tok[0] == "-":
            if not sort.is_rational:
                raise ParseError(f"numeric initializer for non-rational variable", ln)
            return RatVal(_fraction(tok.lstrip("-")) * (-1 if tok[0] == "-" else 1))
        decl = next((c for c in constants if c.name == tok), None)
        if decl is None:
            raise ParseError(f"unknown constant {tok!r}", ln)
        if decl.sort != sort:
            raise ParseError(f"initializer {tok} has sort {decl.sort}, expected {sort}", ln)
        return Const(decl)

    initial = []
    for name, tok in initials:
        v = var_objs[name]
        initial.append((v, constant_term(tok, v.sort, 0)))

    env = SymbolEnv(sig, var_objs, annotations=True)
    transitions = []
    for ln, name, guard_text in transition_lines:
        if not guard_text.strip():
            guard = Constraint((), ())
        else:
            ts = _Tokens(_tokenize(guard_text, ln), ln)
            guard = ExprParser(env, ts).parse_constraint()
            if not ts.done():
                raise ParseError(f"trailing input in guard: {ts.peek()!r}", ln)
        transitions.append(Transition(name, guard))

    facts: list[Literal] = []
    fact_env = SymbolEnv(sig, {}, annotations=False)
    for ln, ftext in fact_lines:
        ts = _Tokens(_tokenize(ftext, ln), ln)
        l = ExprParser(fact_env, ts).parse_literal()
        if not ts.done():
            raise ParseError("trailing input in fact", ln)
        if not l.positive and not isinstance(l.atom, LinAtom):
            raise ParseError("facts must be positive atoms or equations", ln)
        facts.append(l)

    name_to_decl = {c.name: c for c in constants}
    dgroups = []
    for group in distinct_groups:
        decls = []
        for n in group:
            if n not in name_to_decl:
                raise ParseError(f"distinct mentions unknown constant {n!r}")
            decls.append(name_to_decl[n])
        dgroups.append(tuple(decls))

    arithmetic = "lra" if theory in ("lra", "euf+lra") else "none"
    ctx = TheoryContext(sig, arithmetic, tuple(facts), tuple(dgroups))
    try:
        return DMT(sig, tuple(var_objs[n] for n, _ in variables), tuple(initial), tuple(transitions), ctx)
    except ValueError as e:
        raise ParseError(str(e))


# ---------------------------------------------------------------------------
# Property files


def parse_property(text: str, d: DMT) -> ltlf.Property:
    env = SymbolEnv(d.signature, {v.name: v for v in d.variables}, annotations=False)
    lets: dict[str, Constraint] = {}
    prop: Optional[ltlf.Property] = None
    for ln, line in _logical_lines(text):
        head, _, rest = line.partition(" ")
        if head == "let":
            m = re.fullmatch(r"([A-Za-z_]\w*)\s*=\s*(.+)", rest.strip())
            if not m:
                raise ParseError("expected: let NAME = CONSTRAINT", ln)
            ts = _Tokens(_tokenize(m.group(2), ln), ln)
            c = ExprParser(env, ts).parse_constraint()
            if not ts.done():
                raise ParseError("trailing input in let", ln)
            lets[m.group(1)] = c
        elif head == "prop":
            if prop is not None:
                raise ParseError("only one prop per file", ln)
            ts = _Tokens(_tokenize(rest.strip(), ln), ln)
            prop = _PropParser(env, lets, ts).parse()
            if not ts.done():
                raise ParseError(f"trailing input in prop: {ts.peek()!r}", ln)
        else:
            raise ParseError(f"unknown keyword {head!r} in property file", ln)
    if prop is None:
        raise ParseError("property file contains no prop")
    return prop


class _PropParser:
    """Precedence: | < & < U < unary (X, G, F)."""

    def __init__(self, env: SymbolEnv, lets: dict[str, Constraint], ts: _Tokens):
        self.env = env
        self.lets = lets
        self.ts = ts

    def parse(self) -> ltlf.Property:
        return self.parse_or()

    def parse_or(self) -> ltlf.Property:
        out = self.parse_and()
        while self.ts.peek() == "|":
            self.ts.next()
            out = ltlf.or_(out, self.parse_and())
        return out

    def parse_and(self) -> ltlf.Property:
        out = self.parse_until()
        while self.ts.peek() == "&":
            self.ts.next()
            out = ltlf.and_(out, self.parse_until())
        return out

    def parse_until(self) -> ltlf.Property:
        lhs = self.parse_unary()
        if self.ts.peek() == "U":
            self.ts.next()
            return ltlf.Until(lhs, self.parse_until())
        return lhs

    def parse_unary(self) -> ltlf.Property:
        tok = self.ts.peek()
        if tok == "X":
            self.ts.next()
            return ltlf.Next(self.parse_unary())
        if tok == "G":
            self.ts.next()
            return ltlf.Globally(self.parse_unary())
        if tok == "F":
            self.ts.next()
            return ltlf.eventually(self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> ltlf.Property:
        tok = self.ts.peek()
        if tok == "(":
            save = self.ts.i
            self.ts.next()
            try:
                inner = self.parse()
                self.ts.expect(")")
                return inner
            except ParseError:
                self.ts.i = save
        if tok == "true":
            self.ts.next()
            return ltlf.Leaf(Constraint((), ()))
        if tok is not None and tok in self.lets:
            self.ts.next()
            return ltlf.Leaf(self.lets[tok])
        # a bare constraint: exists-prefixed, or a single literal (plain
        # conjunction binds at the temporal level instead)
        c = ExprParser(self.env, self.ts).parse_leaf_constraint()
        return ltlf.Leaf(c)
