"""SMT-LIB2 v2.6 text encoding: serialization of sorts, declarations and
formulas, plus an s-expression reader used both by the solver driver (to
parse replies) and by the bundled solver process (to parse commands)."""

from __future__ import annotations

from fractions import Fraction
from typing import Iterator, Union

from .terms import (
    AndF,
    App,
    Const,
    EqAtom,
    Exists,
    FalseF,
    Formula,
    LinAtom,
    Lit,
    NotF,
    OrF,
    RatVal,
    RelAtom,
    Sort,
    Term,
    TrueF,
    Var,
)

Sexp = Union[str, list]


# ---------------------------------------------------------------------------
# Reader


def tokenize(text: str) -> Iterator[str]:
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            yield c
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c == "|":
            j = text.index("|", i + 1)
            yield text[i : j + 1]
            i = j + 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            yield text[i : j + 1]
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            yield text[i:j]
            i = j


def parse_sexps(text: str) -> list[Sexp]:
    stack: list[list] = [[]]
    for tok in tokenize(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            done = stack.pop()
            if not stack:
                raise ValueError("unbalanced ')'")
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ValueError("unbalanced '('")
    return stack[0]


def sexp_to_str(s: Sexp) -> str:
    if isinstance(s, str):
        return s
    return "(" + " ".join(sexp_to_str(x) for x in s) + ")"


# ---------------------------------------------------------------------------
# Writer


def sort_name(s: Sort) -> str:
    return "Real" if s.is_rational else s.name


def rational_sexp(q: Fraction) -> str:
    if q < 0:
        return f"(- {rational_sexp(-q)})"
    if q.denominator == 1:
        return f"{q.numerator}.0"
    return f"(/ {q.numerator}.0 {q.denominator}.0)"


def var_symbol(v: Var) -> str:
    if v.ann is None:
        return v.name
    return f"{v.name}!{v.ann}"


def term_sexp(t: Term) -> str:
    if isinstance(t, Var):
        return var_symbol(t)
    if isinstance(t, Const):
        return t.decl.name
    if isinstance(t, RatVal):
        return rational_sexp(t.value)
    args = " ".join(term_sexp(a) for a in t.args)
    return f"({t.func.name} {args})"


def _lin_sum(atom: LinAtom) -> str:
    parts = []
    for t, c in atom.coeffs:
        if c == 1:
            parts.append(term_sexp(t))
        else:
            parts.append(f"(* {rational_sexp(c)} {term_sexp(t)})")
    if atom.const != 0 or not parts:
        parts.append(rational_sexp(atom.const))
    if len(parts) == 1:
        return parts[0]
    return "(+ " + " ".join(parts) + ")"


def atom_sexp(a) -> str:
    if isinstance(a, RelAtom):
        if not a.args:
            return a.rel.name
        return f"({a.rel.name} " + " ".join(term_sexp(t) for t in a.args) + ")"
    if isinstance(a, EqAtom):
        return f"(= {term_sexp(a.lhs)} {term_sexp(a.rhs)})"
    op = {"eq": "=", "le": "<=", "lt": "<"}.get(a.op)
    body = _lin_sum(a)
    if op is None:  # ne
        return f"(not (= {body} 0.0))"
    return f"({op} {body} 0.0)"


def formula_sexp(f: Formula) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Lit):
        s = atom_sexp(f.lit.atom)
        return s if f.lit.positive else f"(not {s})"
    if isinstance(f, AndF):
        return "(and " + " ".join(formula_sexp(a) for a in f.args) + ")"
    if isinstance(f, OrF):
        return "(or " + " ".join(formula_sexp(a) for a in f.args) + ")"
    if isinstance(f, NotF):
        return f"(not {formula_sexp(f.arg)})"
    if isinstance(f, Exists):
        binders = " ".join(f"({var_symbol(v)} {sort_name(v.sort)})" for v in f.bound)
        return f"(exists ({binders}) {formula_sexp(f.matrix)})"
    raise TypeError(f"cannot serialize {f!r}")


# ---------------------------------------------------------------------------
# Value parsing (replies to get-value)


def parse_value(s: Sexp):
    """Concrete value from a solver reply: an exact rational or an opaque
    element label."""
    if isinstance(s, str):
        if s in ("true", "false"):
            return s
        q = _numeral(s)
        if q is not None:
            return q
        return s.strip("|")
    if len(s) == 2 and s[0] == "-":
        inner = parse_value(s[1])
        if isinstance(inner, Fraction):
            return -inner
    if len(s) == 3 and s[0] == "/":
        a, b = parse_value(s[1]), parse_value(s[2])
        if isinstance(a, Fraction) and isinstance(b, Fraction):
            return a / b
    if len(s) == 3 and s[0] == "as":  # (as @label Sort)
        return parse_value(s[1])
    return sexp_to_str(s)


def _numeral(tok: str):
    neg = tok.startswith("-")
    body = tok[1:] if neg else tok
    try:
        if "." in body:
            whole, frac = body.split(".", 1)
            denom = 10 ** len(frac) if frac else 1
            num = int(whole or "0") * denom + (int(frac) if frac else 0)
            q = Fraction(num, denom)
        elif "/" in body:
            a, b = body.split("/", 1)
            q = Fraction(int(a), int(b))
        else:
            q = Fraction(int(body))
    except ValueError:
        return None
    return -q if neg else q
