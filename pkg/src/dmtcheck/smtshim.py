"""SMT-LIB2 server on stdin/stdout backed by the internal decision
procedure.  Used as the default solver process; any SMT-LIB2-compliant
solver can replace it via SOLVER_BIN.

Supported commands: set-logic, set-option, set-info, declare-sort,
declare-fun, declare-const, assert, push, pop, check-sat, get-value, echo,
reset, exit.
"""

from __future__ import annotations

import sys
from fractions import Fraction
from typing import Optional, Union

from . import smtlib
from .terms import (
    App,
    Const,
    ConstDecl,
    EqAtom,
    Exists,
    FalseF,
    Formula,
    FuncDecl,
    NotF,
    RatVal,
    RelAtom,
    RelDecl,
    Sort,
    RAT,
    Term,
    TRUE,
    FALSE,
    Var,
    conj,
    disj,
    lin_atom,
    lit,
)
from .theory import FormulaSolver, InternalModel, TheoryAxioms

Sexp = smtlib.Sexp


class ShimError(Exception):
    pass


class Frame:
    def __init__(self) -> None:
        self.assertions: list[Formula] = []
        self.decls: list[str] = []


class Session:
    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.sorts: dict[str, Sort] = {"Real": RAT}
        self.symbols: dict[str, tuple] = {}
        self.frames: list[Frame] = [Frame()]
        self.model: Optional[InternalModel] = None
        self.last_verdict: Optional[str] = None
        self.version = 0
        self.model_version = -1

    # -- declarations ---------------------------------------------------------

    def declare_sort(self, name: str) -> None:
        if name not in self.sorts:
            self.sorts[name] = Sort(name)
            self.frames[-1].decls.append("sort:" + name)

    def declare_fun(self, name: str, arg_sorts: list[str], res: str) -> None:
        args = tuple(self._sort(s) for s in arg_sorts)
        if res == "Bool":
            self.symbols[name] = ("rel", RelDecl(name, args))
        elif not args:
            self.symbols[name] = ("const", ConstDecl(name, self._sort(res)))
        else:
            self.symbols[name] = ("fun", FuncDecl(name, args, self._sort(res)))
        self.frames[-1].decls.append("sym:" + name)

    def _sort(self, name: str) -> Sort:
        if name not in self.sorts:
            raise ShimError(f"unknown sort {name}")
        return self.sorts[name]

    # -- stack ---------------------------------------------------------------

    def push(self, n: int) -> None:
        for _ in range(n):
            self.frames.append(Frame())
        self.version += 1

    def pop(self, n: int) -> None:
        for _ in range(n):
            if len(self.frames) == 1:
                raise ShimError("pop on empty stack")
            frame = self.frames.pop()
            for d in frame.decls:
                kind, name = d.split(":", 1)
                if kind == "sort":
                    self.sorts.pop(name, None)
                else:
                    self.symbols.pop(name, None)
        self.version += 1

    def add_assertion(self, f: Formula) -> None:
        self.frames[-1].assertions.append(f)
        self.version += 1

    def all_assertions(self) -> list[Formula]:
        out = []
        for fr in self.frames:
            out.extend(fr.assertions)
        return out

    # -- solving ---------------------------------------------------------------

    def check_sat(self) -> str:
        solver = FormulaSolver(TheoryAxioms())
        f = conj(self.all_assertions())
        res = solver.check(f, want_model=False)
        self.last_verdict = "sat" if res is not None else "unsat"
        self.model = None
        self.model_version = -1
        return self.last_verdict

    def model_for_values(self) -> InternalModel:
        if self.last_verdict != "sat":
            raise ShimError("no model available: last check was not sat")
        if self.model is not None and self.model_version == self.version:
            return self.model
        solver = FormulaSolver(TheoryAxioms())
        f = conj(self.all_assertions())
        extra = _collect_terms(self.all_assertions())
        model = solver.check(f, want_model=True, extra_terms=extra)
        if model is None:
            raise ShimError("assertions became unsatisfiable")
        self.model = model
        self.model_version = self.version
        return model

    # -- term and formula parsing ----------------------------------------------

    def parse_formula(self, s: Sexp, env: dict[str, Var]) -> Formula:
        if isinstance(s, str):
            if s == "true":
                return TRUE
            if s == "false":
                return FALSE
            kind = self.symbols.get(s)
            if kind and kind[0] == "rel":
                return lit(RelAtom(kind[1], ()))
            raise ShimError(f"not a formula: {s}")
        if not s:
            raise ShimError("empty application")
        head = s[0]
        if head == "and":
            return conj([self.parse_formula(x, env) for x in s[1:]])
        if head == "or":
            return disj([self.parse_formula(x, env) for x in s[1:]])
        if head == "not":
            return NotF(self.parse_formula(s[1], env))
        if head == "xor":
            a, b = (self.parse_formula(x, env) for x in s[1:3])
            return (a & NotF(b)) | (NotF(a) & b)
        if head == "=>":
            a, b = (self.parse_formula(x, env) for x in s[1:3])
            return NotF(a) | b
        if head == "exists":
            bound = []
            env2 = dict(env)
            for pair in s[1]:
                name, sortname = pair[0], pair[1]
                base, _ = _unmangle(name)
                v = Var(base, self._sort(sortname))
                bound.append(v)
                env2[name] = v
            return Exists(tuple(bound), self.parse_formula(s[2], env2))
        if head == "distinct":
            parts = []
            for i in range(1, len(s)):
                for j in range(i + 1, len(s)):
                    parts.append(self._equality(s[i], s[j], env, positive=False))
            return conj(parts)
        if head == "=":
            if self._is_formula(s[1]):
                a, b = (self.parse_formula(x, env) for x in s[1:3])
                return (a & b) | (NotF(a) & NotF(b))
            return self._equality(s[1], s[2], env, positive=True)
        if head in ("<=", "<", ">=", ">"):
            op = {"<=": "le", "<": "lt", ">=": "ge", ">": "gt"}[head]
            lc, lk = self.parse_arith(s[1], env)
            rc, rk = self.parse_arith(s[2], env)
            for t, c in rc.items():
                lc[t] = lc.get(t, Fraction(0)) - c
            atom = lin_atom(lc, lk - rk, op)
            if isinstance(atom, bool):
                return TRUE if atom else FALSE
            return lit(atom)
        kind = self.symbols.get(head)
        if kind and kind[0] == "rel":
            args = tuple(self.parse_term(x, env) for x in s[1:])
            return lit(RelAtom(kind[1], args))
        raise ShimError(f"not a formula: {smtlib.sexp_to_str(s)}")

    def _is_formula(self, s: Sexp) -> bool:
        if isinstance(s, str):
            if s in ("true", "false"):
                return True
            kind = self.symbols.get(s)
            return bool(kind and kind[0] == "rel")
        head = s[0] if s else ""
        if head in ("and", "or", "not", "xor", "=>", "exists", "distinct", "=", "<=", "<", ">=", ">"):
            return True
        kind = self.symbols.get(head) if isinstance(head, str) else None
        return bool(kind and kind[0] == "rel")

    def _sexp_sort(self, s: Sexp, env: dict[str, Var]) -> Sort:
        if isinstance(s, str):
            if s in env:
                return env[s].sort
            if smtlib._numeral(s) is not None:
                return RAT
            kind = self.symbols.get(s)
            if kind and kind[0] == "const":
                return kind[1].sort
            raise ShimError(f"unknown symbol {s}")
        head = s[0]
        if head in ("+", "-", "*", "/"):
            return RAT
        kind = self.symbols.get(head)
        if kind and kind[0] == "fun":
            return kind[1].res_sort
        raise ShimError(f"cannot type {smtlib.sexp_to_str(s)}")

    def _equality(self, a: Sexp, b: Sexp, env: dict[str, Var], positive: bool) -> Formula:
        if self._sexp_sort(a, env).is_rational:
            lc, lk = self.parse_arith(a, env)
            rc, rk = self.parse_arith(b, env)
            for t, c in rc.items():
                lc[t] = lc.get(t, Fraction(0)) - c
            atom = lin_atom(lc, lk - rk, "eq" if positive else "ne")
            if isinstance(atom, bool):
                return TRUE if atom else FALSE
            return lit(atom)
        ta = self.parse_term(a, env)
        tb = self.parse_term(b, env)
        if ta == tb:
            return TRUE if positive else FALSE
        return lit(EqAtom(ta, tb).ordered(), positive)

    def parse_term(self, s: Sexp, env: dict[str, Var]) -> Term:
        if isinstance(s, str):
            if s in env:
                return env[s]
            q = smtlib._numeral(s)
            if q is not None:
                return RatVal(q)
            kind = self.symbols.get(s)
            if kind is None:
                # free symbols arrive as 0-ary declarations; mangled variable
                # names keep their annotation after '!'
                raise ShimError(f"unknown symbol {s}")
            if kind[0] == "const":
                return Const(kind[1])
            raise ShimError(f"{s} is not a term")
        head = s[0]
        if head in ("-", "+", "*", "/"):
            coeffs, const = self.parse_arith(s, env)
            if not coeffs:
                return RatVal(const)
            if len(coeffs) == 1 and const == 0:
                (t, c), = coeffs.items()
                if c == 1:
                    return t
            raise ShimError(f"compound arithmetic term in non-arith position: {smtlib.sexp_to_str(s)}")
        kind = self.symbols.get(head)
        if kind and kind[0] == "fun":
            args = tuple(self.parse_term(x, env) for x in s[1:])
            return App(kind[1], args)
        raise ShimError(f"not a term: {smtlib.sexp_to_str(s)}")

    def parse_arith(self, s: Sexp, env: dict[str, Var]) -> tuple[dict[Term, Fraction], Fraction]:
        if isinstance(s, str):
            q = smtlib._numeral(s)
            if q is not None:
                return {}, q
            t = self.parse_term(s, env)
            if not t.sort.is_rational:
                raise ShimError(f"non-rational term {s} in arithmetic")
            if isinstance(t, RatVal):
                return {}, t.value
            return {t: Fraction(1)}, Fraction(0)
        head = s[0]
        if head == "+":
            coeffs: dict[Term, Fraction] = {}
            const = Fraction(0)
            for x in s[1:]:
                c2, k2 = self.parse_arith(x, env)
                for t, c in c2.items():
                    coeffs[t] = coeffs.get(t, Fraction(0)) + c
                const += k2
            return coeffs, const
        if head == "-":
            if len(s) == 2:
                c2, k2 = self.parse_arith(s[1], env)
                return {t: -c for t, c in c2.items()}, -k2
            coeffs, const = self.parse_arith(s[1], env)
            for x in s[2:]:
                c2, k2 = self.parse_arith(x, env)
                for t, c in c2.items():
                    coeffs[t] = coeffs.get(t, Fraction(0)) - c
                const -= k2
            return coeffs, const
        if head == "*":
            sides = [self.parse_arith(x, env) for x in s[1:]]
            out = sides[0]
            for c2, k2 in sides[1:]:
                if not out[0]:
                    out = ({t: c * out[1] for t, c in c2.items()}, k2 * out[1])
                elif not c2:
                    out = ({t: c * k2 for t, c in out[0].items()}, out[1] * k2)
                else:
                    raise ShimError("nonlinear product")
            return out
        if head == "/":
            c1, k1 = self.parse_arith(s[1], env)
            c2, k2 = self.parse_arith(s[2], env)
            if c2 or k2 == 0:
                raise ShimError("division by a non-constant")
            return {t: c / k2 for t, c in c1.items()}, k1 / k2
        t = self.parse_term(s, env)
        if not t.sort.is_rational:
            raise ShimError(f"non-rational term in arithmetic: {smtlib.sexp_to_str(s)}")
        return {t: Fraction(1)}, Fraction(0)

    # -- value formatting --------------------------------------------------------

    def eval_sexp(self, s: Sexp) -> str:
        model = self.model_for_values()
        if self._is_formula(s) and not (isinstance(s, str) and smtlib._numeral(s) is not None):
            f = self.parse_formula(s, {})
            value = self._eval_formula_in_model(f, model)
            return "true" if value else "false"
        t = self.parse_term(s, {})
        return _format_value(model.eval_term(t))

    def _eval_formula_in_model(self, f: Formula, model: InternalModel) -> bool:
        from .terms import AndF, Lit, OrF, TrueF, FalseF

        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, NotF):
            return not self._eval_formula_in_model(f.arg, model)
        if isinstance(f, AndF):
            return all(self._eval_formula_in_model(a, model) for a in f.args)
        if isinstance(f, OrF):
            return any(self._eval_formula_in_model(a, model) for a in f.args)
        if isinstance(f, Lit):
            a = f.lit.atom
            if isinstance(a, RelAtom):
                vals = tuple(model.eval_term(t) for t in a.args)
                holds = vals in model.relations.get(a.rel.name, set())
                return holds == f.lit.positive
            if isinstance(a, EqAtom):
                holds = model.eval_term(a.lhs) == model.eval_term(a.rhs)
                return holds == f.lit.positive
            total = a.const
            for t, c in a.coeffs:
                v = model.eval_term(t)
                assert isinstance(v, Fraction)
                total += c * v
            return {"eq": total == 0, "ne": total != 0, "le": total <= 0, "lt": total < 0}[a.op]
        raise ShimError(f"cannot evaluate {f}")


def _unmangle(name: str):
    if "!" in name:
        base, ann = name.rsplit("!", 1)
        if ann in ("r", "w"):
            return base, ann
        if ann.isdigit():
            return base, int(ann)
    return name, None


def _collect_terms(assertions: list[Formula]) -> list[Term]:
    from .theory import formula_terms

    out: list[Term] = []
    seen: set[Term] = set()
    for f in assertions:
        for t in formula_terms(f):
            if t not in seen:
                seen.add(t)
                out.append(t)
    return out


def _format_value(v) -> str:
    if isinstance(v, Fraction):
        return smtlib.rational_sexp(v)
    return str(v)


_EXIT = object()


def main(argv: Optional[list[str]] = None) -> int:
    session = Session()
    out = sys.stdout
    buf = ""
    for line in iter(sys.stdin.readline, ""):
        buf += line
        try:
            cmds = smtlib.parse_sexps(buf)
        except ValueError:
            continue  # incomplete input, keep buffering
        buf = ""
        for cmd in cmds:
            try:
                reply = _dispatch(session, cmd)
            except Exception as e:  # noqa: BLE001 - protocol boundary
                reply = f'(error "{type(e).__name__}: {e}")'
            if reply is _EXIT:
                return 0
            if reply is not None:
                out.write(reply + "\n")
                out.flush()
    return 0


def _dispatch(session: Session, cmd: Sexp) -> Optional[str]:
    if isinstance(cmd, str) or not cmd:
        raise ShimError(f"bad command: {cmd}")
    head = cmd[0]
    if head in ("set-logic", "set-option", "set-info"):
        return None
    if head == "echo":
        return str(cmd[1]).strip('"')
    if head == "reset":
        session.reset()
        return None
    if head == "exit":
        return _EXIT
    if head == "declare-sort":
        session.declare_sort(cmd[1])
        return None
    if head == "declare-fun":
        session.declare_fun(cmd[1], list(cmd[2]), cmd[3])
        return None
    if head == "declare-const":
        session.declare_fun(cmd[1], [], cmd[2])
        return None
    if head == "assert":
        session.add_assertion(session.parse_formula(cmd[1], {}))
        return None
    if head == "push":
        session.push(int(cmd[1]) if len(cmd) > 1 else 1)
        return None
    if head == "pop":
        session.pop(int(cmd[1]) if len(cmd) > 1 else 1)
        return None
    if head == "check-sat":
        return session.check_sat()
    if head == "get-value":
        pairs = []
        for item in cmd[1]:
            pairs.append(f"({smtlib.sexp_to_str(item)} {session.eval_sexp(item)})")
        return "(" + " ".join(pairs) + ")"
    raise ShimError(f"unsupported command {head}")


if __name__ == "__main__":
    sys.exit(main())
