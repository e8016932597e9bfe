"""Theory satisfiability service.

Queries are serialized to SMT-LIB2 text and sent to a solver process over
stdin/stdout (the bundled `dmtcheck-smt` process by default, any compliant
solver via SOLVER_BIN).  An in-process backend that calls the decision
procedure directly is available for tight loops.  Every check is counted and
timed, per phase, for the statistics reports.
"""

from __future__ import annotations

import os
import select
import shlex
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from . import smtlib, theory
from .terms import (
    AndF,
    App,
    Const,
    ConstDecl,
    Constraint,
    EqAtom,
    Exists,
    FalseF,
    Formula,
    LinAtom,
    Lit,
    Literal,
    NotF,
    OrF,
    RatVal,
    RelAtom,
    Signature,
    Sort,
    Term,
    TrueF,
    Var,
    conj,
    free_variables,
    neg,
    nnf,
    to_dnf_constraints,
)

Value = Union[str, Fraction]


class GatewayError(Exception):
    """Solver process failure or protocol violation."""


class InsufficientModel(Exception):
    """A model fragment cannot evaluate a requested term or atom."""


@dataclass(frozen=True)
class TheoryContext:
    """Background theory of a system: its signature, whether rational
    arithmetic is in play, ground database facts, and groups of constants
    declared pairwise distinct."""

    signature: Signature
    arithmetic: str = "none"  # "none" | "lra"
    facts: tuple[Literal, ...] = ()
    distinct: tuple[tuple[ConstDecl, ...], ...] = ()

    def __post_init__(self) -> None:
        for l in self.facts:
            if free_variables(Lit(l)):
                raise ValueError(f"fact {l} is not ground")

    def axioms(self) -> theory.TheoryAxioms:
        return theory.TheoryAxioms(self.facts, self.distinct)


@dataclass
class ModelFragment:
    """Finite slice of a model: enough to evaluate every atom of the checked
    formula.  Evaluation is closed-world on the listed tuples and entries."""

    constant_values: dict[str, Value] = field(default_factory=dict)
    variable_values: dict[Var, Value] = field(default_factory=dict)
    relation_tuples: dict[str, set[tuple[Value, ...]]] = field(default_factory=dict)
    function_entries: dict[str, dict[tuple[Value, ...], Value]] = field(default_factory=dict)
    universe: dict[str, tuple[Value, ...]] = field(default_factory=dict)

    def to_json(self) -> dict:
        def enc(v: Value):
            return str(v) if isinstance(v, Fraction) else v

        return {
            "constants": {k: enc(v) for k, v in sorted(self.constant_values.items())},
            "relations": {
                r: sorted([enc(x) for x in tup] for tup in tups)
                for r, tups in sorted(self.relation_tuples.items())
            },
            "functions": {
                f: [[[enc(a) for a in args], enc(v)] for args, v in sorted(ents.items(), key=str)]
                for f, ents in sorted(self.function_entries.items())
            },
        }


@dataclass
class SatResult:
    verdict: str  # "sat" | "unsat" | "unknown"
    model: Optional[ModelFragment] = None
    diagnostic: str = ""


class SolverStats:
    """Monotone counters for checks and wall time, split by phase."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.checks = 0
        self.wall_time = 0.0
        self.per_phase: dict[str, tuple[int, float]] = {}

    def record(self, phase: str, dt: float) -> None:
        with self._lock:
            self.checks += 1
            self.wall_time += dt
            n, t = self.per_phase.get(phase, (0, 0.0))
            self.per_phase[phase] = (n + 1, t + dt)

    def merge(self, other: "SolverStats") -> None:
        with self._lock:
            self.checks += other.checks
            self.wall_time += other.wall_time
            for ph, (n, t) in other.per_phase.items():
                n0, t0 = self.per_phase.get(ph, (0, 0.0))
                self.per_phase[ph] = (n0 + n, t0 + t)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "checks": self.checks,
                "wall_time": self.wall_time,
                "per_phase": dict(self.per_phase),
            }


@dataclass
class SolverConfig:
    argv: Optional[Sequence[str]] = None
    timeout: float = 10.0
    backend: str = "subprocess"  # "subprocess" | "inproc"

    @staticmethod
    def from_env(**overrides) -> "SolverConfig":
        cfg = SolverConfig(**overrides)
        bin_ = os.environ.get("SOLVER_BIN")
        if bin_ and cfg.argv is None:
            args = shlex.split(os.environ.get("SOLVER_ARGS", ""))
            cfg.argv = [bin_] + args
        if os.environ.get("DMTCHECK_SOLVER") == "inproc":
            cfg.backend = "inproc"
        return cfg

    def resolved_argv(self) -> list[str]:
        if self.argv is not None:
            return list(self.argv)
        return [sys.executable, "-m", "dmtcheck.smtshim"]


DEFAULT_PHASE = "other"


class SmtGateway:
    """One solver conversation bound to one theory context.

    A gateway serves a single caller at a time; spawn one per worker for
    parallel use and merge their stats.
    """

    def __init__(self, ctx: TheoryContext, config: Optional[SolverConfig] = None):
        self.ctx = ctx
        self.config = config or SolverConfig.from_env()
        self.stats = SolverStats()
        self._proc: Optional[subprocess.Popen] = None
        self._buf = b""
        self._inproc: Optional[theory.FormulaSolver] = None
        self._sk_counter = 0

    # -- public operations ---------------------------------------------------

    def check_sat(
        self,
        f: Formula,
        want_model: bool = False,
        phase: str = DEFAULT_PHASE,
        also_evaluate: Iterable[Formula] = (),
    ) -> SatResult:
        t0 = time.perf_counter()
        try:
            if self.config.backend == "inproc":
                res = self._check_inproc(f, want_model, also_evaluate)
            else:
                res = self._check_subprocess(f, want_model, also_evaluate)
        finally:
            self.stats.record(phase, time.perf_counter() - t0)
        return res

    def check_equiv(self, f: Formula, g: Formula, phase: str = DEFAULT_PHASE) -> bool:
        """T-equivalence of two quantifier-free formulas."""
        different = (nnf(f) & neg(g)) | (neg(f) & nnf(g))
        res = self.check_sat(different, phase=phase)
        if res.verdict == "unknown":
            raise GatewayError(f"equivalence check returned unknown: {res.diagnostic}")
        return res.verdict == "unsat"

    def reset_and_stats(self, zero: bool = True) -> SolverStats:
        out = self.stats
        if zero:
            self.stats = SolverStats()
        return out

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.write(b"(exit)\n")
                self._proc.stdin.flush()
            except Exception:
                pass
            self._proc.kill()
            self._proc.wait()
            self._proc = None
        self._buf = b""

    def __enter__(self) -> "SmtGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- in-process backend ----------------------------------------------------

    def _check_inproc(self, f: Formula, want_model: bool, also_evaluate: Iterable[Formula]) -> SatResult:
        if self._inproc is None:
            self._inproc = theory.FormulaSolver(self.ctx.axioms())
        g = nnf(f)
        g, _ = theory.skolemize(g, iter(range(10**9)))
        eval_terms = _query_terms(g, self.ctx, also_evaluate)
        model = self._inproc.check(g, want_model, eval_terms)
        if model is None:
            return SatResult("unsat")
        if not want_model:
            return SatResult("sat")
        atoms = _query_rel_atoms(g, self.ctx)

        def term_value(t: Term) -> Value:
            return model.eval_term(t)

        def atom_truth(a: RelAtom) -> bool:
            vals = tuple(model.eval_term(x) for x in a.args)
            return vals in model.relations.get(a.rel.name, set())

        return SatResult("sat", _assemble_fragment(eval_terms, atoms, term_value, atom_truth))

    # -- subprocess backend ------------------------------------------------------

    def _start(self) -> None:
        argv = self.config.resolved_argv()
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as e:
            raise GatewayError(f"cannot start solver {argv!r}: {e}") from e
        self._buf = b""
        self._send(self._preamble())

    def _preamble(self) -> str:
        out = ["(set-logic ALL)"]
        sig = self.ctx.signature
        for s in sig.sorts:
            if not s.is_rational:
                out.append(f"(declare-sort {s.name} 0)")
        for c in sig.constants:
            out.append(f"(declare-fun {c.name} () {smtlib.sort_name(c.sort)})")
        for fn in sig.functions:
            args = " ".join(smtlib.sort_name(s) for s in fn.arg_sorts)
            out.append(f"(declare-fun {fn.name} ({args}) {smtlib.sort_name(fn.res_sort)})")
        for r in sig.relations:
            args = " ".join(smtlib.sort_name(s) for s in r.arg_sorts)
            out.append(f"(declare-fun {r.name} ({args}) Bool)")
        for l in self.ctx.facts:
            out.append(f"(assert {smtlib.formula_sexp(Lit(l))})")
        for group in self.ctx.distinct:
            if len(group) > 1:
                names = " ".join(d.name for d in group)
                out.append(f"(assert (distinct {names}))")
        return "\n".join(out) + "\n"

    def _send(self, text: str) -> None:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(text.encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self._die()
            raise GatewayError(f"solver process died: {e}") from e

    def _die(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        self._buf = b""

    def _read_line(self, deadline: float) -> str:
        assert self._proc is not None and self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._die()
                raise TimeoutError()
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                self._die()
                raise GatewayError("solver closed its output stream")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode().strip()

    def _read_balanced(self, deadline: float) -> str:
        pieces = []
        depth = 0
        while True:
            line = self._read_line(deadline)
            pieces.append(line)
            depth += line.count("(") - line.count(")")
            if depth <= 0 and any(p.strip() for p in pieces):
                return "\n".join(pieces)

    def _check_subprocess(
        self, f: Formula, want_model: bool, also_evaluate: Iterable[Formula]
    ) -> SatResult:
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        g = nnf(f)
        g, _ = theory.skolemize(g, iter(self._fresh_sk()))
        decls = []
        seen: set[str] = set()
        for v in sorted(free_variables(g), key=str):
            sym = smtlib.var_symbol(v)
            if sym not in seen:
                seen.add(sym)
                decls.append(f"(declare-fun {sym} () {smtlib.sort_name(v.sort)})")
        for t in theory.formula_terms(g):
            if isinstance(t, Const) and t.decl.name.startswith("@sk_"):
                if t.decl.name not in seen:
                    seen.add(t.decl.name)
                    decls.append(f"(declare-fun {t.decl.name} () {smtlib.sort_name(t.decl.sort)})")
        cmd = "(push 1)\n" + "\n".join(decls)
        cmd += f"\n(assert {smtlib.formula_sexp(g)})\n(check-sat)\n"
        deadline = time.monotonic() + self.config.timeout
        try:
            self._send(cmd)
            verdict = self._expect_verdict(deadline)
        except TimeoutError:
            return SatResult("unknown", None, f"solver timeout after {self.config.timeout}s")
        if verdict != "sat" or not want_model:
            self._send("(pop 1)\n")
            return SatResult(verdict)

        eval_terms = _query_terms(g, self.ctx, also_evaluate)
        atoms = _query_rel_atoms(g, self.ctx)
        items = [smtlib.term_sexp(t) for t in eval_terms] + [smtlib.atom_sexp(a) for a in atoms]
        values: list = []
        if items:
            self._send(f"(get-value ({' '.join(items)}))\n")
            try:
                reply = self._read_balanced(deadline)
            except TimeoutError:
                return SatResult("unknown", None, "timeout while reading model")
            sexps = smtlib.parse_sexps(reply)
            if not sexps or isinstance(sexps[0], str):
                raise GatewayError(f"malformed get-value reply: {reply!r}")
            if sexps[0] and sexps[0][0] == "error":
                raise GatewayError(f"solver error: {reply}")
            values = [smtlib.parse_value(pair[1]) for pair in sexps[0]]
            if len(values) != len(items):
                raise GatewayError("get-value reply arity mismatch")
        self._send("(pop 1)\n")

        tvals = dict(zip(eval_terms, values[: len(eval_terms)]))
        avals = dict(zip(atoms, values[len(eval_terms) :]))

        def term_value(t: Term) -> Value:
            return tvals[t]

        def atom_truth(a: RelAtom) -> bool:
            return avals[a] == "true"

        return SatResult("sat", _assemble_fragment(eval_terms, atoms, term_value, atom_truth))

    def _expect_verdict(self, deadline: float) -> str:
        while True:
            line = self._read_line(deadline)
            if line in ("sat", "unsat", "unknown"):
                return line
            if line.startswith("(error") or line.startswith("error"):
                self._die()
                raise GatewayError(f"solver error: {line}")
            if not line:
                continue
            # tolerate chatter such as success markers
            if line == "success":
                continue
            self._die()
            raise GatewayError(f"unexpected solver output: {line!r}")

    def _fresh_sk(self):
        while True:
            self._sk_counter += 1
            yield self._sk_counter


# ---------------------------------------------------------------------------
# Fragment assembly and evaluation


def _query_terms(g: Formula, ctx: TheoryContext, also_evaluate: Iterable[Formula]) -> list[Term]:
    terms = theory.formula_terms(g)
    seen = set(terms)

    def add(t: Term) -> None:
        if t not in seen:
            seen.add(t)
            terms.append(t)

    for l in ctx.facts:
        for t in theory.formula_terms(Lit(l)):
            add(t)
    for group in ctx.distinct:
        for d in group:
            add(Const(d))
    for extra in also_evaluate:
        for t in theory.formula_terms(extra):
            add(t)
    # keep only terms whose variables the model interprets (this drops terms
    # that mention bound variables of the extra formulas)
    interpreted = free_variables(g)
    return [t for t in terms if _term_vars_all(t) <= interpreted]


def _term_vars_all(t: Term) -> set[Var]:
    from .terms import term_vars

    return term_vars(t)


def _query_rel_atoms(g: Formula, ctx: TheoryContext) -> list[RelAtom]:
    atoms = theory.formula_rel_atoms(g)
    for l in ctx.facts:
        if isinstance(l.atom, RelAtom) and l.atom not in atoms:
            atoms.append(l.atom)
    return atoms


def _assemble_fragment(terms, atoms, term_value, atom_truth) -> ModelFragment:
    frag = ModelFragment()
    universe: dict[str, list[Value]] = {}

    def note(sort: Sort, v: Value) -> None:
        vals = universe.setdefault(sort.name, [])
        if v not in vals:
            vals.append(v)

    for t in terms:
        v = term_value(t)
        note(t.sort, v)
        if isinstance(t, Const):
            frag.constant_values[t.decl.name] = v
        elif isinstance(t, Var):
            frag.variable_values[t] = v
        elif isinstance(t, App):
            args = tuple(term_value(a) for a in t.args)
            frag.function_entries.setdefault(t.func.name, {})[args] = v
    for a in atoms:
        tups = frag.relation_tuples.setdefault(a.rel.name, set())
        if atom_truth(a):
            tups.add(tuple(term_value(x) for x in a.args))
    frag.universe = {k: tuple(vs) for k, vs in universe.items()}
    return frag


_SINK_PREFIX = "@!sink_"


def eval_term(frag: ModelFragment, t: Term, env: dict[Var, Value]) -> Value:
    if isinstance(t, Var):
        if t in env:
            return env[t]
        if t in frag.variable_values:
            return frag.variable_values[t]
        raise InsufficientModel(f"no value for variable {t}")
    if isinstance(t, Const):
        if t.decl.name in frag.constant_values:
            return frag.constant_values[t.decl.name]
        raise InsufficientModel(f"no value for constant {t}")
    if isinstance(t, RatVal):
        return t.value
    args = tuple(eval_term(frag, a, env) for a in t.args)
    table = frag.function_entries.get(t.func.name, {})
    if args in table:
        return table[args]
    # closed-world completion: unlisted entries map to a sink element (zero
    # for rational results)
    if t.func.res_sort.is_rational:
        return Fraction(0)
    return _SINK_PREFIX + t.func.res_sort.name


def _eval_atom(frag: ModelFragment, lit: Literal, env: dict[Var, Value]) -> bool:
    a = lit.atom
    if isinstance(a, RelAtom):
        vals = tuple(eval_term(frag, t, env) for t in a.args)
        holds = vals in frag.relation_tuples.get(a.rel.name, set())
        return holds == lit.positive
    if isinstance(a, EqAtom):
        holds = eval_term(frag, a.lhs, env) == eval_term(frag, a.rhs, env)
        return holds == lit.positive
    total = a.const
    for t, c in a.coeffs:
        v = eval_term(frag, t, env)
        if not isinstance(v, Fraction):
            raise InsufficientModel(f"non-rational value {v} in arithmetic atom")
        total += c * v
    if a.op == "eq":
        return total == 0
    if a.op == "ne":
        return total != 0
    if a.op == "le":
        return total <= 0
    return total < 0


def evaluate(frag: ModelFragment, f: Union[Formula, Constraint], env: dict[Var, Value]) -> bool:
    """Truth of a formula in the closed-world completion of the fragment."""
    if isinstance(f, Constraint):
        return evaluate(frag, f.formula(), env)
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, Lit):
        return _eval_atom(frag, f.lit, env)
    if isinstance(f, AndF):
        return all(evaluate(frag, a, env) for a in f.args)
    if isinstance(f, OrF):
        return any(evaluate(frag, a, env) for a in f.args)
    if isinstance(f, NotF):
        return not evaluate(frag, f.arg, env)
    if isinstance(f, Exists):
        return any(_eval_exists_cube(frag, c, env) for c in to_dnf_constraints(f))
    raise TypeError(f"cannot evaluate {f!r}")


def _eval_exists_cube(frag: ModelFragment, c: Constraint, env: dict[Var, Value]) -> bool:
    """Existential over a cube: enumerate candidates for uninterpreted bound
    variables (and rational ones pinned by relation tuples), then decide the
    purely arithmetic remainder by projection."""
    enum_vars: list[Var] = []
    fm_vars: list[Var] = []
    for v in c.bound:
        if v.sort.is_rational and not _occurs_outside_linatoms(c, v):
            fm_vars.append(v)
        else:
            enum_vars.append(v)

    def candidates(v: Var) -> list[Value]:
        vals = list(frag.universe.get(v.sort.name, ()))
        if not v.sort.is_rational:
            sink = _SINK_PREFIX + v.sort.name
            if sink not in vals:
                vals.append(sink)
        return vals

    def try_assign(i: int, env2: dict[Var, Value]) -> bool:
        if i == len(enum_vars):
            return _decide_remainder(frag, c, env2, fm_vars)
        for val in candidates(enum_vars[i]):
            if try_assign(i + 1, {**env2, enum_vars[i]: val}):
                return True
        return False

    return try_assign(0, dict(env))


def _occurs_outside_linatoms(c: Constraint, v: Var) -> bool:
    from .terms import atom_vars

    for l in c.literals:
        if isinstance(l.atom, LinAtom):
            # v must occur directly, not under a function, for the projection
            for t, _ in l.atom.coeffs:
                if t == v:
                    continue
                if v in _term_vars_all(t):
                    return True
        elif v in atom_vars(l.atom):
            return True
    return False


def _decide_remainder(frag: ModelFragment, c: Constraint, env: dict[Var, Value], fm_vars: list[Var]) -> bool:
    rows: list[theory.Row] = []
    splits: list[tuple[dict, Fraction]] = []
    for l in c.literals:
        a = l.atom
        if isinstance(a, LinAtom) and any(v in fm_vars for t, _ in a.coeffs for v in _term_vars_all(t)):
            coeffs: dict = {}
            const = a.const
            for t, coef in a.coeffs:
                if isinstance(t, Var) and t in fm_vars:
                    coeffs[t] = coeffs.get(t, Fraction(0)) + coef
                else:
                    v = eval_term(frag, t, env)
                    if not isinstance(v, Fraction):
                        raise InsufficientModel(f"non-rational value in {a}")
                    const += coef * v
            if a.op == "ne":
                splits.append((coeffs, const))
            else:
                rows.append(theory.make_row(coeffs, const, a.op))
        else:
            if not _eval_atom(frag, l, env):
                return False

    def feasible(i: int, acc: list[theory.Row]) -> bool:
        if i == len(splits):
            return theory.fm_eliminate_rows(acc, fm_vars) is not None
        coeffs, const = splits[i]
        lt = theory.make_row(coeffs, const, "lt")
        gt = theory.make_row({k: -x for k, x in coeffs.items()}, -const, "lt")
        return feasible(i + 1, acc + [lt]) or feasible(i + 1, acc + [gt])

    return feasible(0, rows)
