"""Command line frontend: verify, classify, bench and dump.

Exit codes for verify: 0 witness found, 1 no witness, 2 budget exceeded,
3 input error.  Solver selection: --config file, then SOLVER_BIN and
SOLVER_ARGS in the environment, then the bundled solver process."""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import sys
import time
from pathlib import Path
from typing import Optional

from .analyzer import ClassReport, classify
from .gateway import SmtGateway, SolverConfig
from .ltlf import build_nfa, nfa_to_dot, simplify_nfa
from .parsing import ParseError, parse_property, parse_system
from .product import Budget, Verdict, expand
from .system import DMT, Run

EXIT_WITNESS = 0
EXIT_NO_WITNESS = 1
EXIT_BUDGET = 2
EXIT_INPUT = 3


def load_config(path: Optional[str]) -> dict:
    out: dict = {}
    if not path:
        return out
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read config {path}: {e}")
    for idx, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {idx}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def solver_config(args, cfg: dict) -> SolverConfig:
    argv = None
    if cfg.get("solver_bin"):
        argv = [cfg["solver_bin"]] + shlex.split(cfg.get("solver_args", ""))
    if os.environ.get("SOLVER_BIN"):
        argv = [os.environ["SOLVER_BIN"]] + shlex.split(os.environ.get("SOLVER_ARGS", ""))
    if getattr(args, "solver", None):
        argv = shlex.split(args.solver)
    timeout = float(cfg.get("timeout", 10.0))
    if getattr(args, "solver_timeout", None) is not None:
        timeout = args.solver_timeout
    backend = cfg.get("backend", "subprocess")
    if os.environ.get("DMTCHECK_SOLVER") == "inproc":
        backend = "inproc"
    if getattr(args, "backend", None):
        backend = args.backend
    return SolverConfig(argv=argv, timeout=timeout, backend=backend)


def budget_from(args, cfg: dict) -> Budget:
    nodes = int(cfg.get("budget_nodes", 10000))
    seconds = float(cfg.get("budget_time", 60.0))
    if args.budget_nodes is not None:
        nodes = args.budget_nodes
    if args.budget_time is not None:
        seconds = args.budget_time
    return Budget(
        max_nodes=nodes,
        max_seconds=seconds,
        exhaustive=getattr(args, "exhaustive", False),
        merge=not getattr(args, "no_merge", False),
    )


def _load(spec_path: str, prop_path: Optional[str]):
    try:
        d = parse_system(Path(spec_path).read_text())
    except (OSError, ParseError) as e:
        raise SystemExit(_input_error(f"{spec_path}: {e}"))
    psi = None
    if prop_path is not None:
        try:
            psi = parse_property(Path(prop_path).read_text(), d)
        except (OSError, ParseError) as e:
            raise SystemExit(_input_error(f"{prop_path}: {e}"))
    return d, psi


def _input_error(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


def run_to_json(d: DMT, run: Run) -> list[dict]:
    trace = []
    for i, a in enumerate(run.assignments):
        entry = {
            "transition": run.transitions[i - 1] if i > 0 else None,
            "assignment": {v.name: run.display_value(a[v]) for v in sorted(a, key=str)},
        }
        trace.append(entry)
    return trace


def verdict_to_json(d: DMT, property_text: str, verdict: Verdict, stats: dict) -> dict:
    out = {
        "outcome": verdict.outcome,
        "property": property_text,
        "trace": run_to_json(d, verdict.witness) if verdict.witness else None,
        "modelFacts": verdict.witness.model.to_json() if verdict.witness else None,
        "stats": {
            "nodes": verdict.nodes,
            "edges": verdict.edges,
            "smtChecks": stats["checks"],
            "smtWallTime": round(stats["wall_time"], 6),
            "perPhase": {
                k: {"checks": n, "wallTime": round(t, 6)} for k, (n, t) in sorted(stats["per_phase"].items())
            },
        },
    }
    if verdict.diagnostic:
        out["diagnostic"] = verdict.diagnostic
    return out


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    d, psi = _load(args.spec, args.prop)
    assert psi is not None
    budget = budget_from(args, cfg)
    with SmtGateway(d.ctx, solver_config(args, cfg)) as gw:
        nfa = simplify_nfa(build_nfa(psi, d.ctx, gw), d.ctx)
        verdict, graph = expand(d, nfa, psi, budget, gw)
        stats = gw.stats.snapshot()
    doc = verdict_to_json(d, Path(args.prop).read_text().strip(), verdict, stats)
    text = json.dumps(doc, indent=2)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(f"outcome: {verdict.outcome}")
    if verdict.witness is not None:
        print("witness:", verdict.witness.pretty())
    if verdict.diagnostic:
        print("diagnostic:", verdict.diagnostic)
    print(f"nodes: {verdict.nodes}  edges: {verdict.edges}  smt checks: {stats['checks']}")
    if not args.json:
        print(text)
    if args.dot:
        Path(args.dot).write_text(graph.to_dot() + "\n")
    return {
        "witnessFound": EXIT_WITNESS,
        "noWitness": EXIT_NO_WITNESS,
        "budgetExceeded": EXIT_BUDGET,
    }[verdict.outcome]


def cmd_classify(args) -> int:
    cfg = load_config(args.config)
    d, psi = _load(args.spec, args.prop)
    assert psi is not None
    with SmtGateway(d.ctx, solver_config(args, cfg)) as gw:
        report = classify(
            d,
            psi,
            k=args.k,
            depth=args.depth,
            locally_finite_asserted=args.locally_finite,
            probe_lookback=not args.no_probe,
            gateway=gw,
            jobs=args.jobs,
        )
    doc = report.to_json()
    text = json.dumps(doc, indent=2)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return 0


def cmd_dump(args) -> int:
    cfg = load_config(args.config)
    d, psi = _load(args.spec, args.prop)
    assert psi is not None
    with SmtGateway(d.ctx, solver_config(args, cfg)) as gw:
        nfa = simplify_nfa(build_nfa(psi, d.ctx, gw), d.ctx)
        if args.what == "nfa":
            dot = nfa_to_dot(nfa)
        else:
            budget = budget_from(args, cfg)
            budget.exhaustive = True
            verdict, graph = expand(d, nfa, psi, budget, gw)
            if verdict.outcome == "budgetExceeded":
                print(f"warning: product incomplete: {verdict.diagnostic}", file=sys.stderr)
            dot = graph.to_dot()
    if args.dot:
        Path(args.dot).write_text(dot + "\n")
    else:
        print(dot)
    return 0


def _guard_size(d: DMT) -> int:
    return sum(len(t.guard.literals) for t in d.transitions)


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    root = Path(args.dir)
    if not root.is_dir():
        return _input_error(f"{root} is not a directory")
    rows = []
    for bundle in sorted(p for p in root.iterdir() if p.is_dir()):
        specs = sorted(bundle.glob("*.spec"))
        props = sorted(bundle.glob("*.prop"))
        if not specs or not props:
            continue
        try:
            d = parse_system(specs[0].read_text())
        except ParseError as e:
            print(f"error: {specs[0]}: {e}", file=sys.stderr)
            continue
        times: list[float] = []
        checks: list[int] = []
        outcomes: list[str] = []
        cls = "?"
        for prop_path in props:
            try:
                psi = parse_property(prop_path.read_text(), d)
            except ParseError as e:
                print(f"error: {prop_path}: {e}", file=sys.stderr)
                continue
            with SmtGateway(d.ctx, solver_config(args, cfg)) as gw:
                t0 = time.perf_counter()
                nfa = simplify_nfa(build_nfa(psi, d.ctx, gw), d.ctx)
                verdict, _ = expand(d, nfa, psi, budget_from(args, cfg), gw)
                dt = time.perf_counter() - t0
                stats = gw.stats.snapshot()
            times.append(dt)
            checks.append(stats["checks"])
            outcomes.append(verdict.outcome)
            if cls == "?":
                with SmtGateway(d.ctx, solver_config(args, cfg)) as gw2:
                    rep = classify(d, psi, k=args.k, depth=args.depth, gateway=gw2,
                                   probe_lookback=not args.no_probe)
                cls = rep.decidable_class
        if not times:
            continue
        sig = d.signature
        rows.append(
            {
                "problem": bundle.name,
                "class": cls,
                "T": len(d.transitions),
                "D": _guard_size(d),
                "R": len(sig.relations),
                "F": len(sig.functions),
                "C": len(sig.constants),
                "time_total": sum(times),
                "time_avg": sum(times) / len(times),
                "time_max": max(times),
                "checks_total": sum(checks),
                "checks_avg": sum(checks) // len(checks),
                "checks_max": max(checks),
                "outcomes": ",".join(o[0] for o in outcomes),
            }
        )
    _print_bench(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["problem"])
            writer.writeheader()
            for r in rows:
                writer.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in r.items()})
    return 0


def _print_bench(rows: list[dict]) -> None:
    header = f"{'problem':<22} {'cls':<4} {'T':>3} {'D':>4} {'R/F/C':>8} {'time tot/avg/max':>22} {'checks tot/avg/max':>22}"
    print(header)
    print("-" * len(header))
    for r in rows:
        rfc = f"{r['R']}/{r['F']}/{r['C']}"
        t = f"{r['time_total']:.2f}/{r['time_avg']:.2f}/{r['time_max']:.2f}"
        c = f"{r['checks_total']}/{r['checks_avg']}/{r['checks_max']}"
        print(f"{r['problem']:<22} {r['class']:<4} {r['T']:>3} {r['D']:>4} {rfc:>8} {t:>22} {c:>22}")


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="dmtcheck", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_prop=True):
        p.add_argument("spec", help="system file")
        if with_prop:
            p.add_argument("prop", help="property file")
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--solver", help="solver command line (overrides SOLVER_BIN)")
        p.add_argument("--solver-timeout", type=float, help="per-query timeout in seconds")
        p.add_argument("--backend", choices=["subprocess", "inproc"], help="solver backend")
        p.add_argument("--jobs", type=int, default=1, help="worker count for probes")

    pv = sub.add_parser("verify", help="search for a witness run")
    common(pv)
    pv.add_argument("--budget-nodes", type=int, help="node budget for the product")
    pv.add_argument("--budget-time", type=float, help="wall time budget in seconds")
    pv.add_argument("--exhaustive", action="store_true", help="build the full finite product")
    pv.add_argument("--no-merge", action="store_true", help="disable equivalence-based node merging")
    pv.add_argument("--dot", help="write the product graph here")
    pv.add_argument("--json", help="write the verdict document here")
    pv.set_defaults(func=cmd_verify)

    pc = sub.add_parser("classify", help="report decidability-class membership")
    common(pc)
    pc.add_argument("--k", type=int, default=5, help="lookback bound to probe")
    pc.add_argument("--depth", type=int, default=6, help="probe exploration depth")
    pc.add_argument("--locally-finite", action="store_true",
                    help="assert that the background theory is locally finite")
    pc.add_argument("--no-probe", action="store_true", help="skip the lookback probe")
    pc.add_argument("--json", help="write the report here")
    pc.set_defaults(func=cmd_classify)

    pd = sub.add_parser("dump", help="emit a graph in DOT form")
    pd.add_argument("what", choices=["nfa", "product"])
    common(pd)
    pd.add_argument("--budget-nodes", type=int, help="node budget for the product")
    pd.add_argument("--budget-time", type=float, help="wall time budget in seconds")
    pd.add_argument("--exhaustive", action="store_true", help="(implied for product dumps)")
    pd.add_argument("--dot", help="output path (default stdout)")
    pd.set_defaults(func=cmd_dump)

    pb = sub.add_parser("bench", help="run every spec+property bundle in a directory")
    pb.add_argument("dir", help="directory of bundles")
    pb.add_argument("--config", help="key=value configuration file")
    pb.add_argument("--solver", help="solver command line")
    pb.add_argument("--solver-timeout", type=float)
    pb.add_argument("--backend", choices=["subprocess", "inproc"])
    pb.add_argument("--jobs", type=int, default=1)
    pb.add_argument("--budget-nodes", type=int)
    pb.add_argument("--budget-time", type=float)
    pb.add_argument("--k", type=int, default=5)
    pb.add_argument("--depth", type=int, default=4)
    pb.add_argument("--no-probe", action="store_true")
    pb.add_argument("--csv", help="also write rows as CSV")
    pb.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as e:
        raise
    except ParseError as e:
        return _input_error(str(e))


if __name__ == "__main__":
    sys.exit(main())
