"""Command line front end: analyze, validate, oracle, fuzz, bench.

Exit codes: 0 ran with nothing found, 1 deadlocks reported, 2 usage or IO
error, 3 ill-formed input.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .analysis import AnalysisConfig, IllFormedTraceError, analyze
from .engine import OrderMode
from .fuzzgen import GenerationError, GenParams, generate, synthetic_trace
from .oracle import Limits, confirmed, enumerate_predictable_deadlocks, witness_text
from .trace import (NormalizationError, TraceSyntaxError, normalize_requests, read_trace,
                    serialize_trace, validate)

EXIT_OK, EXIT_FOUND, EXIT_USAGE, EXIT_ILLFORMED = 0, 1, 2, 3
THREADS_ENV = "DEADLOCK_PO_THREADS"


# when several files disagree, the most severe code wins
_SEVERITY = {EXIT_OK: 0, EXIT_FOUND: 1, EXIT_ILLFORMED: 2, EXIT_USAGE: 3}


def _worse(a: int, b: int) -> int:
    return a if _SEVERITY[a] >= _SEVERITY[b] else b


def _add_order(p):
    p.add_argument("--order", choices=[m.value for m in OrderMode], default="trw",
                   help="partial order used to relate requests (default: trw)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deadlock-po", description="Predict resource deadlocks from a recorded trace.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="report deadlock patterns")
    a.add_argument("paths", nargs="+", metavar="TRACE")
    _add_order(a)
    blk = a.add_mutually_exclusive_group()
    blk.add_argument("--no-block", action="store_true", help="keep patterns that an earlier cycle blocks")
    blk.add_argument("--block", choices=["alg", "strict"], default=None,
                     help="alg: compare reported instances only (default); strict: also any concrete cycle")
    a.add_argument("--dedupe", action="store_true", help="drop redundant concrete dependencies")
    a.add_argument("--lenient", action="store_true", help="warn on ill-formed locks and skip them")
    a.add_argument("--strict-requests", action="store_true", help="enforce the request rule")
    a.add_argument("--format", choices=["json", "text"], default="text")
    a.add_argument("--event-clocks", action="store_true", help="include per-event clocks in JSON")
    a.add_argument("--max-cycle-len", type=int, default=None)
    a.add_argument("--history", choices=["global", "local"], default="global",
                   help="critical-section history layout (same results)")
    a.add_argument("--debug-no-ww-sync", action="store_true",
                   help="UNSAFE: drop write-write and read-write ordering (ablation only)")

    v = sub.add_parser("validate", help="check well-formedness")
    v.add_argument("paths", nargs="+", metavar="TRACE")
    v.add_argument("--strict-requests", action="store_true")
    v.add_argument("--format", choices=["json", "text"], default="text")

    o = sub.add_parser("oracle", help="brute-force check of every lock cycle (small traces)")
    o.add_argument("path", metavar="TRACE")
    o.add_argument("--max-events", type=int, default=Limits.max_events)
    o.add_argument("--max-states", type=int, default=Limits.max_states)
    o.add_argument("--max-cycle-len", type=int, default=None)
    o.add_argument("--format", choices=["json", "text"], default="text")

    f = sub.add_parser("fuzz", help="write generated traces and a manifest")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--count", type=int, default=10)
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--threads", type=int, default=GenParams.threads)
    f.add_argument("--locks", type=int, default=GenParams.locks)
    f.add_argument("--variables", type=int, default=GenParams.variables)
    f.add_argument("--events", type=int, default=GenParams.events)
    f.add_argument("--min-events", type=int, default=GenParams.min_events)
    f.add_argument("--p-fork-join", type=float, default=GenParams.p_fork_join)
    f.add_argument("--p-request", type=float, default=GenParams.p_request)
    f.add_argument("--bounded", action="store_true", help="keep only TRW-bounded traces")
    f.add_argument("--well-nested", action="store_true", help="keep only well-nested traces")

    b = sub.add_parser("bench", help="time the analysis on a synthetic trace")
    b.add_argument("--synthetic", type=int, required=True, metavar="N", help="number of events")
    b.add_argument("--threads", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    _add_order(b)
    b.add_argument("--dedupe", action="store_true")
    return ap


# ------------------------------------------------------------ analyze

def _config(ns) -> AnalysisConfig:
    block = "off" if ns.no_block else (ns.block or "alg")
    return AnalysisConfig(order_mode=OrderMode(ns.order), block=block, dedupe=ns.dedupe,
                          lenient=ns.lenient, max_cycle_len=ns.max_cycle_len,
                          strict_requests=ns.strict_requests, record_event_clocks=ns.event_clocks,
                          history=ns.history, ww_sync=not ns.debug_no_ww_sync)


def _analyze_one(path: str, config: AnalysisConfig, event_clocks: bool):
    """Runs in a worker; returns (exit code, payload, error text)."""
    try:
        trace = read_trace(path)
    except (OSError, UnicodeDecodeError) as exc:
        return EXIT_USAGE, None, f"{path}: {exc}"
    except TraceSyntaxError as exc:
        return EXIT_USAGE, None, f"{path}: {exc}"
    try:
        rep = analyze(trace, config)
    except IllFormedTraceError as exc:
        return EXIT_ILLFORMED, None, f"{path}: {exc}"
    except NormalizationError as exc:
        return EXIT_ILLFORMED, None, f"{path}: {exc}"
    d = rep.to_dict(event_clocks=event_clocks)
    d["file"] = path
    return (EXIT_FOUND if rep.patterns else EXIT_OK), d, None


def _workers(n_items: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    try:
        cap_n = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        cap_n = 1
    return max(1, min(n_items, cap_n))


def _text_report(d: dict) -> str:
    lines = [f"{d['file']}: {len(d['patterns'])} deadlock pattern(s) [{d['mode']}]"]
    for p in d["patterns"]:
        parts = [f"{e['thread']} req {e['lock']} at {e['request']} holding {','.join(e['lockset'])}"
                 for e in p["entries"]]
        lines.append("  pattern: " + "; ".join(parts))
    for p in d["blocked"]:
        lines.append(f"  blocked: requests {p['requests']} (by {p['blocked_by']})")
    diag = d["diagnostics"]
    st = d["stages"]
    lines.append(f"  chains={st['chains']} concurrent={st['concurrent']} unblocked={st['unblocked']}")
    if diag["trw_bounded"] is False:
        for w in diag["witnesses"]:
            lines.append(f"  not trw-bounded: {w['lock']} acquire {w['acquire']} release {w['release']} "
                         f"thread {w['thread']} request {w['request_pos']}")
    if not diag["well_nested"]:
        lines.append(f"  not well nested: releases {diag['nesting_witnesses']}")
    if diag.get("dedupe"):
        lines.append(f"  dedupe: {diag['dedupe']['before']} -> {diag['dedupe']['after']}")
    for w in diag["warnings"]:
        lines.append(f"  warning {w['code']}: {w['message']}")
    if diag.get("unsafe"):
        lines.append("  UNSAFE ablation enabled; results are not sound")
    return "\n".join(lines)


def cmd_analyze(ns) -> int:
    config = _config(ns)
    paths = list(ns.paths)
    n = _workers(len(paths))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(_analyze_one, paths, [config] * len(paths), [ns.event_clocks] * len(paths)))
    else:
        results = [_analyze_one(p, config, ns.event_clocks) for p in paths]
    code = EXIT_OK
    for rc, d, err in results:
        if err:
            print(err, file=sys.stderr)
        if d is not None:
            if ns.format == "json":
                print(json.dumps(d, sort_keys=True))
            else:
                print(_text_report(d))
        code = _worse(code, rc)
    return code


# ------------------------------------------------------------ validate

def cmd_validate(ns) -> int:
    code = EXIT_OK
    for path in ns.paths:
        try:
            trace = read_trace(path)
        except (OSError, UnicodeDecodeError, TraceSyntaxError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            code = _worse(code, EXIT_USAGE)
            continue
        rep = validate(trace, strict_requests=ns.strict_requests)
        if ns.format == "json":
            print(json.dumps({"file": path, "ok": rep.ok,
                              "violations": [v._asdict() for v in rep.violations],
                              "warnings": [w._asdict() for w in rep.warnings]}, sort_keys=True))
        else:
            print(f"{path}: {'ok' if rep.ok else 'ill-formed'}")
            for v in rep.violations:
                print(f"  {v.rule} at events {list(v.events)}: {v.message}")
            for w in rep.warnings:
                print(f"  warning {w.code}: {w.message}")
        if not rep.ok:
            code = _worse(code, EXIT_ILLFORMED)
    return code


# ------------------------------------------------------------ oracle

def cmd_oracle(ns) -> int:
    try:
        trace = read_trace(ns.path)
    except (OSError, UnicodeDecodeError, TraceSyntaxError) as exc:
        print(f"{ns.path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rep = validate(trace)
    if not rep.ok:
        v = rep.violations[0]
        print(f"{ns.path}: {v.rule} at events {list(v.events)}: {v.message}", file=sys.stderr)
        return EXIT_ILLFORMED
    try:
        norm = normalize_requests(trace)
    except NormalizationError as exc:
        print(f"{ns.path}: {exc}", file=sys.stderr)
        return EXIT_ILLFORMED
    limits = Limits(max_events=ns.max_events, max_states=ns.max_states)
    cands = enumerate_predictable_deadlocks(norm, limits, ns.max_cycle_len)
    found = confirmed(cands)
    if ns.format == "json":
        out = {"file": ns.path, "cycles": [
            {"pairs": [list(p) for p in c.pairs],
             "requests": [norm.position(q) for q in c.requests],
             "threads": list(c.threads), "locks": list(c.locks), "guard": c.guard,
             "verdict": c.verdict.status, "states": c.verdict.states,
             "witness": list(c.verdict.witness) if c.verdict.witness else None} for c in cands]}
        print(json.dumps(out, sort_keys=True))
    else:
        print(f"{ns.path}: {len(cands)} cycle(s), {len(found)} predictable")
        for c in cands:
            reqs = [norm.position(q) for q in c.requests]
            tag = "" if c.guard else " (locksets overlap)"
            print(f"  requests {reqs} threads {list(c.threads)}: {c.verdict.status}{tag}")
            if c.verdict.yes and c.verdict.witness:
                for line in witness_text(norm, c.verdict.witness).splitlines():
                    print(f"    {line}")
    if any(c.verdict.status == "budget_exceeded" for c in cands):
        print(f"{ns.path}: search budget exceeded for some cycles", file=sys.stderr)
    return EXIT_FOUND if found else EXIT_OK


# ------------------------------------------------------------ fuzz

def cmd_fuzz(ns) -> int:
    base = GenParams(seed=ns.seed, threads=ns.threads, locks=ns.locks, variables=ns.variables,
                     events=ns.events, min_events=min(ns.min_events, ns.events),
                     p_fork_join=ns.p_fork_join, p_request=ns.p_request,
                     require_bounded=ns.bounded, require_well_nested=ns.well_nested)
    try:
        ns.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"{ns.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    width = max(4, len(str(ns.count - 1)))
    entries = []
    for i in range(ns.count):
        p = GenParams(**{**asdict(base), "seed": ns.seed * 1_000_003 + i})
        try:
            t = generate(p)
        except GenerationError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_USAGE
        name = f"fuzz_{i:0{width}d}.trace"
        (ns.out / name).write_text(serialize_trace(t))
        entries.append({"file": name, "seed": p.seed, "events": len(t), "threads": len(t.threads)})
    manifest = {"version": __version__, "params": asdict(base), "count": ns.count, "traces": entries}
    (ns.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {ns.count} traces to {ns.out}")
    return EXIT_OK


# ------------------------------------------------------------ bench

def cmd_bench(ns) -> int:
    if ns.synthetic < 1 or ns.threads < 1:
        print("bench: need a positive size and thread count", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    trace = synthetic_trace(ns.synthetic, threads=ns.threads, seed=ns.seed)
    t1 = time.perf_counter()
    rep = analyze(trace, order_mode=OrderMode(ns.order), history="local", dedupe=ns.dedupe)
    t2 = time.perf_counter()
    print(f"events={len(trace)} threads={ns.threads} mode={ns.order}")
    print(f"generate_ms={(t1 - t0) * 1000:.1f}")
    print(f"phase1_ms={rep.timing_ms['phase1']:.1f}")
    print(f"phase2_ms={rep.timing_ms['phase2']:.1f}")
    print(f"analysis_ms={(t2 - t1) * 1000:.1f}")
    print(f"dependencies={rep.phase1.dependency_count()} patterns={len(rep.patterns)}")
    print(f"events_per_s={len(trace) / max(t2 - t1, 1e-9):.0f}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "validate": cmd_validate, "oracle": cmd_oracle,
            "fuzz": cmd_fuzz, "bench": cmd_bench}


def run(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return COMMANDS[ns.command](ns)


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
