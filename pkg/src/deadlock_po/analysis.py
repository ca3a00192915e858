"""The end-to-end pipeline and its report."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .engine import (BoundednessWitness, OrderMode, Phase1Output, apply_dedupe,
                     compute_lock_dependencies)
from .search import (DeadlockPattern, StrictBlockBudget, enumerate_cyclic_chains, filter_blocked,
                     find_concurrent_instance, make_pattern, strict_blocker)
from .trace import (LOCK_KINDS, NormalizationError, Trace, TraceWarning, ValidationReport,
                    normalize_requests, validate)

BLOCK_MODES = ("alg", "strict", "off")


class IllFormedTraceError(ValueError):
    def __init__(self, report: ValidationReport, message: str = ""):
        first = report.violations[0] if report.violations else None
        msg = message or (f"{first.rule} violation at events {list(first.events)}: {first.message}"
                          if first else "trace is not well formed")
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class AnalysisConfig:
    order_mode: OrderMode = OrderMode.TRW
    block: str = "alg"
    dedupe: bool = False
    lenient: bool = False
    max_cycle_len: Optional[int] = None
    strict_requests: bool = False
    record_event_clocks: bool = False
    history: str = "global"
    ww_sync: bool = True
    strict_budget: int = 200_000
    advance: str = "pairwise"

    def __post_init__(self):
        object.__setattr__(self, "order_mode", OrderMode(self.order_mode))
        if self.block not in BLOCK_MODES:
            raise ValueError(f"block must be one of {BLOCK_MODES}")


@dataclass(frozen=True)
class AnalysisReport:
    mode: OrderMode
    patterns: Tuple[DeadlockPattern, ...]
    blocked: Tuple[DeadlockPattern, ...]
    stages: Dict[str, int]
    threads: Tuple[str, ...]
    trw_bounded: Optional[bool]
    bounded_witnesses: Tuple[BoundednessWitness, ...]
    well_nested: bool
    nesting_witnesses: Tuple[int, ...]
    warnings: Tuple[TraceWarning, ...]
    dedupe_stats: Optional[Dict[str, int]]
    timing_ms: Dict[str, float] = field(compare=False)
    phase1: Optional[Phase1Output] = field(default=None, compare=False, repr=False)
    trace: Optional[Trace] = field(default=None, compare=False, repr=False)
    unsafe: bool = False

    @property
    def soundness_guaranteed(self) -> bool:
        return (self.mode is OrderMode.TRW and bool(self.trw_bounded) and self.well_nested
                and not self.unsafe)

    def to_dict(self, include_timing: bool = True, event_clocks: bool = False) -> dict:
        d = {
            "mode": self.mode.value,
            "patterns": [p.to_dict() for p in self.patterns],
            "blocked": [p.to_dict() for p in self.blocked],
            "stages": dict(self.stages),
            "threads": {t: i for i, t in enumerate(self.threads)},
            "diagnostics": {
                "trw_bounded": self.trw_bounded,
                "witnesses": [w._asdict() for w in self.bounded_witnesses],
                "well_nested": self.well_nested,
                "nesting_witnesses": list(self.nesting_witnesses),
                "soundness_guaranteed": self.soundness_guaranteed,
                "warnings": [w._asdict() for w in self.warnings],
                "dedupe": self.dedupe_stats,
            },
        }
        if self.unsafe:
            d["diagnostics"]["unsafe"] = True
        if include_timing:
            d["timing_ms"] = dict(self.timing_ms)
        if event_clocks and self.phase1 is not None and self.phase1.event_clocks is not None:
            d["event_clocks"] = {str(k): list(v) for k, v in sorted(self.phase1.event_clocks.items())}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True)


def _drop_locks(trace: Trace, locks) -> Trace:
    return Trace(tuple(e for e in trace.events
                       if not (e.op.kind in LOCK_KINDS and e.op.operand in locks)), trace.origin)


def _lenient_clean(trace: Trace, strict_requests: bool) -> Tuple[Trace, List[TraceWarning]]:
    warnings: List[TraceWarning] = []
    for _ in range(64):
        rep = validate(trace, strict_requests=False)
        warnings.extend(rep.warnings)
        if rep.ok:
            break
        bad = rep.locks_in_violation(trace)
        for v in rep.violations:
            warnings.append(TraceWarning(v.rule, v.message))
        warnings.append(TraceWarning("skipped-locks", f"dropped events on locks {sorted(bad)}"))
        trace = _drop_locks(trace, bad)
    return trace, warnings


def _normalize_lenient(trace: Trace, warnings: List[TraceWarning]) -> Trace:
    while True:
        try:
            return normalize_requests(trace)
        except NormalizationError as exc:
            warnings.append(TraceWarning("dropped-request", str(exc)))
            trace = Trace(tuple(e for e in trace.events if e.id != exc.request_id), trace.origin)


def analyze(trace: Trace, config: Optional[AnalysisConfig] = None, **kw) -> AnalysisReport:
    """validate, add requests, run the clock pass, search chains, filter."""
    if config is None:
        config = AnalysisConfig(**kw)
    elif kw:
        raise TypeError("pass either a config or keyword options")
    t0 = time.perf_counter()
    rep = validate(trace, strict_requests=config.strict_requests)
    warnings: List[TraceWarning] = list(rep.warnings)
    if not rep.ok:
        if not config.lenient:
            raise IllFormedTraceError(rep)
        trace, extra = _lenient_clean(trace, config.strict_requests)
        warnings = extra
    if config.lenient:
        norm = _normalize_lenient(trace, warnings)
    else:
        norm = normalize_requests(trace)

    raw = compute_lock_dependencies(norm, config.order_mode, record_event_clocks=config.record_event_clocks,
                                    history=config.history, ww_sync=config.ww_sync)
    p1 = apply_dedupe(raw) if config.dedupe else raw
    t1 = time.perf_counter()

    chains = enumerate_cyclic_chains(p1.deps, config.max_cycle_len)
    found: List[DeadlockPattern] = []
    for chain in chains:
        inst = find_concurrent_instance([p1.deps[k] for k in chain], config.order_mode,
                                        advance=config.advance)
        if inst is not None:
            found.append(make_pattern(chain, inst, config.order_mode))
    if config.block == "off":
        kept, blocked = found, []
    else:
        kept, blocked = filter_blocked(found)
        if config.block == "strict":
            all_chains = enumerate_cyclic_chains(raw.deps, config.max_cycle_len, guard=False)
            still = []
            for a in kept:
                try:
                    b = strict_blocker(a, raw.deps, all_chains, config.strict_budget)
                except StrictBlockBudget as exc:
                    warnings.append(TraceWarning("strict-block-budget", str(exc)))
                    b = None
                if b is None:
                    still.append(a)
                else:
                    blocked.append(DeadlockPattern(a.entries, a.order_mode, b.requests))
            kept = still
    t2 = time.perf_counter()

    diag = p1.diagnostics
    return AnalysisReport(
        mode=config.order_mode,
        patterns=tuple(kept),
        blocked=tuple(blocked),
        stages={"chains": len(chains), "concurrent": len(found), "unblocked": len(kept)},
        threads=norm.threads,
        trw_bounded=diag.trw_bounded,
        bounded_witnesses=diag.bounded_witnesses,
        well_nested=diag.well_nested,
        nesting_witnesses=diag.nesting_witnesses,
        warnings=tuple(warnings),
        dedupe_stats=dict(diag.dedupe_stats) if diag.dedupe_stats else None,
        timing_ms={"phase1": round((t1 - t0) * 1000, 3), "phase2": round((t2 - t1) * 1000, 3)},
        phase1=p1,
        trace=norm,
        unsafe=not config.ww_sync,
    )
