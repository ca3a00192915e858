"""Phase 1: vector clocks for TRW/PWR and abstract lock dependencies.

One pass over a request-normalized trace.  Besides the dependency map the
pass checks TRW-boundedness (a lock of one thread guarding a request of
another) and well-nestedness, and tags every dependency with a sync epoch
so that duplicates can be dropped afterwards.
"""
from __future__ import annotations

import enum
from bisect import bisect_left
from dataclasses import dataclass, field
from operator import le, lt
from typing import Dict, FrozenSet, List, Mapping, NamedTuple, Optional, Tuple

from .trace import ACQUIRE, FORK, JOIN, READ, RELEASE, REQUEST, WRITE, Trace, thread_sort_key
from .vclock import VectorClock


class OrderMode(str, enum.Enum):
    TRW = "trw"
    PWR = "pwr"

    def __str__(self) -> str:
        return self.value


class EngineError(RuntimeError):
    pass


DepKey = Tuple[str, str, FrozenSet[str]]


class ConcreteDependency(NamedTuple):
    request_pos: int
    clock: VectorClock
    acquires_held: Tuple[int, ...]
    held_locks: Tuple[str, ...]

    def acquire_of(self, lock: str) -> Optional[int]:
        for a, l in zip(self.acquires_held, self.held_locks):
            if l == lock:
                return a
        return None


class BoundednessWitness(NamedTuple):
    """Lock ``lock`` held by another thread from ``acquire`` to ``release``
    is ordered before and after the request at ``request_pos`` of ``thread``."""

    lock: str
    acquire: int
    release: int
    thread: str
    request_pos: int


@dataclass(frozen=True)
class Diagnostics:
    trw_bounded: Optional[bool]
    bounded_witnesses: Tuple[BoundednessWitness, ...]
    well_nested: bool
    nesting_witnesses: Tuple[int, ...]
    dedupe_stats: Optional[Mapping[str, int]] = None

    @property
    def soundness_guaranteed(self) -> bool:
        return bool(self.trw_bounded) and self.well_nested


@dataclass(frozen=True)
class Phase1Output:
    deps: Mapping[DepKey, Tuple[ConcreteDependency, ...]]
    threads: Tuple[str, ...]
    mode: OrderMode
    diagnostics: Diagnostics
    epochs: Mapping[DepKey, Tuple[int, ...]] = field(default_factory=dict, repr=False)
    event_clocks: Optional[Mapping[int, VectorClock]] = None
    # per thread: own timestamps that some other thread absorbed
    exposures: Mapping[str, Tuple[int, ...]] = field(default_factory=dict, repr=False)

    @property
    def thread_index(self) -> Dict[str, int]:
        return {t: i for i, t in enumerate(self.threads)}

    def dependency_count(self) -> int:
        return sum(len(v) for v in self.deps.values())


def dep_key_sort(key: DepKey):
    t, l, ls = key
    return (thread_sort_key(t), l, tuple(sorted(ls)))


def _lt(a, b) -> bool:
    # strict product order on equal-width sequences
    return all(map(le, a, b)) and any(map(lt, a, b))


class _Pass:
    def __init__(self, trace: Trace, mode: OrderMode, *, ww_sync: bool, history: str,
                 check_boundedness: bool, record_event_clocks: bool):
        if history not in ("global", "local"):
            raise ValueError(f"unknown history variant {history!r}")
        self.trace = trace
        self.trw = mode is OrderMode.TRW
        self.ww_sync = ww_sync
        self.local = history == "local"
        self.check_bounded = check_boundedness
        self.threads = trace.threads
        n = len(self.threads)
        self.tidx = {t: i for i, t in enumerate(self.threads)}
        self.clock: List[List[int]] = []
        for i in range(n):
            v = [0] * n
            v[i] = 1
            self.clock.append(v)
        self.epoch = [0] * n
        self.exposed: List[List[int]] = [[] for _ in range(n)]
        self.lw: Dict[str, tuple] = {}
        self.lr: Dict[str, tuple] = {}
        self.acq_clock: Dict[str, tuple] = {}
        self.hist: Dict[str, list] = {}
        self.held: List[list] = [[] for _ in range(n)]
        self.pending: List[dict] = [{} for _ in range(n)]
        self.deps: Dict[DepKey, list] = {}
        self.dep_epochs: Dict[DepKey, list] = {}
        self.open_req: Dict[int, tuple] = {}
        self.all_lh: Dict[str, tuple] = {}
        self.guard: Dict[str, dict] = {}
        self.witnesses: List[BoundednessWitness] = []
        self.nest_bad: List[int] = []
        self.event_clocks: Optional[Dict[int, VectorClock]] = {} if record_event_clocks else None

    # -- helpers

    def _learn(self, ti: int, old, new) -> None:
        # note which foreign timestamps thread ti just learned about
        exposed = self.exposed
        for k, (a, b) in enumerate(zip(old, new)):
            if b > a and k != ti:
                exposed[k].append(b)

    def _absorb(self, ti: int, other) -> None:
        if other is None:
            return
        v = self.clock[ti]
        m = list(map(max, v, other))
        if m != v:
            self._learn(ti, v, m)
            self.clock[ti] = m
            self.epoch[ti] += 1

    def _sync(self, ti: int) -> None:
        """Join release clocks of earlier critical sections on held locks
        whose acquire is ordered before the current clock, to a fixpoint."""
        held = self.held[ti]
        if not held:
            return
        hist = self.hist
        v0 = v = self.clock[ti]
        grew = False
        if not self.local:
            changed = True
            while changed:
                changed = False
                for _, l in held:
                    for vacq, vrel, owner in hist.get(l, ()):
                        if owner != ti and _lt(vacq, v):
                            m = list(map(max, v, vrel))
                            if m != v:
                                v = m
                                changed = True
                                grew = True
        else:
            pend = self.pending[ti]
            changed = True
            while changed:
                changed = False
                for _, l in held:
                    h = hist.get(l)
                    if not h:
                        continue
                    st = pend.get(l)
                    if st is None:
                        st = pend[l] = [0, []]
                    if st[0] < len(h):
                        st[1].extend(x for x in h[st[0]:] if x[2] != ti)
                        st[0] = len(h)
                    if not st[1]:
                        continue
                    keep = []
                    for x in st[1]:
                        if _lt(x[0], v):
                            m = list(map(max, v, x[1]))
                            if m != v:
                                v = m
                                changed = True
                                grew = True
                        else:
                            keep.append(x)
                    st[1] = keep
        if grew:
            self._learn(ti, v0, v)
            self.clock[ti] = v
            self.epoch[ti] += 1

    def _inc(self, ti: int) -> None:
        self.clock[ti][ti] += 1

    def _record(self, eid: int, snap) -> None:
        if self.event_clocks is not None:
            self.event_clocks[eid] = VectorClock(snap)

    def _emit(self, ti: int, lock: str, req_pos: int, snap) -> None:
        held = self.held[ti]
        key = (self.threads[ti], lock, frozenset(l for _, l in held))
        dep = ConcreteDependency(req_pos, VectorClock(snap), tuple(a for a, _ in held),
                                 tuple(l for _, l in held))
        lst = self.deps.get(key)
        if lst is None:
            self.deps[key] = [dep]
            self.dep_epochs[key] = [self.epoch[ti]]
        else:
            lst.append(dep)
            self.dep_epochs[key].append(self.epoch[ti])

    def _guard_note(self, ti: int, req_pos: int) -> None:
        # a lock held by another thread whose acquire is ordered before this
        # request might be released after it
        v = self.clock[ti]
        for l2, (holder, aid, vacq) in self.all_lh.items():
            if holder == ti:
                continue
            if _lt(vacq, v):
                g = self.guard.setdefault(l2, {})
                if ti not in g:
                    g[ti] = (tuple(v), req_pos)

    # -- main loop

    def run(self) -> None:
        trace = self.trace
        tidx = self.tidx
        position = trace.position
        trw = self.trw
        clock = self.clock
        record = self.event_clocks is not None
        check_bounded = self.check_bounded
        for e in trace.events:
            eid, t, op = e
            kind, x = op
            ti = tidx[t]
            if kind == READ:
                self._absorb(ti, self.lw.get(x))
                self._sync(ti)
                v = clock[ti]
                if trw:
                    old = self.lr.get(x)
                    self.lr[x] = tuple(v) if old is None else tuple(map(max, old, v))
                if record:
                    self._record(eid, v)
                v[ti] += 1
            elif kind == WRITE:
                if trw and self.ww_sync:
                    self._absorb(ti, self.lw.get(x))
                    self._absorb(ti, self.lr.get(x))
                if trw:
                    self._sync(ti)
                v = clock[ti]
                snap = tuple(v)
                self.lw[x] = snap
                if record:
                    self._record(eid, snap)
                v[ti] += 1
            elif kind == REQUEST:
                snap = tuple(clock[ti])
                self.open_req[ti] = (eid, x, snap)
                if record:
                    self._record(eid, snap)
            elif kind == ACQUIRE:
                held = self.held[ti]
                req = self.open_req.pop(ti, None)
                if req is not None and req[1] == x:
                    req_pos = position(req[0])
                else:
                    req_pos = position(eid)
                if held:
                    self._emit(ti, x, req_pos, clock[ti])
                if check_bounded and self.all_lh:
                    self._guard_note(ti, req_pos)
                held.append((eid, x))
                self._sync(ti)
                v = clock[ti]
                snap = tuple(v)
                self.acq_clock[x] = snap
                self.all_lh[x] = (ti, eid, snap)
                if record:
                    self._record(eid, snap)
                v[ti] += 1
            elif kind == RELEASE:
                held = self.held[ti]
                for k in range(len(held) - 1, -1, -1):
                    if held[k][1] == x:
                        break
                else:
                    raise EngineError(f"release {eid} of {x} in {t} without a held acquire")
                if k != len(held) - 1:
                    self.nest_bad.append(eid)
                aid, _ = held.pop(k)
                v = clock[ti]
                snap = tuple(v)
                if check_bounded:
                    g = self.guard.pop(x, None)
                    if g:
                        for tj, (gv, gpos) in g.items():
                            if _lt(gv, v):
                                self.witnesses.append(
                                    BoundednessWitness(x, aid, eid, self.threads[tj], gpos))
                self.all_lh.pop(x, None)
                self.hist.setdefault(x, []).append((self.acq_clock[x], snap, ti))
                if record:
                    self._record(eid, snap)
                v[ti] += 1
            elif kind == FORK:
                ui = tidx[x]
                self._absorb(ui, clock[ti])
                if record:
                    self._record(eid, clock[ti])
                self._inc(ti)
            elif kind == JOIN:
                ui = tidx[x]
                self._absorb(ti, clock[ui])
                self._sync(ti)
                if record:
                    self._record(eid, clock[ti])
                self._inc(ti)
            else:
                raise EngineError(f"unknown operation kind {kind!r} at event {eid}")
        # explicit requests that end their thread still form dependencies
        for ti, (rid, x, snap) in sorted(self.open_req.items()):
            if self.held[ti]:
                self._emit(ti, x, position(rid), snap)


def compute_lock_dependencies(trace: Trace, mode: OrderMode | str = OrderMode.TRW, *,
                              dedupe: bool = False, record_event_clocks: bool = False,
                              check_boundedness: bool = True, history: str = "global",
                              ww_sync: bool = True) -> Phase1Output:
    """Run the vector-clock pass over ``trace`` (which should already carry
    request events, see :func:`deadlock_po.trace.normalize_requests`).

    ``history="local"`` keeps a per-thread cursor into each lock history
    instead of rescanning it; results are identical.  ``ww_sync=False`` drops
    the write-write and read-write joins in TRW mode.  That variant is unsound
    and exists only to show why those joins matter.
    """
    mode = OrderMode(mode)
    p = _Pass(trace, mode, ww_sync=ww_sync, history=history,
              check_boundedness=check_boundedness and mode is OrderMode.TRW,
              record_event_clocks=record_event_clocks)
    p.run()
    deps = {k: tuple(v) for k, v in p.deps.items()}
    epochs = {k: tuple(v) for k, v in p.dep_epochs.items()}
    exposures = {t: tuple(sorted(set(p.exposed[i]))) for i, t in enumerate(p.threads)}
    diag = Diagnostics(
        trw_bounded=(not p.witnesses) if mode is OrderMode.TRW and check_boundedness else None,
        bounded_witnesses=tuple(p.witnesses),
        well_nested=not p.nest_bad,
        nesting_witnesses=tuple(p.nest_bad),
    )
    out = Phase1Output(deps, p.threads, mode, diag, epochs, p.event_clocks, exposures)
    if dedupe:
        out = apply_dedupe(out)
    return out


def dedupe(deps: Mapping[DepKey, Tuple[ConcreteDependency, ...]],
           epochs: Mapping[DepKey, Tuple[int, ...]],
           exposures: Optional[Mapping[str, Tuple[int, ...]]] = None,
           thread_index: Optional[Mapping[str, int]] = None) -> Dict[DepKey, Tuple[ConcreteDependency, ...]]:
    """Drop entries that cannot change the outcome of the search.

    Within one list, an entry is dropped when the last kept entry has the
    same epoch (the thread absorbed nothing in between) and no other thread
    ever learned one of the thread's timestamps in the closed range spanned
    by the two.  Other threads then compare against both entries alike.
    Without ``exposures`` only the epoch is compared.
    """
    out = {}
    for key, lst in deps.items():
        eps = epochs[key]
        if len(eps) != len(lst):
            raise EngineError(f"epoch tags do not match dependency list for {key}")
        ex = None
        if exposures is not None:
            ex = exposures.get(key[0], ())
            own = thread_index[key[0]]
        kept = []
        rep_ep = None
        rep_own = None
        for d, ep in zip(lst, eps):
            if kept and ep == rep_ep:
                if ex is None:
                    continue
                lo = bisect_left(ex, rep_own)
                if lo == len(ex) or ex[lo] > d.clock[own]:
                    continue
            kept.append(d)
            rep_ep = ep
            if ex is not None:
                rep_own = d.clock[own]
        out[key] = tuple(kept)
    return out


def apply_dedupe(p1: Phase1Output) -> Phase1Output:
    deps = dedupe(p1.deps, p1.epochs, p1.exposures, p1.thread_index)
    before = p1.dependency_count()
    after = sum(len(v) for v in deps.values())
    eps = {}
    for key, lst in p1.deps.items():
        keep = set(deps[key])
        eps[key] = tuple(ep for d, ep in zip(lst, p1.epochs[key]) if d in keep)
    diag = Diagnostics(p1.diagnostics.trw_bounded, p1.diagnostics.bounded_witnesses,
                       p1.diagnostics.well_nested, p1.diagnostics.nesting_witnesses,
                       {"before": before, "after": after})
    return Phase1Output(deps, p1.threads, p1.mode, diag, eps, p1.event_clocks, p1.exposures)
