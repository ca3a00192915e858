"""Brute-force referees for small traces.

``is_predictable_deadlock`` searches correctly reordered prefixes directly;
``order_fixpoint`` computes TRW/PWR from their rules with bitsets.  Neither
shares code with the vector-clock engine.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

from .engine import OrderMode
from .trace import (ACQUIRE, FORK, JOIN, READ, RELEASE, REQUEST, WRITE, Trace, critical_sections,
                    last_writes, serialize_trace, thread_sort_key, validate)

YES = "yes"
NO = "no"
BUDGET = "budget_exceeded"


@dataclass(frozen=True)
class Limits:
    max_events: int = 24
    max_states: int = 200_000


class Verdict(NamedTuple):
    status: str
    witness: Optional[Tuple[int, ...]] = None
    states: int = 0

    @property
    def yes(self) -> bool:
        return self.status == YES


# ------------------------------------------------------------ order fixpoint

class OrderRelation:
    """Strict order over the events of one trace, as successor bitsets."""

    def __init__(self, trace: Trace, mode: OrderMode, succ: List[int]):
        self.trace = trace
        self.mode = mode
        self._succ = succ
        self._idx = trace.index_of

    def less(self, e: int, f: int) -> bool:
        return bool(self._succ[self._idx[e]] >> self._idx[f] & 1)

    def concurrent(self, e: int, f: int) -> bool:
        return e != f and not self.less(e, f) and not self.less(f, e)

    def pairs(self) -> Iterator[Tuple[int, int]]:
        ev = self.trace.events
        for i, m in enumerate(self._succ):
            j = 0
            while m:
                if m & 1:
                    yield (ev[i].id, ev[j].id)
                m >>= 1
                j += 1

    def __contains__(self, pair) -> bool:
        return self.less(*pair)


def order_fixpoint(trace: Trace, mode: OrderMode | str) -> OrderRelation:
    mode = OrderMode(mode)
    ev = trace.events
    n = len(ev)
    idx = trace.index_of
    succ = [0] * n

    later: Dict[str, int] = {}
    for i in range(n - 1, -1, -1):
        t = ev[i].thread
        succ[i] |= later.get(t, 0)
        later[t] = later.get(t, 0) | (1 << i)

    if mode is OrderMode.TRW:
        for i in range(n):
            ki, xi = ev[i].op
            if ki not in (READ, WRITE):
                continue
            for j in range(i + 1, n):
                kj, xj = ev[j].op
                if kj in (READ, WRITE) and xj == xi and (ki == WRITE or kj == WRITE):
                    succ[i] |= 1 << j
    else:
        for r, w in last_writes(trace).items():
            if w is not None:
                succ[idx[w]] |= 1 << idx[r]

    # fork before the child's events, the child's events before the join
    for i, e in enumerate(ev):
        if e.op.kind == FORK:
            for j in range(i + 1, n):
                if ev[j].thread == e.op.operand:
                    succ[i] |= 1 << j
        elif e.op.kind == JOIN:
            for j in range(i):
                if ev[j].thread == e.op.operand:
                    succ[j] |= 1 << i

    cs = critical_sections(trace)
    members: Dict[int, int] = {}
    for e in ev:
        for a in cs.acquires_held[e.id]:
            members[a] = members.get(a, 0) | (1 << idx[e.id])
    acquires = [e for e in ev if e.op.kind == ACQUIRE]
    rel_rules = []
    for x, a1 in enumerate(acquires):
        r1 = cs.release_of.get(a1.id)
        if r1 is None:
            continue
        for a2 in acquires[x + 1:]:
            if a2.op.operand == a1.op.operand:
                rel_rules.append((idx[a1.id], idx[r1], members[a2.id]))

    def close():
        # every edge points forward in the trace, so one backward sweep closes
        for i in range(n - 1, -1, -1):
            m = succ[i]
            acc = m
            j = 0
            while m:
                low = m & -m
                j = low.bit_length() - 1
                acc |= succ[j]
                m ^= low
            succ[i] = acc

    while True:
        close()
        changed = False
        for ia1, ir1, mem in rel_rules:
            add = succ[ia1] & mem
            if add & ~succ[ir1]:
                succ[ir1] |= add
                changed = True
        if not changed:
            break

    for i in range(n):
        if succ[i] >> i & 1 or succ[i] & ((1 << i) - 1):
            raise AssertionError("order relation is not a forward strict order")
    return OrderRelation(trace, mode, succ)


# ----------------------------------------------------- reordering search

def request_ids_by_position(trace: Trace) -> Dict[int, int]:
    return {trace.position(e.id): e.id for e in trace.events if e.op.kind == REQUEST}


def pattern_pairs(trace: Trace, pattern) -> Tuple[Tuple[int, int], ...]:
    """(acquire id, request id) pairs for an analyzer pattern on a
    request-normalized trace."""
    by_pos = request_ids_by_position(trace)
    return tuple((a, by_pos[p]) for a, p in pattern.pairs())


def is_correctly_reordered_prefix(source: Trace, prefix: Sequence[int]) -> Tuple[bool, str]:
    """Independent audit of a candidate reordering, returns (ok, reason)."""
    by_id = source.by_id
    if len(set(prefix)) != len(prefix):
        return False, "duplicate events"
    if any(p not in by_id for p in prefix):
        return False, "unknown event"
    sub = [by_id[p] for p in prefix]
    for t in source.threads:
        mine = [e.id for e in sub if e.thread == t]
        src = [e.id for e in source.events if e.thread == t]
        if mine != src[:len(mine)]:
            return False, f"projection of {t} is not a prefix"
    reordered = Trace(tuple(sub), {k: v for k, v in source.origin.items() if k in set(prefix)})
    rep = validate(reordered)
    if not rep.ok:
        return False, f"not well formed: {rep.violations[0].message}"
    src_lw = last_writes(source)
    for r, w in last_writes(reordered).items():
        if src_lw[r] != w:
            return False, f"read {r} sees {w} instead of {src_lw[r]}"
    seen = set()
    for e in sub:
        if e.op.kind == FORK:
            if any(f.thread == e.op.operand for f in sub if f.id in seen):
                return False, f"events of {e.op.operand} before its fork"
        if e.op.kind == JOIN:
            child = [f.id for f in source.events if f.thread == e.op.operand]
            if not all(c in seen for c in child):
                return False, f"join {e.id} before all events of {e.op.operand}"
        seen.add(e.id)
    for e in sub:
        forks = [f for f in source.events if f.op.kind == FORK and f.op.operand == e.thread]
        if forks and forks[0].id not in seen:
            return False, f"event {e.id} of {e.thread} without its fork"
    return True, ""


def is_predictable_deadlock(trace: Trace, candidate, limits: Limits = Limits()) -> Verdict:
    """Search for a correctly reordered prefix that ends every thread of the
    candidate at its request.

    ``candidate`` is a sequence of (acquire id, request id) pairs or an
    analyzer pattern; the trace must carry request events.
    """
    if hasattr(candidate, "pairs") and callable(candidate.pairs):
        candidate = pattern_pairs(trace, candidate)
    if trace.source_length() > limits.max_events:
        return Verdict(BUDGET)
    by_id = trace.by_id
    proj: Dict[str, List] = {}
    for e in trace.events:
        proj.setdefault(e.thread, []).append(e)
    threads = sorted(proj, key=thread_sort_key)
    tpos = {t: i for i, t in enumerate(threads)}
    limit = [len(proj[t]) for t in threads]
    stop = {}
    for a, q in candidate:
        qe = by_id[q]
        if qe.op.kind != REQUEST:
            raise ValueError(f"event {q} is not a request")
        ti = tpos[qe.thread]
        k = next(i for i, e in enumerate(proj[qe.thread]) if e.id == q)
        stop[ti] = k + 1
        limit[ti] = k + 1
    lw_src = last_writes(trace)
    variables = sorted({e.op.operand for e in trace.events if e.op.kind in (READ, WRITE)})
    vpos = {x: i for i, x in enumerate(variables)}
    fork_of: Dict[str, int] = {}
    for e in trace.events:
        if e.op.kind == FORK and e.op.operand not in fork_of:
            fork_of[e.op.operand] = e.id
    nthreads = len(threads)

    def goal(cuts) -> bool:
        return all(cuts[ti] == k for ti, k in stop.items())

    start = ((0,) * nthreads, (None,) * len(variables))
    seen = {start}
    # stack frames: (cuts, lw, holders, done-set of scheduled ids, path)
    stack = [(start[0], start[1], {}, frozenset(), ())]
    states = 0
    while stack:
        cuts, lw, holders, done, path = stack.pop()
        states += 1
        if goal(cuts):
            return Verdict(YES, path, states)
        if states > limits.max_states:
            return Verdict(BUDGET, None, states)
        for ti in range(nthreads - 1, -1, -1):
            c = cuts[ti]
            if c >= limit[ti]:
                continue
            t = threads[ti]
            e = proj[t][c]
            if t in fork_of and fork_of[t] not in done:
                continue
            kind, x = e.op
            nh = holders
            nlw = lw
            if kind == ACQUIRE:
                if x in holders:
                    continue
                nh = dict(holders)
                nh[x] = t
            elif kind == RELEASE:
                nh = dict(holders)
                nh.pop(x, None)
            elif kind == READ:
                if lw[vpos[x]] != lw_src[e.id]:
                    continue
            elif kind == WRITE:
                nlw = lw[:vpos[x]] + (e.id,) + lw[vpos[x] + 1:]
            elif kind == JOIN:
                u = tpos.get(x)
                if u is not None and cuts[u] < len(proj[x]):
                    continue
            ncuts = cuts[:ti] + (c + 1,) + cuts[ti + 1:]
            key = (ncuts, nlw)
            if key in seen:
                continue
            seen.add(key)
            stack.append((ncuts, nlw, nh, done | {e.id}, path + (e.id,)))
    return Verdict(NO, None, states)


# --------------------------------------------------- cycle enumeration

@dataclass(frozen=True)
class CycleCandidate:
    pairs: Tuple[Tuple[int, int], ...]  # (acquire id, request id)
    threads: Tuple[str, ...]
    locks: Tuple[str, ...]  # lock requested by each entry
    locksets: Tuple[frozenset, ...]  # locks held at each request
    guard: bool
    verdict: Verdict

    @property
    def requests(self) -> Tuple[int, ...]:
        return tuple(q for _, q in self.pairs)

    @property
    def chain(self):
        return tuple(zip(self.threads, self.locks, self.locksets))


def enumerate_cycles(trace: Trace, max_cycle_len: Optional[int] = None):
    """All cycles of acquire/request pairs over distinct threads, each once,
    rotated to start at the smallest thread.  Yields (pairs, guard_ok)."""
    cs = critical_sections(trace)
    reqs = [e for e in trace.events if e.op.kind == REQUEST and cs.acquires_held[e.id]]
    threads = {e.thread for e in reqs}
    if max_cycle_len is None:
        max_cycle_len = len(threads)

    def acq_on(q, lock):
        for a in cs.acquires_held[q.id]:
            if cs.lock_of[a] == lock:
                return a
        return None

    out = []

    def extend(path):
        last = path[-1]
        for q in reqs:
            a = acq_on(q, last.op.operand)
            if a is None:
                continue
            if q is path[0]:
                if len(path) >= 2:
                    out.append(tuple(path))
                continue
            if q.thread in {p.thread for p in path}:
                continue
            if thread_sort_key(q.thread) <= thread_sort_key(path[0].thread):
                continue
            if len(path) >= max_cycle_len:
                continue
            path.append(q)
            extend(path)
            path.pop()

    for q in reqs:
        extend([q])
    for cyc in out:
        n = len(cyc)
        pairs = tuple((acq_on(cyc[i], cyc[i - 1].op.operand), cyc[i].id) for i in range(n))
        lhs = [cs.locks_held[a] for a, _ in pairs]
        guard = all(not (lhs[i] & lhs[j]) for i in range(n) for j in range(i + 1, n))
        yield pairs, guard, cyc, cs


def enumerate_predictable_deadlocks(trace: Trace, limits: Limits = Limits(),
                                    max_cycle_len: Optional[int] = None) -> List[CycleCandidate]:
    """Check every cycle; the result lists all of them with their verdicts.

    Use :func:`confirmed` to keep the predictable ones.
    """
    out = []
    for pairs, guard, cyc, cs in enumerate_cycles(trace, max_cycle_len):
        v = is_predictable_deadlock(trace, pairs, limits)
        out.append(CycleCandidate(pairs, tuple(q.thread for q in cyc), tuple(q.op.operand for q in cyc),
                                  tuple(cs.locks_held[q.id] for q in cyc), guard, v))
    return out


def confirmed(cands: Iterable[CycleCandidate], guard_only: bool = True) -> List[CycleCandidate]:
    return [c for c in cands if c.verdict.yes and (c.guard or not guard_only)]


def cycle_order_bruteforce(trace: Trace, a_pairs, b_pairs) -> bool:
    """Whether every (a, q) in A has some (a', q') in B with q before q' in
    the trace and a still held at q'."""
    cs = critical_sections(trace)
    idx = trace.index_of
    return all(any(idx[q] < idx[q2] and a in cs.acquires_held[q2] for _, q2 in b_pairs)
               for a, q in a_pairs)


def witness_text(trace: Trace, witness: Sequence[int]) -> str:
    return serialize_trace(trace.by_id[i] for i in witness)
