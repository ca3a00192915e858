"""Phase 2: cyclic chains, concurrent instances and the blocking filter."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .engine import ConcreteDependency, DepKey, OrderMode, dep_key_sort
from .trace import thread_sort_key
from .vclock import VectorClock, concurrent, less


class SearchError(RuntimeError):
    pass


Chain = Tuple[DepKey, ...]


def enumerate_cyclic_chains(deps: Mapping[DepKey, Sequence[ConcreteDependency]],
                            max_cycle_len: Optional[int] = None, *, guard: bool = True) -> List[Chain]:
    """All chains ``(t1,l1,ls1) .. (tn,ln,lsn)`` with distinct threads,
    ``l_i`` in the next lockset and (with ``guard``) disjoint locksets.

    Each cycle is listed once, rotated to start at its smallest thread.
    """
    keys = sorted((k for k, v in deps.items() if v), key=dep_key_sort)
    if max_cycle_len is None:
        max_cycle_len = len({k[0] for k in keys})
    # lock -> keys whose lockset contains it
    holding: Dict[str, List[DepKey]] = {}
    for k in keys:
        for l in k[2]:
            holding.setdefault(l, []).append(k)
    out: List[Chain] = []

    def extend(path: List[DepKey], threads: set, used_locks: set, start_key):
        last = path[-1]
        for nxt in holding.get(last[1], ()):
            if nxt is path[0] or nxt == path[0]:
                if len(path) >= 2:
                    out.append(tuple(path))
                continue
            if nxt[0] in threads or thread_sort_key(nxt[0]) <= start_key:
                continue
            if guard and (nxt[2] & used_locks):
                continue
            if len(path) >= max_cycle_len:
                continue
            path.append(nxt)
            threads.add(nxt[0])
            extend(path, threads, used_locks | nxt[2], start_key)
            threads.discard(nxt[0])
            path.pop()

    for k in keys:
        extend([k], {k[0]}, set(k[2]), thread_sort_key(k[0]))
    return out


ADVANCE_RULES = ("pairwise", "join")


def find_concurrent_instance(lists: Sequence[Sequence[ConcreteDependency]],
                             order_mode: OrderMode | str = OrderMode.TRW, *,
                             advance: str = "pairwise") -> Optional[Tuple[ConcreteDependency, ...]]:
    """Cursor scheme over clock-ordered lists.

    All cursors start at 0.  When the current entries are pairwise
    concurrent they are returned; otherwise every cursor moves past entries
    that cannot be part of an instance and the check repeats.

    With ``advance="join"`` an entry is skipped when it is below the join of
    all current clocks.  That is cheap but can skip entries that are
    concurrent with each current clock individually, so for three or more
    lists it may miss instances.  The default skips an entry only when it is
    below some single current entry of another list; every later entry of
    that list is then above it as well, so nothing is lost.

    ``order_mode`` only labels which clocks are being compared.
    """
    if advance not in ADVANCE_RULES:
        raise ValueError(f"advance must be one of {ADVANCE_RULES}")
    n = len(lists)
    if n == 0 or any(len(d) == 0 for d in lists):
        return None
    cur = [0] * n
    while True:
        clocks = [lists[i][cur[i]].clock for i in range(n)]
        if all(concurrent(clocks[i], clocks[j]) for i in range(n) for j in range(i + 1, n)):
            return tuple(lists[i][cur[i]] for i in range(n))
        if advance == "join":
            v = clocks[0]
            for c in clocks[1:]:
                v = tuple(map(max, v, c))
            bounds = [(v,)] * n
        else:
            bounds = [tuple(clocks[j] for j in range(n) if j != i) for i in range(n)]
        moved = False
        for i in range(n):
            d = lists[i]
            j = cur[i]
            while j < len(d) and any(less(d[j].clock, b) for b in bounds[i]):
                j += 1
            if j == len(d):
                return None
            if j != cur[i]:
                moved = True
            cur[i] = j
        if not moved:
            # an ordered pair always moves its smaller side
            raise SearchError("cursor scheme made no progress")


def brute_force_instances(lists: Sequence[Sequence[ConcreteDependency]]):
    """Every tuple whose clocks are pairwise concurrent."""
    for combo in itertools.product(*lists):
        if all(concurrent(combo[i].clock, combo[j].clock)
               for i in range(len(combo)) for j in range(i + 1, len(combo))):
            yield combo


@dataclass(frozen=True)
class PatternEntry:
    thread: str
    lock: str
    lockset: Tuple[str, ...]
    request_pos: int
    clock: VectorClock
    acquires_held: Tuple[int, ...]
    cycle_acquire: int

    def to_dict(self) -> dict:
        return {
            "thread": self.thread,
            "lock": self.lock,
            "lockset": list(self.lockset),
            "request": self.request_pos,
            "clock": list(self.clock),
            "acquires_held": list(self.acquires_held),
            "cycle_acquire": self.cycle_acquire,
        }


@dataclass(frozen=True)
class DeadlockPattern:
    entries: Tuple[PatternEntry, ...]
    order_mode: OrderMode
    blocked_by: Optional[Tuple[int, ...]] = None

    @property
    def threads(self) -> Tuple[str, ...]:
        return tuple(e.thread for e in self.entries)

    @property
    def requests(self) -> Tuple[int, ...]:
        return tuple(e.request_pos for e in self.entries)

    @property
    def locks(self) -> Tuple[str, ...]:
        return tuple(e.lock for e in self.entries)

    @property
    def acquires(self) -> Tuple[int, ...]:
        return tuple(e.cycle_acquire for e in self.entries)

    @property
    def chain(self) -> Chain:
        return tuple((e.thread, e.lock, frozenset(e.lockset)) for e in self.entries)

    def pairs(self) -> Tuple[Tuple[int, int], ...]:
        """(cycle acquire, request position) per entry."""
        return tuple((e.cycle_acquire, e.request_pos) for e in self.entries)

    def to_dict(self) -> dict:
        d = {
            "threads": list(self.threads),
            "requests": list(self.requests),
            "locks": list(self.locks),
            "acquires": list(self.acquires),
            "entries": [e.to_dict() for e in self.entries],
        }
        if self.blocked_by is not None:
            d["blocked_by"] = list(self.blocked_by)
        return d


def make_pattern(chain: Chain, instance: Sequence[ConcreteDependency],
                 order_mode: OrderMode | str) -> DeadlockPattern:
    n = len(chain)
    entries = []
    for i, (key, dep) in enumerate(zip(chain, instance)):
        prev_lock = chain[i - 1][1]
        a = dep.acquire_of(prev_lock)
        if a is None:
            raise SearchError(f"entry {i} of chain does not hold {prev_lock}")
        entries.append(PatternEntry(key[0], key[1], tuple(sorted(key[2])), dep.request_pos,
                                    dep.clock, dep.acquires_held, a))
    if n < 2:
        raise SearchError("a chain has at least two entries")
    return DeadlockPattern(tuple(entries), OrderMode(order_mode))


def less_than(b: DeadlockPattern, a: DeadlockPattern) -> bool:
    """True when every entry of ``b`` requests before some entry of ``a``
    that still holds ``b``'s cycle acquire."""
    return all(
        any(eb.request_pos < ea.request_pos and eb.cycle_acquire in ea.acquires_held for ea in a.entries)
        for eb in b.entries)


def filter_blocked(instances: Sequence[DeadlockPattern]) -> Tuple[List[DeadlockPattern], List[DeadlockPattern]]:
    """Split into (kept, blocked); a pattern is blocked by any other input
    pattern ordered before it."""
    kept, blocked = [], []
    for i, a in enumerate(instances):
        by = next((j for j, b in enumerate(instances) if j != i and less_than(b, a)), None)
        if by is None:
            kept.append(a)
        else:
            blocked.append(DeadlockPattern(a.entries, a.order_mode, instances[by].requests))
    return kept, blocked


class StrictBlockBudget(RuntimeError):
    pass


def strict_blocker(a: DeadlockPattern, deps: Mapping[DepKey, Sequence[ConcreteDependency]],
                   chains: Sequence[Chain], budget: int = 200_000) -> Optional[DeadlockPattern]:
    """Search all concrete instances of ``chains`` (no concurrency required)
    for a cycle ordered before ``a``."""
    held = set()
    for e in a.entries:
        held.update(e.acquires_held)
    last = max(a.requests)
    spent = 0
    for chain in chains:
        cands = []
        for i, key in enumerate(chain):
            prev_lock = chain[i - 1][1]
            cs = []
            for d in deps.get(key, ()):
                if d.request_pos >= last:
                    break
                acq = d.acquire_of(prev_lock)
                if acq in held:
                    cs.append(d)
            if not cs:
                break
            cands.append(cs)
        else:
            for combo in itertools.product(*cands):
                spent += 1
                if spent > budget:
                    raise StrictBlockBudget(f"more than {budget} candidate blockers")
                b = make_pattern(chain, combo, a.order_mode)
                if less_than(b, a):
                    return b
    return None
