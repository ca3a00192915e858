"""Events, traces and the canonical line format.

A trace line looks like ``T2|acq(l1)``.  Lines starting with ``#`` and blank
lines are skipped; event ids are the 1-based index over event lines.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

READ = "read"
WRITE = "write"
REQUEST = "request"
ACQUIRE = "acquire"
RELEASE = "release"
FORK = "fork"
JOIN = "join"

KINDS = (READ, WRITE, REQUEST, ACQUIRE, RELEASE, FORK, JOIN)
LOCK_KINDS = frozenset((REQUEST, ACQUIRE, RELEASE))
THREAD_KINDS = frozenset((FORK, JOIN))

_TOKEN_TO_KIND = {
    "r": READ,
    "w": WRITE,
    "req": REQUEST,
    "acq": ACQUIRE,
    "rel": RELEASE,
    "fork": FORK,
    "join": JOIN,
}
_KIND_TO_TOKEN = {v: k for k, v in _TOKEN_TO_KIND.items()}

_LINE_RE = re.compile(r"^(T[0-9]+)\|([a-z]+)\(([A-Za-z0-9_]+)\)$")
_THREAD_RE = re.compile(r"^T[0-9]+$")
_OPERAND_RE = re.compile(r"^[A-Za-z0-9_]+$")


class TraceSyntaxError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class NormalizationError(ValueError):
    """A request is not followed by the acquire it announces."""

    def __init__(self, request_id: int, message: str):
        super().__init__(message)
        self.request_id = request_id


class Operation(NamedTuple):
    kind: str
    operand: str

    def __str__(self) -> str:
        return f"{_KIND_TO_TOKEN[self.kind]}({self.operand})"


class Event(NamedTuple):
    id: int
    thread: str
    op: Operation

    @property
    def kind(self) -> str:
        return self.op.kind

    @property
    def operand(self) -> str:
        return self.op.operand

    def __str__(self) -> str:
        return f"{self.thread}|{self.op}"


def thread_sort_key(name: str) -> Tuple[int, str]:
    """Natural order on thread names (T2 before T10)."""
    if _THREAD_RE.match(name):
        return (int(name[1:]), name)
    return (1 << 62, name)


def make_event(eid: int, thread: str, kind: str, operand: str) -> Event:
    """Build an event, checking tokens the same way the parser does."""
    if kind not in _KIND_TO_TOKEN:
        raise ValueError(f"unknown operation kind {kind!r}")
    if not _THREAD_RE.match(thread):
        raise ValueError(f"invalid thread id {thread!r}")
    if not _OPERAND_RE.match(operand):
        raise ValueError(f"invalid operand {operand!r}")
    if kind in THREAD_KINDS:
        if not _THREAD_RE.match(operand):
            raise ValueError(f"{kind} operand {operand!r} is not a thread id")
        if operand == thread:
            raise ValueError(f"{kind} operand names its own thread {thread}")
    if eid < 1:
        raise ValueError("event ids are positive")
    return Event(eid, thread, Operation(kind, operand))


@dataclass(frozen=True, eq=False)
class Trace:
    """An ordered sequence of events.

    ``origin`` maps ids of synthetic request events to the trace position of
    the acquire they were inserted in front of.  Every other event's position
    is its id.
    """

    events: Tuple[Event, ...]
    origin: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.events, tuple):
            object.__setattr__(self, "events", tuple(self.events))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.events == other.events and dict(self.origin) == dict(other.origin)

    def __hash__(self) -> int:
        return hash(self.events)

    @cached_property
    def threads(self) -> Tuple[str, ...]:
        """Thread ids in first-appearance order (fork/join operands included)."""
        seen: Dict[str, None] = {}
        for e in self.events:
            if e.thread not in seen:
                seen[e.thread] = None
            if e.op.kind in THREAD_KINDS and e.op.operand not in seen:
                seen[e.op.operand] = None
        return tuple(seen)

    @cached_property
    def by_id(self) -> Dict[int, Event]:
        return {e.id: e for e in self.events}

    @cached_property
    def index_of(self) -> Dict[int, int]:
        return {e.id: i for i, e in enumerate(self.events)}

    def position(self, eid: int) -> int:
        return self.origin.get(eid, eid)

    def is_synthetic(self, eid: int) -> bool:
        return eid in self.origin

    def projection(self, thread: str) -> Tuple[Event, ...]:
        return tuple(e for e in self.events if e.thread == thread)

    def source_length(self) -> int:
        """Number of events that were not inserted by normalization."""
        return len(self.events) - len(self.origin)


# ---------------------------------------------------------------- parsing

def parse_trace(text: str) -> Trace:
    events: List[Event] = []
    interned: Dict[Tuple[str, str], Operation] = {}
    eid = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE_RE.match(line)
        if m is None:
            raise TraceSyntaxError(lineno, f"cannot parse {raw!r}")
        thread, token, operand = m.groups()
        kind = _TOKEN_TO_KIND.get(token)
        if kind is None:
            raise TraceSyntaxError(lineno, f"unknown operation {token!r}")
        if kind in THREAD_KINDS:
            if not _THREAD_RE.match(operand):
                raise TraceSyntaxError(lineno, f"{token} operand {operand!r} is not a thread id")
            if operand == thread:
                raise TraceSyntaxError(lineno, f"{token} operand names its own thread {thread}")
        eid += 1
        op = interned.get((kind, operand))
        if op is None:
            op = interned[(kind, operand)] = Operation(kind, operand)
        events.append(Event(eid, thread, op))
    return Trace(tuple(events))


def read_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read())


def serialize_trace(trace: Trace | Iterable[Event]) -> str:
    return "".join(f"{e.thread}|{_KIND_TO_TOKEN[e.op.kind]}({e.op.operand})\n" for e in trace)


def trace_from_steps(steps: Iterable[Tuple[str, str, str]]) -> Trace:
    """Build a trace from ``(thread, kind, operand)`` triples, numbering from 1."""
    return Trace(tuple(make_event(i, t, k, o) for i, (t, k, o) in enumerate(steps, 1)))


# ------------------------------------------------------------- validation

class Violation(NamedTuple):
    rule: str
    events: Tuple[int, ...]
    message: str


class TraceWarning(NamedTuple):
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()
    warnings: Tuple[TraceWarning, ...] = ()
    # acquire id -> matching release id (absent when never released)
    matches: Mapping[int, int] = field(default_factory=dict, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    def locks_in_violation(self, trace: Trace) -> FrozenSet[str]:
        by_id = trace.by_id
        out = set()
        for v in self.violations:
            for eid in v.events:
                op = by_id[eid].op
                if op.kind in LOCK_KINDS:
                    out.add(op.operand)
        return frozenset(out)


_REQ_READING = "reading: a request is followed in its thread by its acquire or is the thread's last event"


def validate(trace: Trace, strict_requests: bool = False) -> ValidationReport:
    violations: List[Violation] = []
    warnings: List[TraceWarning] = []
    holder: Dict[str, Tuple[str, int]] = {}
    matches: Dict[int, int] = {}
    last_in_thread: Dict[str, Event] = {}
    pending_req: Dict[str, Event] = {}
    started: set = set()
    forked: set = set()
    joined: Dict[str, int] = {}

    for e in trace.events:
        t = e.thread
        kind, operand = e.op
        if t in joined:
            warnings.append(TraceWarning("event-after-join", f"event {e.id} of {t} follows its join at event {joined[t]}"))
        started.add(t)

        if strict_requests:
            req = pending_req.pop(t, None)
            if req is not None and not (kind == ACQUIRE and operand == req.op.operand):
                violations.append(Violation(
                    "WF-Req", (req.id, e.id),
                    f"request {req.id} on {req.op.operand} is followed in {t} by event {e.id} ({e.op}); {_REQ_READING}"))
            if kind == ACQUIRE:
                prev = last_in_thread.get(t)
                if prev is None or prev.op.kind != REQUEST or prev.op.operand != operand:
                    violations.append(Violation(
                        "WF-Req", (e.id,),
                        f"acquire {e.id} of {operand} is not immediately preceded in {t} by a request on {operand}"))
            elif kind == REQUEST:
                pending_req[t] = e

        if kind == ACQUIRE:
            h = holder.get(operand)
            if h is not None:
                violations.append(Violation(
                    "WF-Acq", (h[1], e.id),
                    f"lock {operand} acquired at {e.id} by {t} while held since {h[1]} by {h[0]}"))
            else:
                holder[operand] = (t, e.id)
        elif kind == RELEASE:
            h = holder.get(operand)
            if h is None:
                violations.append(Violation("WF-Rel", (e.id,), f"release {e.id} of {operand} by {t} without a prior acquire"))
            elif h[0] != t:
                violations.append(Violation(
                    "WF-Rel", (h[1], e.id),
                    f"release {e.id} of {operand} by {t} but the lock is held by {h[0]} since {h[1]}"))
            else:
                matches[h[1]] = e.id
                del holder[operand]
        elif kind == FORK:
            if operand in started:
                warnings.append(TraceWarning("fork-after-start", f"fork {e.id} of {operand} after that thread already has events"))
            if operand in forked:
                warnings.append(TraceWarning("double-fork", f"fork {e.id} of {operand} repeats an earlier fork"))
            forked.add(operand)
        elif kind == JOIN:
            joined.setdefault(operand, e.id)
        last_in_thread[t] = e

    return ValidationReport(tuple(violations), tuple(warnings), matches)


# ---------------------------------------------------------- normalization

def normalize_requests(trace: Trace) -> Trace:
    """Insert a synthetic request before every acquire that lacks one.

    Synthetic ids continue after the largest existing id; the returned
    trace's ``origin`` maps them to the position of their acquire.
    """
    events = trace.events
    next_id = max((e.id for e in events), default=0) + 1
    origin = dict(trace.origin)
    out: List[Event] = []
    last: Dict[str, Event] = {}
    interned: Dict[str, Operation] = {}
    for e in events:
        t = e.thread
        op = e.op
        prev = last.get(t)
        if prev is not None and prev.op.kind == REQUEST:
            if op.kind != ACQUIRE or op.operand != prev.op.operand:
                raise NormalizationError(
                    prev.id,
                    f"request {prev.id} on {prev.op.operand} is followed in {t} by event {e.id} ({op})")
        if op.kind == ACQUIRE and not (prev is not None and prev.op.kind == REQUEST):
            rop = interned.get(op.operand)
            if rop is None:
                rop = interned[op.operand] = Operation(REQUEST, op.operand)
            out.append(Event(next_id, t, rop))
            origin[next_id] = trace.position(e.id)
            next_id += 1
        out.append(e)
        last[t] = e
    if len(out) == len(events):
        return trace if dict(origin) == dict(trace.origin) else Trace(events, origin)
    return Trace(tuple(out), origin)


def request_for_acquire(trace: Trace) -> Dict[int, int]:
    """Map acquire id -> id of the request immediately before it in its thread."""
    out: Dict[int, int] = {}
    last: Dict[str, Event] = {}
    for e in trace.events:
        prev = last.get(e.thread)
        if e.op.kind == ACQUIRE and prev is not None and prev.op.kind == REQUEST and prev.op.operand == e.op.operand:
            out[e.id] = prev.id
        last[e.thread] = e
    return out


# ------------------------------------------------------ structural queries

@dataclass(frozen=True)
class CriticalSections:
    """Per-event acquires held (AH) and locks held (LH).

    An acquire belongs to its own critical section, as does its matching
    release.  Locks that are never released stay held to the end.
    """

    acquires_held: Mapping[int, Tuple[int, ...]]
    locks_held: Mapping[int, FrozenSet[str]]
    lock_of: Mapping[int, str]
    release_of: Mapping[int, int]

    def ah(self, eid: int) -> Tuple[int, ...]:
        return self.acquires_held[eid]

    def lh(self, eid: int) -> FrozenSet[str]:
        return self.locks_held[eid]

    def members(self, acquire_id: int) -> Tuple[int, ...]:
        return tuple(e for e, ah in self.acquires_held.items() if acquire_id in ah)


def critical_sections(trace: Trace) -> CriticalSections:
    held: Dict[str, List[Tuple[int, str]]] = {}
    ah: Dict[int, Tuple[int, ...]] = {}
    lh: Dict[int, FrozenSet[str]] = {}
    lock_of: Dict[int, str] = {}
    release_of: Dict[int, int] = {}
    for e in trace.events:
        stack = held.setdefault(e.thread, [])
        kind, operand = e.op
        if kind == ACQUIRE:
            stack.append((e.id, operand))
            lock_of[e.id] = operand
        ah[e.id] = tuple(a for a, _ in stack)
        lh[e.id] = frozenset(l for _, l in stack)
        if kind == RELEASE:
            for i in range(len(stack) - 1, -1, -1):
                if stack[i][1] == operand:
                    release_of[stack[i][0]] = e.id
                    del stack[i]
                    break
            else:
                raise ValueError(f"release {e.id} of {operand} has no matching acquire in {e.thread}")
    return CriticalSections(ah, lh, lock_of, release_of)


def last_write(trace: Trace, read_id: int) -> Optional[int]:
    ev = trace.by_id.get(read_id)
    if ev is None or ev.op.kind != READ:
        raise ValueError(f"event {read_id} is not a read")
    found = None
    for e in trace.events:
        if e.id == read_id:
            return found
        if e.op.kind == WRITE and e.op.operand == ev.op.operand:
            found = e.id
    return found


def last_writes(trace: Trace) -> Dict[int, Optional[int]]:
    """Last write for every read, in one pass."""
    lw: Dict[str, int] = {}
    out: Dict[int, Optional[int]] = {}
    for e in trace.events:
        kind = e.op.kind
        if kind == WRITE:
            lw[e.op.operand] = e.id
        elif kind == READ:
            out[e.id] = lw.get(e.op.operand)
    return out


def check_well_nested(trace: Trace) -> Tuple[bool, Tuple[int, ...]]:
    """True iff every release pops the top of its thread's lock stack.

    Witnesses are the ids of the releases that do not.
    """
    stacks: Dict[str, List[str]] = {}
    bad: List[int] = []
    for e in trace.events:
        kind = e.op.kind
        if kind == ACQUIRE:
            stacks.setdefault(e.thread, []).append(e.op.operand)
        elif kind == RELEASE:
            st = stacks.get(e.thread, [])
            if st and st[-1] == e.op.operand:
                st.pop()
            else:
                bad.append(e.id)
                if e.op.operand in st:
                    st.remove(e.op.operand)
    return (not bad, tuple(bad))


def restrict(trace: Trace, keep: Sequence[int] | Iterable[int]) -> Trace:
    """Sub-trace of the events whose ids are in ``keep`` (ids unchanged)."""
    keep = set(keep)
    origin = {k: v for k, v in trace.origin.items() if k in keep}
    return Trace(tuple(e for e in trace.events if e.id in keep), origin)
