"""Seeded generator of small well-formed traces for differential testing."""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import List, Tuple

from .trace import (ACQUIRE, FORK, JOIN, READ, RELEASE, REQUEST, WRITE, Event, Operation, Trace,
                    check_well_nested,
                    make_event, normalize_requests)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenParams:
    seed: int = 0
    threads: int = 3
    locks: int = 3
    variables: int = 2
    events: int = 18
    min_events: int = 8
    nesting_depth: int = 2
    p_fork_join: float = 0.0
    p_template: float = 0.5   # chance that a thread block is a deadlock template
    p_cross: float = 0.0      # chance of releasing the outer lock first
    p_request: float = 0.0    # chance of an explicit request before a nested acquire
    p_mem: float = 0.4        # density of reads/writes around template acquires
    require_bounded: bool = False
    require_well_nested: bool = False
    max_attempts: int = 2000

    def __post_init__(self):
        if self.threads < 1 or self.locks < 1:
            raise ValueError("need at least one thread and one lock")
        if self.min_events > self.events:
            raise ValueError("min_events exceeds events")
        if self.nesting_depth < 1:
            raise ValueError("nesting_depth must be positive")


Step = Tuple[str, str]  # (kind, operand)


def _mem(rng: random.Random, p: GenParams) -> List[Step]:
    if p.variables <= 0:
        return []
    x = f"x{rng.randrange(p.variables)}"
    return [(rng.choice((READ, WRITE)), x)]


def _section(rng: random.Random, p: GenParams, held: List[str], depth: int, budget: int) -> List[Step]:
    free = [f"l{i}" for i in range(1, p.locks + 1) if f"l{i}" not in held]
    if not free or depth <= 0 or budget < 2:
        return _mem(rng, p)
    l = rng.choice(free)
    body: List[Step] = []
    inner_budget = budget - 2
    while inner_budget > 0 and rng.random() < 0.6:
        if rng.random() < 0.5 and depth > 1:
            part = _section(rng, p, held + [l], depth - 1, inner_budget)
        else:
            part = _mem(rng, p)
        if not part:
            break
        body.extend(part)
        inner_budget -= len(part)
    out: List[Step] = []
    if held and p.p_request and rng.random() < p.p_request:
        out.append((REQUEST, l))
    out.append((ACQUIRE, l))
    out.extend(body)
    out.append((RELEASE, l))
    return out


def _template(rng: random.Random, p: GenParams, first: str, second: str) -> List[Step]:
    """Nested acquisition of two locks, with optional accesses around them."""
    out: List[Step] = []
    if rng.random() < p.p_mem:
        out.extend(_mem(rng, p))
    out.append((ACQUIRE, first))
    if rng.random() < p.p_mem:
        out.extend(_mem(rng, p))
    if p.p_request and rng.random() < p.p_request:
        out.append((REQUEST, second))
    out.append((ACQUIRE, second))
    if rng.random() < p.p_mem * 0.75:
        out.extend(_mem(rng, p))
    if rng.random() < p.p_cross:
        out += [(RELEASE, first), (RELEASE, second)]
    else:
        out += [(RELEASE, second), (RELEASE, first)]
    if rng.random() < p.p_mem:
        out.extend(_mem(rng, p))
    return out


def _cross_nested(steps: List[Step], rng: random.Random, p: GenParams) -> List[Step]:
    # swap the two releases closing a directly nested pair
    if p.p_cross <= 0:
        return steps
    out = list(steps)
    for i in range(len(out) - 1):
        if out[i][0] == RELEASE and out[i + 1][0] == RELEASE and rng.random() < p.p_cross:
            out[i], out[i + 1] = out[i + 1], out[i]
    return out


def _programs(rng: random.Random, p: GenParams) -> List[List[Step]]:
    per = max(2, (p.events + p.threads - 1) // p.threads + 2)
    locks = [f"l{i}" for i in range(1, p.locks + 1)]
    progs: List[List[Step]] = [[] for _ in range(p.threads)]
    # a ring over some of the threads: thread k takes lock k then lock k+1
    if p.locks >= 2 and p.threads >= 2 and rng.random() < p.p_template:
        k = rng.randint(2, min(p.threads, p.locks))
        ring_threads = rng.sample(range(p.threads), k)
        ring_locks = rng.sample(locks, k)
        for j, ti in enumerate(ring_threads):
            progs[ti].extend(_template(rng, p, ring_locks[j], ring_locks[(j + 1) % k]))
    for ti in range(p.threads):
        prog = progs[ti]
        while len(prog) < per:
            if p.locks >= 2 and rng.random() < p.p_template * 0.3:
                a, b = rng.sample(locks, 2)
                prog.extend(_template(rng, p, a, b))
            elif rng.random() < 0.7:
                prog.extend(_section(rng, p, [], p.nesting_depth, per - len(prog) + 2))
            else:
                prog.extend(_mem(rng, p) or _section(rng, p, [], 1, 2))
        progs[ti] = _cross_nested(prog, rng, p)
    return progs


def _schedule(rng: random.Random, p: GenParams, progs: List[List[Step]], limit: int,
              fork_join: bool) -> List[Tuple[str, str, str]]:
    names = [f"T{i + 1}" for i in range(len(progs))]
    progs = [list(pr) for pr in progs]
    if fork_join and len(progs) > 1:
        progs[0] = [(FORK, n) for n in names[1:]] + progs[0] + [(JOIN, n) for n in names[1:]]
    pos = [0] * len(progs)
    holder = {}
    started = {0} if fork_join else set(range(len(progs)))
    out: List[Tuple[str, str, str]] = []
    while len(out) < limit:
        ready = []
        for i, pr in enumerate(progs):
            if i not in started or pos[i] >= len(pr):
                continue
            kind, x = pr[pos[i]]
            if kind == ACQUIRE and x in holder:
                continue
            if kind == JOIN:
                j = names.index(x)
                if pos[j] < len(progs[j]):
                    continue
            if kind == REQUEST:
                # the acquire must be able to follow right away
                if x in holder:
                    continue
            ready.append(i)
        if not ready:
            break
        i = rng.choice(ready)
        kind, x = progs[i][pos[i]]
        out.append((names[i], kind, x))
        pos[i] += 1
        if kind == REQUEST:
            # keep request and acquire adjacent in the thread
            out.append((names[i], ACQUIRE, x))
            pos[i] += 1
            holder[x] = i
        elif kind == ACQUIRE:
            holder[x] = i
        elif kind == RELEASE:
            holder.pop(x, None)
        elif kind == FORK:
            started.add(names.index(x))
    return out[:limit]


def _is_bounded(trace: Trace) -> bool:
    from .engine import compute_lock_dependencies
    p1 = compute_lock_dependencies(normalize_requests(trace), "trw")
    return bool(p1.diagnostics.trw_bounded)


def generate(params: GenParams) -> Trace:
    """One trace, a pure function of ``params``."""
    rng = random.Random(params.seed)
    for _ in range(params.max_attempts):
        fj = params.p_fork_join > 0 and rng.random() < params.p_fork_join
        progs = _programs(rng, params)
        limit = rng.randint(params.min_events, params.events)
        steps = _schedule(rng, params, progs, limit, fj)
        # a request must not end up separated from its acquire by truncation
        while steps and steps[-1][1] == REQUEST:
            steps.pop()
        if len(steps) < min(params.min_events, 2):
            continue
        trace = Trace(tuple(make_event(i, t, k, o) for i, (t, k, o) in enumerate(steps, 1)))
        if params.require_well_nested and not check_well_nested(trace)[0]:
            continue
        if params.require_bounded and not _is_bounded(trace):
            continue
        return trace
    raise GenerationError(f"no trace met the requirements within {params.max_attempts} attempts")


def generate_many(params: GenParams, count: int) -> List[Trace]:
    return [generate(replace(params, seed=params.seed * 1_000_003 + i)) for i in range(count)]


# ------------------------------------------------------ synthetic workloads

def synthetic_trace(n_events: int, threads: int = 8, seed: int = 0, p_shared: float = 0.02) -> Trace:
    """A large low-conflict trace of about ``n_events`` events.

    Each thread mostly works on its own lock and variable; now and then it
    updates a shared counter under a shared lock, sometimes nested inside
    its own lock.  Blocks are emitted whole, so the trace is well formed.
    """
    rng = random.Random(seed)
    names = [f"T{i + 1}" for i in range(threads)]
    ops = {}

    def op(kind, x):
        o = ops.get((kind, x))
        if o is None:
            o = ops[(kind, x)] = Operation(kind, x)
        return o

    out: List[Event] = []
    eid = 0
    while eid < n_events:
        ti = rng.randrange(threads)
        t = names[ti]
        own_l, own_x = f"p{ti}", f"v{ti}"
        r = rng.random()
        if r < p_shared:
            block = [(ACQUIRE, own_l), (ACQUIRE, "s"), (READ, "c"), (WRITE, "c"),
                     (RELEASE, "s"), (RELEASE, own_l)]
        elif r < 2 * p_shared:
            block = [(ACQUIRE, "s"), (READ, "c"), (WRITE, "c"), (RELEASE, "s")]
        else:
            block = [(ACQUIRE, own_l), (READ, own_x), (WRITE, own_x), (RELEASE, own_l)]
        for kind, x in block:
            eid += 1
            out.append(Event(eid, t, op(kind, x)))
    return Trace(tuple(out))


def loop_trace(iterations: int) -> Trace:
    """T2 takes l2 then l1 once; T1 then takes l1 then l2 ``iterations`` times
    while writing a private variable."""
    steps = [("T2", ACQUIRE, "l2"), ("T2", ACQUIRE, "l1"), ("T2", RELEASE, "l1"), ("T2", RELEASE, "l2")]
    body = [("T1", ACQUIRE, "l1"), ("T1", ACQUIRE, "l2"), ("T1", WRITE, "y"),
            ("T1", RELEASE, "l2"), ("T1", RELEASE, "l1")]
    for _ in range(iterations):
        steps.extend(body)
    ops = {}
    events = []
    for i, (t, k, x) in enumerate(steps, 1):
        o = ops.get((k, x))
        if o is None:
            o = ops[(k, x)] = Operation(k, x)
        events.append(Event(i, t, o))
    return Trace(tuple(events))
