"""Shared test routines.  These compare the engine against the oracle and
never call back into the routes they check."""
from dataclasses import replace

from deadlock_po import compute_lock_dependencies, normalize_requests
from deadlock_po.fuzzgen import GenParams, generate
from deadlock_po.oracle import order_fixpoint
from deadlock_po.trace import FORK, JOIN, RELEASE, request_for_acquire
from deadlock_po.vclock import less

# three generator profiles, cycled through by seed
PROFILES = (
    GenParams(threads=3, events=18, variables=2, p_mem=0.4, p_template=0.8, p_request=0.2, p_fork_join=0.1),
    GenParams(threads=3, events=18, variables=1, p_mem=0.8, p_template=0.8, p_request=0.2, p_fork_join=0.1),
    GenParams(threads=3, events=18, variables=2, p_mem=0.9, p_template=0.8, p_request=0.2, p_fork_join=0.1),
)


def corpus_params(i, filtered):
    base = PROFILES[i % len(PROFILES)]
    if filtered:
        return replace(base, seed=i, require_bounded=True, require_well_nested=True)
    return replace(base, seed=i, p_cross=0.2)


def corpus(n, filtered, offset=0):
    return [generate(corpus_params(offset + i, filtered)) for i in range(n)]


def order_mismatches(trace, mode, **kw):
    """Pairs of observation points where clock order and the fixpoint order
    disagree.  Observation points are reads, writes, requests and acquires;
    a request and its own acquire are not compared."""
    t = normalize_requests(trace)
    p = compute_lock_dependencies(t, mode, record_event_clocks=True, **kw)
    rel = order_fixpoint(t, mode)
    ec = p.event_clocks
    skip = {(r, a) for a, r in request_for_acquire(t).items()}
    ids = [e.id for e in t if e.id in ec and e.op.kind not in (RELEASE, FORK, JOIN)]
    bad = []
    for e in ids:
        for f in ids:
            if e != f and (e, f) not in skip and less(ec[e], ec[f]) != rel.less(e, f):
                bad.append((e, f))
    return bad


def quadratic_minimal(instances):
    """Instances not cycle-ordered after any other instance, straight from
    the definition over (acquire, request) pairs."""
    def before(b, a):
        return all(any(qb < ea.request_pos and ab in ea.acquires_held for ea in a.entries)
                   for ab, qb in zip(b.acquires, b.requests))
    return [a for a in instances if not any(b is not a and before(b, a) for b in instances)]
