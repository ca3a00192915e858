import pytest

from deadlock_po import analyze, normalize_requests, parse_trace
from deadlock_po.oracle import (BUDGET, NO, YES, Limits, confirmed, cycle_order_bruteforce,
                                enumerate_predictable_deadlocks, is_correctly_reordered_prefix,
                                is_predictable_deadlock, order_fixpoint, pattern_pairs, witness_text)

from conftest import load


def norm(name):
    return normalize_requests(load(name))


def test_t1p_is_predictable():
    v = is_predictable_deadlock(norm("t1p"), [(1, 2), (6, 7)])
    assert v.status == YES and v.yes
    ok, why = is_correctly_reordered_prefix(norm("t1p"), v.witness)
    assert ok, why


def test_known_witness_is_a_correct_reordering():
    assert is_correctly_reordered_prefix(load("t1p"), [1, 6, 2, 7]) == (True, "")


def test_t2p_is_not_predictable():
    assert is_predictable_deadlock(norm("t2p"), [(1, 2), (8, 9)]).status == NO


def test_t9_requests_make_it_predictable():
    assert is_predictable_deadlock(norm("t9"), [(1, 3), (7, 9)]).yes


def test_t11_budget_and_verdict():
    t = norm("t11")
    assert is_predictable_deadlock(t, [(7, 8), (20, 21)]).status == BUDGET
    assert is_predictable_deadlock(t, [(7, 8), (20, 21)], Limits(max_events=30)).status == NO


@pytest.mark.parametrize("prefix, ok", [
    ([1, 2, 3, 4, 5], True),
    ([5, 1], True),
    ([2], False),            # skips T1's first event
    ([5, 6, 1], False),      # l1 is taken twice
])
def test_reordering_rules_t1(prefix, ok):
    assert is_correctly_reordered_prefix(load("t1"), prefix)[0] is ok


def test_reordering_keeps_last_write():
    t = load("t2")
    assert not is_correctly_reordered_prefix(t, [7])[0]
    assert is_correctly_reordered_prefix(t, [1, 2, 3, 4, 5, 6, 7])[0]


def test_pattern_input_and_witness_text():
    r = analyze(load("t1"))
    (p,) = r.patterns
    pairs = pattern_pairs(r.trace, p)
    assert [r.trace.position(q) for _, q in pairs] == [2, 6]
    v = is_predictable_deadlock(r.trace, p)
    assert v.yes
    text = witness_text(r.trace, v.witness)
    assert text.endswith("|req(l1)\n") or text.endswith("|req(l2)\n")


def test_rejects_non_request():
    with pytest.raises(ValueError):
        is_predictable_deadlock(norm("t1"), [(1, 2), (5, 6)])


def test_enumerate_and_confirm():
    cands = enumerate_predictable_deadlocks(norm("t5"))
    assert [(c.requests, c.verdict.status, c.guard) for c in cands] == [((12, 14), YES, True)]
    assert confirmed(cands) == cands
    cands = enumerate_predictable_deadlocks(norm("t7"))
    assert [c.verdict.status for c in cands] == [NO] and confirmed(cands) == []


def test_order_fixpoint_reference_traces():
    t2p = norm("t2p")
    assert order_fixpoint(t2p, "trw").less(2, 9)
    t2pp = norm("t2pp")
    rel = order_fixpoint(t2pp, "trw")
    assert rel.concurrent(3, 8)
    assert rel.less(6, 11)
    assert (6, 11) in rel and (3, 8) not in rel


def test_order_fixpoint_modes():
    t = norm("two_reads")
    assert order_fixpoint(t, "trw").less(1, 3) and order_fixpoint(t, "trw").less(2, 3)
    assert order_fixpoint(t, "pwr").concurrent(1, 3)


def test_cycle_order_t4p():
    t = norm("t4p")
    outer = [(1, 2), (11, 12)]
    inner = [(5, 6), (15, 16)]
    assert cycle_order_bruteforce(t, outer, inner)
    assert not cycle_order_bruteforce(t, inner, outer)


def test_cycle_with_shared_guard_lock_is_marked():
    t = normalize_requests(parse_trace(
        "T1|acq(g)\nT1|acq(a)\nT1|acq(b)\nT1|rel(b)\nT1|rel(a)\nT1|rel(g)\n"
        "T2|acq(g)\nT2|acq(b)\nT2|acq(a)\nT2|rel(a)\nT2|rel(b)\nT2|rel(g)"))
    (c,) = enumerate_predictable_deadlocks(t)
    assert not c.guard and c.verdict.status == NO
