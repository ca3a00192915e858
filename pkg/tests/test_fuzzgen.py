from dataclasses import replace

import pytest

from deadlock_po import analyze, validate
from deadlock_po.fuzzgen import GenerationError, GenParams, generate, generate_many, loop_trace, synthetic_trace
from deadlock_po.trace import check_well_nested


def test_deterministic():
    p = GenParams(seed=42, p_request=0.3, p_fork_join=0.3)
    assert generate(p) == generate(p)
    assert generate_many(p, 5) == generate_many(p, 5)
    assert generate(p) != generate(replace(p, seed=43))


def test_generated_traces_validate():
    for t in generate_many(GenParams(seed=1, p_request=0.3, p_fork_join=0.3, p_cross=0.3), 200):
        assert validate(t).ok
        assert 2 <= len(t) <= 18


def test_well_nested_filter():
    for t in generate_many(GenParams(seed=2, p_cross=0.5, require_well_nested=True), 100):
        assert check_well_nested(t)[0]


def test_bounded_filter():
    for t in generate_many(GenParams(seed=3, require_bounded=True), 50):
        assert analyze(t).trw_bounded


def test_defaults_produce_cycles():
    # measured at 10%; pinned at the 5% floor
    traces = generate_many(GenParams(seed=0), 1000)
    with_chain = sum(1 for t in traces if analyze(t, block="off").stages["chains"] > 0)
    assert with_chain >= 50


def test_params_checked():
    with pytest.raises(ValueError):
        GenParams(threads=0)
    with pytest.raises(ValueError):
        GenParams(events=5, min_events=8)


def test_impossible_filter_gives_up():
    with pytest.raises(GenerationError):
        generate(GenParams(seed=0, require_bounded=True, max_attempts=0))


def test_synthetic_trace_shape():
    t = synthetic_trace(10_000, threads=8, seed=1)
    assert 10_000 <= len(t) < 10_006
    assert len(t.threads) == 8
    assert validate(t).ok and check_well_nested(t)[0]


def test_loop_trace_shape():
    t = loop_trace(3)
    assert len(t) == 4 + 15 and validate(t).ok
