from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from receptive_jitai.delivery import (
    ADAPTIVE, CONTROL, STATIC, DeliveryPolicy, DeliveryRecord, record_violations,
    run_delivery, select_model,
)

from conftest import random_snapshot

POLICY = DeliveryPolicy()


def stream(seed=0):
    rng = np.random.default_rng(seed)
    cache = {}

    def at(t):
        if t not in cache:
            cache[t] = random_snapshot(rng)
        return cache[t]
    return at


def test_policy_offsets():
    assert POLICY.poll_offsets == (0, 300, 600, 900, 1200, 1500, 1800)
    assert POLICY.fallback_offset == 1860
    with pytest.raises(ValueError):
        DeliveryPolicy(fallback_offset=1800)


def test_warm_up_selection_counts():
    rng = np.random.default_rng(0)
    counts = Counter(select_model(3, rng) for _ in range(60_000))
    assert counts[ADAPTIVE] == 0
    assert abs(counts[CONTROL] - 30_000) <= 500
    assert abs(counts[STATIC] - 30_000) <= 500


def test_post_warm_up_selection_counts():
    rng = np.random.default_rng(1)
    counts = Counter(select_model(8, rng) for _ in range(60_000))
    for m in (CONTROL, STATIC, ADAPTIVE):
        assert abs(counts[m] - 20_000) <= 500


def test_day_7_vs_8_support():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    day7 = {select_model(7, a) for _ in range(3000)}
    day8 = {select_model(8, b) for _ in range(3000)}
    assert len(day7) == 2 and len(day8) == 3


def test_select_model_rejects_day_zero():
    with pytest.raises(ValueError):
        select_model(0, np.random.default_rng())


def test_always_receptive_static():
    rec = run_delivery("p", 1, 1000, STATIC, stream(), lambda c: True)
    assert (rec.offset, rec.attempts, rec.model_attributed) == (0, 1, STATIC)


def test_never_receptive_falls_back_to_control():
    ctx = stream()
    rec = run_delivery("p", 1, 1000, STATIC, ctx, lambda c: False)
    assert rec.delivery_time == 1000 + 1860
    assert rec.model_attributed == CONTROL and rec.model_selected == STATIC
    assert rec.attempts == 7
    assert rec.context_at_delivery == ctx(1000 + 1860)


def test_receptive_at_fourth_poll():
    calls = []

    def fourth(c):
        calls.append(c)
        return len(calls) == 4
    rec = run_delivery("p", 1, 500, STATIC, stream(), fourth)
    assert (rec.delivery_time, rec.attempts, rec.model_attributed) == (1400, 4, STATIC)


def test_control_is_immediate():
    ctx = stream()
    rec = run_delivery("p", 2, 777, CONTROL, ctx)
    assert (rec.offset, rec.attempts, rec.model_attributed) == (0, 1, CONTROL)
    assert rec.context_at_delivery == ctx(777)


def test_context_is_read_at_each_poll_instant():
    seen = []
    ctx = stream(3)

    def provider(t):
        seen.append(t)
        return ctx(t)
    run_delivery("p", 1, 0, ADAPTIVE, provider, lambda c: False)
    assert seen == [0, 300, 600, 900, 1200, 1500, 1800, 1860]


@settings(max_examples=200)
@given(st.integers(1, 21), st.integers(0, 10**6), st.sampled_from([CONTROL, STATIC, ADAPTIVE]),
       st.lists(st.booleans(), min_size=7, max_size=7), st.integers(0, 1000))
def test_records_satisfy_invariants(day, trigger, model, answers, seed):
    if day <= POLICY.warm_up_days and model == ADAPTIVE:
        model = STATIC
    it = iter(answers)
    rec = run_delivery("p", day, trigger, model, stream(seed), lambda c: next(it))
    assert record_violations(rec) == []
    if rec.model_attributed in (STATIC, ADAPTIVE):
        assert rec.offset != POLICY.fallback_offset


@given(st.lists(st.booleans(), min_size=7, max_size=7), st.lists(st.booleans(), min_size=7, max_size=7))
def test_monotone_dominance(b_answers, extra):
    a_answers = [x or y for x, y in zip(b_answers, extra)]
    ctx = stream(1)
    ia, ib = iter(a_answers), iter(b_answers)
    ra = run_delivery("p", 9, 100, STATIC, ctx, lambda c: next(ia))
    rb = run_delivery("p", 9, 100, STATIC, ctx, lambda c: next(ib))
    assert ra.delivery_time <= rb.delivery_time


def test_violation_detector_flags_bad_records():
    ctx = stream()(0)
    bad = DeliveryRecord("p", 3, 0, ADAPTIVE, ADAPTIVE, 1860, 7, ctx)
    names = record_violations(bad)
    assert any("warm-up" in v for v in names)
    assert any("attribution" in v for v in names)
    assert record_violations(DeliveryRecord("p", 9, 0, CONTROL, CONTROL, 300, 2, ctx))


def test_event_roundtrip():
    rec = run_delivery("p7", 4, 3600, STATIC, stream(), lambda c: False)
    ev = rec.to_event()
    assert set(ev) == {"type", "participant", "day", "trigger_ts", "model_selected",
                       "model_attributed", "delivery_ts", "attempts", "context"}
    assert DeliveryRecord.from_event(ev) == rec
