import numpy as np
import pytest
from hypothesis import given, strategies as st

from receptive_jitai.scheduler import (
    GOAL_ACHIEVEMENT, GOAL_SETTING, SELF_MONITORING, plan_day, self_monitoring_cohort, step_goal,
)


def test_plan_statistics():
    rng = np.random.default_rng(0)
    plans = [plan_day("p", 1, rng) for _ in range(100_000)]
    n_sm = sum(SELF_MONITORING in p.kinds() for p in plans)
    assert abs(n_sm - 50_000) <= 700
    assert all(p.triggers[-1].kind == GOAL_ACHIEVEMENT and p.triggers[-1].minute == 1260 for p in plans)

    gs = np.array([p.triggers[0].minute for p in plans])
    hist, _ = np.histogram(gs, bins=np.arange(480, 601, 10))
    np.testing.assert_allclose(hist / len(gs), 1 / 12, atol=0.01)


@given(st.integers(0, 2**32 - 1), st.integers(1, 21))
def test_plan_invariants(seed, day):
    plan = plan_day("p", day, np.random.default_rng(seed))
    kinds = plan.kinds()
    assert len(set(kinds)) == len(kinds)
    minutes = [t.minute for t in plan.triggers]
    assert minutes == sorted(minutes)
    for t in plan.triggers:
        if t.kind == GOAL_SETTING:
            assert 480 <= t.minute < 600
        elif t.kind == SELF_MONITORING:
            assert 600 <= t.minute < 1080
        else:
            assert t.minute == 1260


def test_forced_self_monitoring():
    rng = np.random.default_rng(1)
    assert all(SELF_MONITORING in plan_day("p", 1, rng, True).kinds() for _ in range(50))
    assert all(SELF_MONITORING not in plan_day("p", 1, rng, False).kinds() for _ in range(50))


def test_exact_half_cohort():
    ids = [f"p{i}" for i in range(83)]
    cohort = self_monitoring_cohort(ids, np.random.default_rng(2))
    assert len(cohort) == 41 and cohort <= set(ids)


def test_step_goal_examples():
    assert step_goal([5000] * 9) == 5000
    assert step_goal(list(range(1000, 10_000, 1000))) == 6000
    assert step_goal([4000]) == 4000
    with pytest.raises(ValueError):
        step_goal([])


def test_step_goal_uses_last_nine_days():
    assert step_goal([100_000] * 5 + [1000] * 9) == 1000


@given(st.lists(st.integers(0, 30_000), min_size=1, max_size=9), st.data())
def test_step_goal_monotone(history, data):
    i = data.draw(st.integers(0, len(history) - 1))
    bump = data.draw(st.integers(0, 10_000))
    raised = list(history)
    raised[i] += bump
    assert step_goal(raised) >= step_goal(history)


@given(st.lists(st.integers(0, 30_000), min_size=1, max_size=9))
def test_step_goal_nearest_rank(history):
    # brute force: smallest value with at least 60% of the data at or below it
    n = len(history)
    brute = min(v for v in history if 10 * sum(h <= v for h in history) >= 6 * n)
    assert step_goal(history) == brute
