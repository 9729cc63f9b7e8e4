import numpy as np
import pytest
from hypothesis import given, strategies as st

from receptive_jitai.delivery import CONTROL, STATIC, DeliveryRecord
from receptive_jitai.labeling import OutcomeRecord, label_event, label_outcome
from receptive_jitai.metrics import (
    ReceptivitySummary, conversation_engagement, jit_response, response_delay, summarize,
)

from conftest import random_snapshot

RNG = np.random.default_rng(0)
CTX_D = random_snapshot(RNG)
CTX_R = random_snapshot(RNG)


def delivery(t=10_000, model=STATIC):
    return DeliveryRecord("p", 1, t, model, model, t, 1, CTX_D)


def outcome(t0, delay=None, extra=()):
    if delay is None:
        return OutcomeRecord(t0)
    first = t0 + delay
    return OutcomeRecord(t0, first, (first, *extra), CTX_R)


# -- labeling ------------------------------------------------------------------------

def test_case_a_jit():
    d = delivery()
    labels = label_outcome(d, outcome(d.delivery_time, 540))
    assert [(i.snapshot, i.label) for i in labels] == [(CTX_D, 1)]


def test_case_b_late():
    d = delivery()
    labels = label_outcome(d, outcome(d.delivery_time, 3600))
    assert [(i.snapshot, i.label) for i in labels] == [(CTX_D, 0), (CTX_R, 1)]
    assert labels[1].ts == d.delivery_time + 3600


def test_case_c_none():
    d = delivery()
    labels = label_outcome(d, outcome(d.delivery_time))
    assert [(i.snapshot, i.label) for i in labels] == [(CTX_D, 0)]


def test_boundary_600_is_jit():
    d = delivery()
    assert [i.label for i in label_outcome(d, outcome(d.delivery_time, 600))] == [1]
    assert [i.label for i in label_outcome(d, outcome(d.delivery_time, 601))] == [0, 1]


def test_malformed_outcomes_rejected():
    with pytest.raises(ValueError):
        OutcomeRecord(1000, 990, (990,), CTX_R)
    with pytest.raises(ValueError):
        OutcomeRecord(1000, 1100, (1100,), None)
    with pytest.raises(ValueError):
        OutcomeRecord(1000, 1100, (1050, 1100), CTX_R)
    with pytest.raises(ValueError):
        OutcomeRecord(1000, None, (1100,))


def test_labels_do_not_depend_on_model():
    a, c = delivery(model=STATIC), delivery(model=CONTROL)
    o = outcome(a.delivery_time, 5000)
    assert label_outcome(a, o) == label_outcome(c, o)


@given(st.one_of(st.none(), st.integers(0, 20_000)))
def test_label_count_property(delay):
    d = delivery()
    labels = label_outcome(d, outcome(d.delivery_time, delay))
    late = delay is not None and delay > 600
    assert len(labels) == (2 if late else 1)


def test_label_event_shape():
    inst = label_outcome(delivery(), outcome(10_000, 30))[0]
    ev = label_event("p", inst)
    assert ev == {"type": "label", "participant": "p", "ts": 10_000, "label": 1, "context": CTX_D.to_dict()}


def test_outcome_event_roundtrip():
    o = outcome(500, 1234, extra=(2000,))
    assert OutcomeRecord.from_event(o.to_event("p", 1, 500)) == o
    o = outcome(500)
    assert OutcomeRecord.from_event(o.to_event("p", 1, 500)) == o


# -- metrics --------------------------------------------------------------------------

def test_jit_response_examples():
    assert jit_response(0, 599)
    assert jit_response(0, 600)
    assert not jit_response(0, 601)
    assert not jit_response(0, None)
    with pytest.raises(ValueError):
        jit_response(100, 50)


def test_response_delay_examples():
    assert response_delay(1000, 1000) == 0
    assert response_delay(1000, 1600) == 600
    with pytest.raises(ValueError):
        response_delay(1000, 990)


def test_conversation_examples():
    assert conversation_engagement(0, [60, 300])
    assert not conversation_engagement(0, [60])
    assert not conversation_engagement(0, [60, 700])
    assert conversation_engagement(0, [600, 1])
    assert not conversation_engagement(100, [100, 200])  # window is open at the start


def test_summarize_four_messages():
    recs = []
    for delay in (100, 1200, None, 300):
        d = delivery()
        recs.append((d, outcome(d.delivery_time, delay)))
    s = summarize(recs)
    assert s.jit_response_rate == 0.5
    assert s.overall_response_rate == 0.75
    assert s.average_response_delay == pytest.approx((100 + 1200 + 300) / 3)


def test_summarize_empty_is_undefined():
    s = summarize([])
    assert s.n_messages == 0 and not s.defined
    assert s.jit_response_rate is None and s.average_response_delay is None


def test_summarize_filter():
    recs = [(delivery(model=STATIC), outcome(10_000, 10)), (delivery(model=CONTROL), outcome(10_000))]
    s = summarize(recs, lambda d, o: d.model_attributed == CONTROL)
    assert s.n_messages == 1 and s.jit_response_rate == 0.0


def random_records(rng, n):
    recs = []
    for _ in range(n):
        d = delivery(t=int(rng.integers(0, 10**6)))
        u = rng.random()
        if u < 0.3:
            recs.append((d, OutcomeRecord(d.delivery_time)))
            continue
        first = d.delivery_time + int(rng.integers(0, 5000))
        extra = sorted(int(first + rng.integers(1, 900)) for _ in range(rng.integers(0, 4)))
        recs.append((d, OutcomeRecord(d.delivery_time, first, (first, *extra), CTX_R)))
    return recs


def naive_recount(recs):
    jit = resp = conv = 0
    delays = []
    for d, o in recs:
        t0 = d.delivery_time
        if o.first_response_time is not None:
            resp += 1
            delays.append(o.first_response_time - t0)
            if o.first_response_time - t0 <= 600:
                jit += 1
        in_window = [t for t in o.reply_times if t0 < t <= t0 + 600]
        if len(in_window) > 1:
            conv += 1
    n = len(recs)
    return jit / n, resp / n, conv / n, (sum(delays) / len(delays) if delays else None)


def test_summarize_matches_naive_recount():
    rng = np.random.default_rng(3)
    for _ in range(30):
        recs = random_records(rng, int(rng.integers(1, 1000)))
        s = summarize(recs)
        jit, resp, conv, delay = naive_recount(recs)
        assert s.jit_response_rate == pytest.approx(jit)
        assert s.overall_response_rate == pytest.approx(resp)
        assert s.conversation_rate == pytest.approx(conv)
        assert s.average_response_delay == pytest.approx(delay)
        assert s.jit_response_rate <= s.overall_response_rate
        assert s.conversation_rate <= s.overall_response_rate


def test_summary_of_concatenation_is_sum():
    rng = np.random.default_rng(4)
    a, b = random_records(rng, 200), random_records(rng, 350)
    whole = summarize(a + b)
    parts = summarize(a) + summarize(b)
    assert whole == parts
    assert whole.jit_response_rate == pytest.approx(
        (summarize(a).jit_response_rate * 200 + summarize(b).jit_response_rate * 350) / 550)
