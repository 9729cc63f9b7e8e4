"""Receptivity metrics for single initiating messages and their period aggregates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .delivery import DeliveryRecord
from .labeling import OutcomeRecord

JIT_WINDOW = 600


def jit_response(delivery_time: int, first_response_time: int | None, window: int = JIT_WINDOW) -> bool:
    """Reply within ``window`` seconds of delivery, boundary included."""
    if first_response_time is None:
        return False
    return response_delay(delivery_time, first_response_time) <= window


def response_delay(delivery_time: int, first_response_time: int) -> int:
    if first_response_time is None:
        raise ValueError("no response: delay undefined")
    delay = first_response_time - delivery_time
    if delay < 0:
        raise ValueError(f"negative response delay {delay}")
    return delay


def conversation_engagement(delivery_time: int, reply_times: Iterable[int], window: int = JIT_WINDOW) -> bool:
    """At least two replies in (delivery, delivery + window]."""
    n = sum(1 for t in reply_times if delivery_time < t <= delivery_time + window)
    return n >= 2


@dataclass(frozen=True)
class ReceptivitySummary:
    n_messages: int
    n_responded: int
    n_jit: int
    n_conversation: int
    total_delay: int
    # None marks "undefined" (no messages / no responses)
    jit_response_rate: float | None
    overall_response_rate: float | None
    conversation_rate: float | None
    average_response_delay: float | None

    @classmethod
    def from_counts(cls, n: int, responded: int, jit: int, conv: int, total_delay: int) -> "ReceptivitySummary":
        return cls(
            n, responded, jit, conv, total_delay,
            jit / n if n else None,
            responded / n if n else None,
            conv / n if n else None,
            total_delay / responded if responded else None,
        )

    def __add__(self, other: "ReceptivitySummary") -> "ReceptivitySummary":
        return ReceptivitySummary.from_counts(
            self.n_messages + other.n_messages,
            self.n_responded + other.n_responded,
            self.n_jit + other.n_jit,
            self.n_conversation + other.n_conversation,
            self.total_delay + other.total_delay,
        )

    @property
    def defined(self) -> bool:
        return self.n_messages > 0


Record = tuple[DeliveryRecord, OutcomeRecord]


def message_metrics(outcome: OutcomeRecord, window: int = JIT_WINDOW) -> tuple[bool, bool, bool, int | None]:
    """(jit, responded, conversation, delay) for one message."""
    t0 = outcome.delivery_time
    responded = outcome.first_response_time is not None
    delay = response_delay(t0, outcome.first_response_time) if responded else None
    return (
        jit_response(t0, outcome.first_response_time, window),
        responded,
        conversation_engagement(t0, outcome.reply_times, window),
        delay,
    )


def summarize(
    records: Iterable[Record],
    filter: Callable[[DeliveryRecord, OutcomeRecord], bool] | None = None,
    window: int = JIT_WINDOW,
) -> ReceptivitySummary:
    n = responded = jit = conv = total_delay = 0
    for delivery, outcome in records:
        if filter is not None and not filter(delivery, outcome):
            continue
        j, r, c, d = message_metrics(outcome, window)
        n += 1
        jit += j
        responded += r
        conv += c
        total_delay += d or 0
    return ReceptivitySummary.from_counts(n, responded, jit, conv, total_delay)


SUMMARY_COLUMNS = ("period", "model", "n", "jit_rate", "response_rate", "conversation_rate", "avg_delay_s")


def summary_row(period: str, model: str, s: ReceptivitySummary) -> list[str]:
    def fmt(v):
        return "NA" if v is None else f"{v:.6f}"
    return [period, model, str(s.n_messages), fmt(s.jit_response_rate), fmt(s.overall_response_rate),
            fmt(s.conversation_rate), fmt(s.average_response_delay)]
