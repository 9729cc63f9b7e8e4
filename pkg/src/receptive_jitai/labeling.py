"""Turn a delivered message and its outcome into training labels for the adaptive model."""

from __future__ import annotations

from dataclasses import dataclass

from .delivery import DeliveryRecord
from .features import ContextSnapshot
from .models import LabeledInstance

RECEPTIVE, NON_RECEPTIVE = 1, 0


@dataclass(frozen=True)
class OutcomeRecord:
    delivery_time: int
    first_response_time: int | None = None
    reply_times: tuple[int, ...] = ()
    context_at_response: ContextSnapshot | None = None

    def __post_init__(self):
        object.__setattr__(self, "reply_times", tuple(sorted(self.reply_times)))
        if self.first_response_time is None:
            if self.reply_times or self.context_at_response is not None:
                raise ValueError("replies or response context without a first response")
            return
        if self.first_response_time < self.delivery_time:
            raise ValueError(
                f"response at {self.first_response_time} precedes delivery at {self.delivery_time}"
            )
        if not self.reply_times or self.reply_times[0] != self.first_response_time:
            raise ValueError("first_response_time must equal the earliest reply")
        if self.context_at_response is None:
            raise ValueError("a response needs its context")

    @property
    def responded(self) -> bool:
        return self.first_response_time is not None

    def to_event(self, participant_id: str, day: int, trigger_time: int) -> dict:
        return {
            "type": "outcome",
            "participant": participant_id,
            "day": day,
            "trigger_ts": trigger_time,
            "delivery_ts": self.delivery_time,
            "first_response_ts": self.first_response_time,
            "reply_ts": list(self.reply_times),
            "response_context": None if self.context_at_response is None else self.context_at_response.to_dict(),
        }

    @classmethod
    def from_event(cls, ev: dict) -> "OutcomeRecord":
        ctx = ev.get("response_context")
        return cls(
            delivery_time=int(ev["delivery_ts"]),
            first_response_time=None if ev.get("first_response_ts") is None else int(ev["first_response_ts"]),
            reply_times=tuple(int(t) for t in ev.get("reply_ts", ())),
            context_at_response=None if ctx is None else ContextSnapshot.from_dict(ctx),
        )


def label_outcome(delivery: DeliveryRecord, outcome: OutcomeRecord, jit_window: int = 600) -> list[LabeledInstance]:
    """Label the delivery context (and, for late replies, the response context).

    A reply within ``jit_window`` seconds (inclusive) marks the delivery moment
    receptive. A later reply marks the delivery moment non-receptive and the
    reply moment receptive. No reply marks the delivery moment non-receptive.
    """
    if outcome.delivery_time != delivery.delivery_time:
        raise ValueError("outcome does not belong to this delivery")
    t0 = delivery.delivery_time
    if not outcome.responded:
        return [LabeledInstance(delivery.context_at_delivery, NON_RECEPTIVE, t0)]
    delay = outcome.first_response_time - t0
    if delay < 0:
        raise ValueError("response precedes delivery")
    if delay <= jit_window:
        return [LabeledInstance(delivery.context_at_delivery, RECEPTIVE, t0)]
    return [
        LabeledInstance(delivery.context_at_delivery, NON_RECEPTIVE, t0),
        LabeledInstance(outcome.context_at_response, RECEPTIVE, outcome.first_response_time),
    ]


def label_event(participant_id: str, inst: LabeledInstance) -> dict:
    return {
        "type": "label",
        "participant": participant_id,
        "ts": inst.ts,
        "label": inst.label,
        "context": inst.snapshot.to_dict(),
    }
