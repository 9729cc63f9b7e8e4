"""Per-message delivery: pick a timing model, poll it, fall back at minute 31."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .features import ContextSnapshot

CONTROL, STATIC, ADAPTIVE = "control", "static", "adaptive"
MODEL_IDS = (CONTROL, STATIC, ADAPTIVE)

ContextProvider = Callable[[int], ContextSnapshot]
ReceptivityClassifier = Callable[[ContextSnapshot], bool]


@dataclass(frozen=True)
class DeliveryPolicy:
    warm_up_days: int = 7
    retry_interval: int = 300
    n_polls: int = 7
    fallback_offset: int = 1860
    jit_window: int = 600

    def __post_init__(self):
        if self.retry_interval <= 0 or self.n_polls < 1:
            raise ValueError("need a positive retry interval and at least one poll")
        if self.fallback_offset <= self.poll_offsets[-1]:
            raise ValueError("fallback must come after the last poll")

    @property
    def poll_offsets(self) -> tuple[int, ...]:
        return tuple(k * self.retry_interval for k in range(self.n_polls))

    @property
    def allowed_offsets(self) -> frozenset[int]:
        return frozenset(self.poll_offsets) | {self.fallback_offset}


@dataclass(frozen=True)
class DeliveryRecord:
    participant_id: str
    day: int
    trigger_time: int
    model_selected: str
    model_attributed: str
    delivery_time: int
    attempts: int
    context_at_delivery: ContextSnapshot

    @property
    def offset(self) -> int:
        return self.delivery_time - self.trigger_time

    def to_event(self) -> dict:
        return {
            "type": "delivery",
            "participant": self.participant_id,
            "day": self.day,
            "trigger_ts": self.trigger_time,
            "model_selected": self.model_selected,
            "model_attributed": self.model_attributed,
            "delivery_ts": self.delivery_time,
            "attempts": self.attempts,
            "context": self.context_at_delivery.to_dict(),
        }

    @classmethod
    def from_event(cls, ev: dict) -> "DeliveryRecord":
        return cls(
            participant_id=str(ev["participant"]),
            day=int(ev["day"]),
            trigger_time=int(ev["trigger_ts"]),
            model_selected=ev["model_selected"],
            model_attributed=ev["model_attributed"],
            delivery_time=int(ev["delivery_ts"]),
            attempts=int(ev["attempts"]),
            context_at_delivery=ContextSnapshot.from_dict(ev["context"]),
        )


def select_model(day_in_study: int, rng: np.random.Generator, policy: DeliveryPolicy = DeliveryPolicy()) -> str:
    """Uniform over control/static during warm-up, over all three models afterwards."""
    if day_in_study < 1:
        raise ValueError("study days start at 1")
    if day_in_study <= policy.warm_up_days:
        return MODEL_IDS[int(rng.integers(2))]
    return MODEL_IDS[int(rng.integers(3))]


def run_delivery(
    participant_id: str,
    day: int,
    trigger_time: int,
    model: str,
    context_provider: ContextProvider,
    classifier: ReceptivityClassifier | None = None,
    policy: DeliveryPolicy = DeliveryPolicy(),
) -> DeliveryRecord:
    """Deliver one initiating message.

    Control delivers at the trigger. Static and adaptive ask ``classifier`` at
    each poll offset and deliver at the first receptive answer; when every
    poll says no, the message goes out at the fallback offset and is
    attributed to control.
    """
    if model not in MODEL_IDS:
        raise ValueError(f"unknown model {model!r}")
    if model == CONTROL:
        return DeliveryRecord(participant_id, day, trigger_time, CONTROL, CONTROL,
                              trigger_time, 1, context_provider(trigger_time))
    if classifier is None:
        raise ValueError(f"model {model!r} needs a classifier")
    for attempt, offset in enumerate(policy.poll_offsets, start=1):
        t = trigger_time + offset
        ctx = context_provider(t)
        if classifier(ctx):
            return DeliveryRecord(participant_id, day, trigger_time, model, model, t, attempt, ctx)
    t = trigger_time + policy.fallback_offset
    return DeliveryRecord(participant_id, day, trigger_time, model, CONTROL, t,
                          policy.n_polls, context_provider(t))


def record_violations(rec: DeliveryRecord, policy: DeliveryPolicy = DeliveryPolicy()) -> list[str]:
    """Names of the delivery invariants ``rec`` breaks; empty when it is well formed."""
    bad = []
    if rec.offset not in policy.allowed_offsets:
        bad.append(f"offset {rec.offset} not an allowed offset")
    fallback = rec.offset == policy.fallback_offset
    if rec.model_selected != CONTROL and fallback != (rec.model_attributed == CONTROL):
        bad.append("fallback and control attribution disagree")
    if rec.model_selected == CONTROL and rec.model_attributed != CONTROL:
        bad.append("control selection attributed elsewhere")
    if rec.model_selected == CONTROL and (rec.offset != 0 or rec.attempts != 1):
        bad.append("control delivery not immediate")
    if not fallback and rec.model_selected != CONTROL and rec.attempts != rec.offset // policy.retry_interval + 1:
        bad.append("attempt count does not match poll offset")
    if fallback and rec.attempts != policy.n_polls:
        bad.append("fallback without all polls attempted")
    if rec.model_attributed in (STATIC, ADAPTIVE) and fallback:
        bad.append("model attribution at fallback offset")
    if rec.day <= policy.warm_up_days and rec.model_selected == ADAPTIVE:
        bad.append("adaptive selected during warm-up")
    return bad
