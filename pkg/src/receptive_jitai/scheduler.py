"""Daily trigger plans for the three prompt blocks, and the personalised step goal."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

GOAL_SETTING = "goal_setting"
SELF_MONITORING = "self_monitoring"
GOAL_ACHIEVEMENT = "goal_achievement"

GOAL_SETTING_BLOCK = (480, 600)       # 08:00-10:00
SELF_MONITORING_BLOCK = (600, 1080)   # 10:00-18:00
GOAL_ACHIEVEMENT_MINUTE = 1260        # 21:00
SELF_MONITORING_SHARE = 0.5
GOAL_HISTORY_DAYS = 9


@dataclass(frozen=True)
class Trigger:
    kind: str
    minute: int


@dataclass(frozen=True)
class DayPlan:
    triggers: tuple[Trigger, ...]

    def kinds(self) -> list[str]:
        return [t.kind for t in self.triggers]


def plan_day(participant_id: str, day: int, rng: np.random.Generator,
             self_monitoring: bool | None = None) -> DayPlan:
    """Draw one day's triggers.

    ``self_monitoring`` forces inclusion of the midday prompt (used for exact
    50% cohorts); by default it is an independent fair coin.
    """
    triggers = [Trigger(GOAL_SETTING, int(rng.integers(*GOAL_SETTING_BLOCK)))]
    coin = rng.random() < SELF_MONITORING_SHARE
    minute = int(rng.integers(*SELF_MONITORING_BLOCK))
    if self_monitoring if self_monitoring is not None else coin:
        triggers.append(Trigger(SELF_MONITORING, minute))
    triggers.append(Trigger(GOAL_ACHIEVEMENT, GOAL_ACHIEVEMENT_MINUTE))
    return DayPlan(tuple(sorted(triggers, key=lambda t: t.minute)))


def self_monitoring_cohort(participant_ids: Sequence[str], rng: np.random.Generator) -> set[str]:
    """Exactly half (rounded down) of the participants, drawn without replacement."""
    ids = sorted(participant_ids)
    k = len(ids) // 2
    return {ids[i] for i in rng.choice(len(ids), size=k, replace=False)}


def step_goal(previous_steps: Sequence[int]) -> int:
    """Nearest-rank 60th percentile of up to the last nine daily step counts."""
    history = list(previous_steps)[-GOAL_HISTORY_DAYS:]
    if not history:
        raise ValueError("step goal needs at least one day of history")
    if any(s < 0 for s in history):
        raise ValueError("step counts must be nonnegative")
    ordered = sorted(history)
    rank = -(-6 * len(ordered) // 10)  # ceil(0.6 n) without float rounding
    return int(ordered[rank - 1])
