"""Synthetic field study with known ground-truth receptivity.

Every participant has a true receptivity logit that is linear in the encoded
context (optionally with one interaction term). A minute-resolution context
stream is generated per participant-day, prompts are delivered through the
real delivery engine, replies are drawn from the true logit, and the labels
feed the participant's adaptive model exactly as in deployment.

Randomness is keyed by ``(seed, participant index, day, purpose)`` through
``numpy.random.SeedSequence``, so results do not depend on the order in
which participants are processed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .delivery import ADAPTIVE, CONTROL, STATIC, DeliveryPolicy, run_delivery, select_model
from .features import (
    ACTIVITIES, BATTERY_STATUSES, N_FEATURES, SECONDS_PER_DAY, ContextSnapshot, DatasetRow,
    encode, time_of_day_from_clock,
)
from .labeling import OutcomeRecord, label_event, label_outcome
from .models import (
    AdaptiveModel, LinearModel, TrainingSet, iht_undersample, train_linear_svm, train_logistic,
)
from .scheduler import GOAL_SETTING, plan_day, self_monitoring_cohort, step_goal

# true receptivity logit shared by the population, in encoded-feature order
BASE_WEIGHTS = np.array([
    0.2,               # weekend
    -0.3, 0.0, 0.4,    # morning, afternoon, evening
    0.2, 0.0, 0.1,     # charging, discharging, full
    0.3,               # battery level
    2.0,               # unlocked
    -2.0,              # lock change time (long since last change -> less receptive)
    0.3,               # wifi
    0.6, 0.3, -0.8, -1.2, -1.5,  # still, on_foot, on_bike, running, in_vehicle
])
BASE_BIAS = -1.5
# per-feature scale of the individual deviations at heterogeneity 1
DEVIATION_SCALE = np.array([
    0.5,
    0.5, 0.5, 0.5,
    0.3, 0.3, 0.3,
    0.3,
    1.5,
    1.5,
    0.5,
    1.0, 1.0, 1.0, 1.0, 1.0,
])
BIAS_DEVIATION = 0.5
INTERACTION_WEIGHT = 1.5  # unlocked x evening, misspecified-truth mode only

_IDX_UNLOCKED, _IDX_EVENING = 8, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    n_participants: int = 83
    study_days: int = 21
    warm_up_days: int = 7
    seed: int = 0
    heterogeneity: float = 1.0
    habituation: float = -0.05
    context_strength: float = 1.0
    replicates: int = 1
    late_response_prob: float = 0.5
    engagement_prob: float = 0.65
    exact_half_self_monitoring: bool = False
    misspecified_truth: bool = False
    dropout_hazard: float = 0.0
    p2_params: dict = field(default_factory=dict)
    # prior-study generator, used to train the static and P1 models
    prior_participants: int = 141
    prior_days: int = 21
    static_model: str | None = None
    p1_model: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_participants", "study_days", "replicates", "prior_participants", "prior_days"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if not 0 <= self.warm_up_days < self.study_days:
            raise ConfigError("warm_up_days must lie in [0, study_days)")
        if self.habituation > 0:
            raise ConfigError("habituation must be <= 0")
        if self.heterogeneity < 0:
            raise ConfigError("heterogeneity must be >= 0")
        for name in ("late_response_prob", "engagement_prob", "dropout_hazard"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def policy(self) -> DeliveryPolicy:
        return DeliveryPolicy(warm_up_days=self.warm_up_days)


# named configurations used by the experiment scripts and acceptance suite
PRESETS = {
    "default": {},
    "heterogeneous": {"heterogeneity": 2.0},
    "null": {"heterogeneity": 0.0, "habituation": 0.0},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class ContextRegime:
    start_weekday: int          # 0 = Monday for study day 1
    wake_minute: int
    sleep_minute: int
    works_weekdays: bool
    commute_minutes: int
    commute_activity: str
    wifi_at_work: bool
    unlocked_mean: float        # minutes
    locked_mean: float          # minutes
    drain_per_hour: float
    active_share: float         # share of awake time spent moving


@dataclass(frozen=True)
class ParticipantProfile:
    index: int
    participant_id: str
    weights: np.ndarray = field(compare=False)
    bias: float
    habituation: float
    late_response_prob: float
    late_delay_mu: float
    late_delay_sigma: float
    engagement_prob: float
    regime: ContextRegime
    interaction: float = 0.0
    step_mean: float = 7000.0

    def true_logit(self, x: np.ndarray, day: int, habituated: bool = True) -> float:
        z = float(self.weights @ x) + self.bias
        if self.interaction:
            z += self.interaction * x[_IDX_UNLOCKED] * x[_IDX_EVENING]
        if habituated:
            z += self.habituation * (day - 1)
        return z


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


# stream purposes
_POPULATION, _CONTEXT, _PLAN, _SELECT, _RESPONSE, _STEPS, _COHORT, _DROPOUT = range(8)
_PRIOR_SALT = 7919


def generate_population(config: ExperimentConfig, seed: int | None = None) -> list[ParticipantProfile]:
    seed = config.seed if seed is None else seed
    rng = _rng(seed, _POPULATION)
    het = config.heterogeneity
    base_w = config.context_strength * BASE_WEIGHTS
    profiles = []
    for i in range(config.n_participants):
        dev = rng.standard_normal(N_FEATURES)
        dev_b = rng.standard_normal()
        regime = ContextRegime(
            start_weekday=int(rng.integers(7)),
            wake_minute=int(rng.integers(360, 510)),
            sleep_minute=int(rng.integers(1320, 1440)),
            works_weekdays=bool(rng.random() < 0.75),
            commute_minutes=int(rng.integers(15, 50)),
            commute_activity=str(rng.choice(["in_vehicle", "in_vehicle", "on_foot", "on_bike"])),
            wifi_at_work=bool(rng.random() < 0.5),
            unlocked_mean=float(rng.uniform(2.0, 6.0)),
            locked_mean=float(rng.uniform(8.0, 30.0)),
            drain_per_hour=float(rng.uniform(0.5, 1.1)),
            active_share=float(rng.uniform(0.05, 0.2)),
        )
        profiles.append(ParticipantProfile(
            index=i,
            participant_id=f"P{i:03d}",
            weights=base_w + het * DEVIATION_SCALE * dev,
            bias=BASE_BIAS + het * BIAS_DEVIATION * dev_b,
            habituation=config.habituation,
            late_response_prob=config.late_response_prob,
            late_delay_mu=float(math.log(2400) + 0.3 * rng.standard_normal()),
            late_delay_sigma=1.0,
            engagement_prob=config.engagement_prob,
            regime=regime,
            interaction=INTERACTION_WEIGHT if config.misspecified_truth else 0.0,
            step_mean=float(rng.uniform(4000, 11000)),
        ))
    return profiles


# ---------------------------------------------------------------------------
# context streams

_ACT = {a: i for i, a in enumerate(ACTIVITIES)}


class DayContext:
    """Minute-resolution, piecewise-constant context for one participant-day."""

    def __init__(self, day: int, weekend: bool, activity, unlocked, last_change, battery, status, wifi):
        self.day = day
        self.day_type = "weekend" if weekend else "weekday"
        self.activity = activity
        self.unlocked = unlocked
        self.last_change = last_change
        self.battery = battery
        self.status = status
        self.wifi = wifi
        self._cache: dict[int, ContextSnapshot] = {}

    def at_minute(self, m: int) -> ContextSnapshot:
        snap = self._cache.get(m)
        if snap is None:
            snap = ContextSnapshot(
                day_type=self.day_type,
                time_of_day=time_of_day_from_clock(m),
                battery_status=BATTERY_STATUSES[self.status[m]],
                battery_level=int(self.battery[m]),
                lock_state="unlocked" if self.unlocked[m] else "locked",
                lock_change_time=60 * int(m - self.last_change[m]),
                wifi="connected" if self.wifi[m] else "disconnected",
                activity=ACTIVITIES[self.activity[m]],
            )
            self._cache[m] = snap
        return snap

    def __call__(self, t: int) -> ContextSnapshot:
        day0 = (self.day - 1) * SECONDS_PER_DAY
        if not day0 <= t < day0 + SECONDS_PER_DAY:
            raise ValueError(f"time {t} outside study day {self.day}")
        return self.at_minute((t - day0) // 60)


def _fill_segments(arr, start, stop, rng, mean_dwell, choices, probs):
    m = start
    while m < stop:
        dwell = max(1, int(round(rng.exponential(mean_dwell))))
        arr[m:min(stop, m + dwell)] = _ACT[choices[rng.choice(len(choices), p=probs)]]
        m += dwell


def simulate_context(profile: ParticipantProfile, day: int, seed: int) -> DayContext:
    r = profile.regime
    rng = _rng(seed, _CONTEXT, profile.index, day)
    weekend = (r.start_weekday + day - 1) % 7 >= 5
    wake = int(np.clip(r.wake_minute + (60 if weekend else 0) + rng.normal(0, 20), 240, 720))
    sleep = int(np.clip(r.sleep_minute + rng.normal(0, 30), wake + 600, 1439))

    home = np.ones(1440, dtype=bool)
    activity = np.full(1440, _ACT["still"], dtype=np.int8)
    if r.works_weekdays and not weekend:
        leave = wake + int(rng.integers(40, 90))
        arrive = leave + r.commute_minutes
        depart = min(sleep - 2 * r.commute_minutes, arrive + int(rng.integers(480, 570)))
        back = depart + r.commute_minutes
        home[leave:back] = False
        _fill_segments(activity, wake, leave, rng, 15, ["still", "on_foot"], [0.8, 0.2])
        activity[leave:arrive] = _ACT[r.commute_activity]
        _fill_segments(activity, arrive, depart, rng, 25, ["still", "on_foot"],
                       [1 - r.active_share, r.active_share])
        activity[depart:back] = _ACT[r.commute_activity]
        _fill_segments(activity, back, sleep, rng, 20, ["still", "on_foot"], [0.85, 0.15])
    else:
        out = int(rng.integers(wake + 60, max(wake + 61, 1080)))
        ret = min(sleep - 30, out + int(rng.integers(60, 240)))
        home[out:ret] = False
        _fill_segments(activity, wake, out, rng, 20, ["still", "on_foot"], [0.85, 0.15])
        share = r.active_share
        _fill_segments(activity, out, ret, rng, 15, list(ACTIVITIES),
                       [0.3, 0.25 + share, 0.05, 0.05 + share / 2, 0.35 - 1.5 * share])
        _fill_segments(activity, ret, sleep, rng, 20, ["still", "on_foot"], [0.85, 0.15])

    # lock state: alternating dwell times while awake, locked overnight
    unlocked = np.zeros(1440, dtype=bool)
    last_change = np.zeros(1440, dtype=np.int64)
    prev_change = -int(rng.integers(20, 180))
    last_change[:wake] = prev_change
    m, state = wake, True
    while m < sleep:
        mean = r.unlocked_mean if state else r.locked_mean
        if not state and activity[m] in (_ACT["in_vehicle"], _ACT["running"], _ACT["on_bike"]):
            mean *= 2
        dwell = max(1, int(round(rng.exponential(mean))))
        end = min(sleep, m + dwell)
        unlocked[m:end] = state
        last_change[m:end] = m
        m, state = end, not state
    last_change[sleep:] = sleep if unlocked[sleep - 1] else last_change[sleep - 1]

    # battery: full on the charger until waking, linear drain, then recharge at 1 %/min
    drain = r.drain_per_hour * rng.uniform(0.7, 1.3) / 60.0
    battery = np.empty(1440)
    status = np.empty(1440, dtype=np.int8)
    battery[:wake] = 100
    status[:wake] = BATTERY_STATUSES.index("full")
    awake = np.arange(sleep - wake)
    battery[wake:sleep] = 100 - drain * awake - 0.02 * np.cumsum(unlocked[wake:sleep])
    status[wake:sleep] = BATTERY_STATUSES.index("discharging")
    level = battery[sleep - 1]
    charged = np.minimum(100, level + np.arange(1, 1440 - sleep + 1))
    battery[sleep:] = charged
    status[sleep:] = np.where(charged >= 100, BATTERY_STATUSES.index("full"), BATTERY_STATUSES.index("charging"))
    battery = np.clip(np.ceil(battery), 1, 100).astype(np.int64)

    wifi = home.copy()
    if r.wifi_at_work:
        wifi |= ~home & (activity == _ACT["still"])
    return DayContext(day, weekend, activity, unlocked, last_change, battery, status, wifi)


class ContextStream:
    """Absolute-time view over a participant's daily streams (built lazily)."""

    def __init__(self, profile: ParticipantProfile, seed: int):
        self.profile = profile
        self.seed = seed
        self._days: dict[int, DayContext] = {}

    def day(self, day: int) -> DayContext:
        ctx = self._days.get(day)
        if ctx is None:
            ctx = self._days[day] = simulate_context(self.profile, day, self.seed)
        return ctx

    def __call__(self, t: int) -> ContextSnapshot:
        return self.day(int(t) // SECONDS_PER_DAY + 1)(int(t))


# ---------------------------------------------------------------------------
# responses


def simulate_response(
    profile: ParticipantProfile,
    context_at_delivery: ContextSnapshot,
    day: int,
    rng: np.random.Generator,
    delivery_time: int = 0,
    context_provider: Callable[[int], ContextSnapshot] | None = None,
    model_timed: bool = False,
) -> OutcomeRecord:
    """Draw the participant's replies to one initiating message.

    Habituation drifts the logit for prompts sent at unendorsed moments;
    ``model_timed=True`` (a model judged the moment receptive) skips it.
    """
    z = profile.true_logit(encode(context_at_delivery), day, habituated=not model_timed)
    p_jit = 1.0 / (1.0 + math.exp(-z))
    t0 = delivery_time
    if rng.random() < p_jit:
        first = t0 + int(rng.integers(5, 601))
        replies = [first]
        if rng.random() < profile.engagement_prob:
            replies += [int(t) for t in rng.integers(first, t0 + 601, size=int(rng.integers(1, 4)))]
        ctx = context_provider(first) if context_provider else context_at_delivery
        return OutcomeRecord(t0, first, tuple(replies), ctx)
    if rng.random() < profile.late_response_prob:
        delay = 600 + int(math.ceil(rng.lognormal(profile.late_delay_mu, profile.late_delay_sigma)))
        first = t0 + delay
        replies = [first]
        if rng.random() < profile.engagement_prob:
            replies += [first + int(t) for t in rng.integers(1, 600, size=int(rng.integers(1, 4)))]
        ctx = context_provider(first) if context_provider else context_at_delivery
        return OutcomeRecord(t0, first, tuple(replies), ctx)
    return OutcomeRecord(t0)


# ---------------------------------------------------------------------------
# prior study and the pre-trained models


def simulate_prior_study(config: ExperimentConfig, seed: int | None = None) -> list[DatasetRow]:
    """Immediate-delivery study on a fresh population; label = just-in-time response."""
    seed = (config.seed if seed is None else seed) + _PRIOR_SALT
    prior_cfg = dataclasses.replace(config, n_participants=config.prior_participants)
    rows = []
    for profile in generate_population(prior_cfg, seed):
        stream = ContextStream(profile, seed)
        plan_rng = _rng(seed, _PLAN, profile.index)
        resp_rng = _rng(seed, _RESPONSE, profile.index)
        for day in range(1, config.prior_days + 1):
            for trig in plan_day(profile.participant_id, day, plan_rng).triggers:
                t = (day - 1) * SECONDS_PER_DAY + 60 * trig.minute
                ctx = stream(t)
                out = simulate_response(profile, ctx, day, resp_rng, t, stream)
                jit = out.responded and out.first_response_time - t <= 600
                rows.append(DatasetRow(profile.participant_id, ctx, int(jit)))
    return rows


_LINEAR_SALT = 104729


def linear_truth_dataset(
    n_participants: int = 100,
    per_participant: int = 40,
    prevalence: float = 0.3,
    label_noise: float = 0.15,
    seed: int = 0,
) -> list[DatasetRow]:
    """Contexts from simulated days, labelled by one shared linear score plus label flips.

    The clean positive share q is chosen so that flipping ``label_noise`` of all
    labels leaves ``prevalence`` positives: q(1 - e) + (1 - q)e = prevalence.
    """
    if not 0 <= label_noise < 0.5:
        raise ValueError("label_noise must lie in [0, 0.5)")
    clean = (prevalence - label_noise) / (1 - 2 * label_noise)
    if not 0 < clean < 1:
        raise ValueError("prevalence not reachable with this label noise")
    cfg = ExperimentConfig(n_participants=n_participants, heterogeneity=0.0, seed=seed)
    rng = _rng(seed, _LINEAR_SALT)
    pids, snaps = [], []
    for profile in generate_population(cfg):
        stream = ContextStream(profile, seed + _LINEAR_SALT)
        days = rng.integers(1, 22, size=per_participant)
        minutes = rng.integers(7 * 60, 22 * 60, size=per_participant)
        for d, m in zip(days, minutes):
            snaps.append(stream((int(d) - 1) * SECONDS_PER_DAY + 60 * int(m)))
            pids.append(profile.participant_id)
    scores = np.array([BASE_WEIGHTS @ encode(s) for s in snaps])
    scores += 1e-9 * rng.standard_normal(len(scores))  # break ties between identical contexts
    labels = (scores > np.quantile(scores, 1 - clean)).astype(int)
    flip = rng.random(len(labels)) < label_noise
    labels[flip] = 1 - labels[flip]
    return [DatasetRow(p, s, int(y)) for p, s, y in zip(pids, snaps, labels)]


@dataclass
class PretrainedModels:
    static: LinearModel
    p1: LinearModel


def train_deployment_models(rows: list[DatasetRow], seed: int = 0, **svm_params) -> PretrainedModels:
    """Static SVM on everything; P1 = LR on an IHT-balanced copy."""
    data = TrainingSet.from_rows(rows)
    static = train_linear_svm(data, **svm_params)
    p1 = train_logistic(iht_undersample(data, folds=5, seed=seed))
    return PretrainedModels(static, p1)


# ---------------------------------------------------------------------------
# the study driver


def _daily_steps(profile: ParticipantProfile, rng: np.random.Generator, n: int) -> list[int]:
    return [int(s) for s in rng.lognormal(math.log(profile.step_mean), 0.35, size=n)]


def run_participant(
    profile: ParticipantProfile,
    config: ExperimentConfig,
    models: PretrainedModels,
    seed: int,
    cohorts: dict[int, set[str]] | None = None,
) -> list[dict]:
    """All events for one participant, in processing order."""
    policy = config.policy
    stream = ContextStream(profile, seed)
    plan_rng = _rng(seed, _PLAN, profile.index)
    select_rng = _rng(seed, _SELECT, profile.index)
    resp_rng = _rng(seed, _RESPONSE, profile.index)
    steps_rng = _rng(seed, _STEPS, profile.index)
    drop_rng = _rng(seed, _DROPOUT, profile.index)
    adaptive = AdaptiveModel(models.p1, config.p2_params)
    static = models.static
    pid = profile.participant_id

    def static_clf(ctx: ContextSnapshot) -> bool:
        return bool(static.decision(encode(ctx)) > 0)

    def adaptive_clf(ctx: ContextSnapshot) -> bool:
        return adaptive.predict(encode(ctx))[0]

    steps = _daily_steps(profile, steps_rng, 9)
    events: list[dict] = []
    for day in range(1, config.study_days + 1):
        if config.dropout_hazard and drop_rng.random() < config.dropout_hazard:
            events.append({"type": "dropout", "participant": pid, "day": day})
            break
        forced = None if cohorts is None else pid in cohorts[day]
        plan = plan_day(pid, day, plan_rng, forced)
        goal = step_goal(steps)
        for trig in plan.triggers:
            t = (day - 1) * SECONDS_PER_DAY + 60 * trig.minute
            trig_ev = {"type": "trigger", "participant": pid, "day": day, "ts": t, "kind": trig.kind}
            if trig.kind == GOAL_SETTING:
                trig_ev["step_goal"] = goal
            events.append(trig_ev)
            model = select_model(day, select_rng, policy)
            clf = {CONTROL: None, STATIC: static_clf, ADAPTIVE: adaptive_clf}[model]
            rec = run_delivery(pid, day, t, model, stream, clf, policy)
            events.append(rec.to_event())
            out = simulate_response(profile, rec.context_at_delivery, day, resp_rng,
                                    rec.delivery_time, stream, model_timed=rec.model_attributed != CONTROL)
            events.append(out.to_event(pid, day, t))
            labels = label_outcome(rec, out, policy.jit_window)
            events.extend(label_event(pid, inst) for inst in labels)
            adaptive.ingest(labels)
        steps.extend(_daily_steps(profile, steps_rng, 1))
    return events


def replicate_seed(seed: int, replicate: int) -> int:
    if replicate == 0:
        return seed
    return int(np.random.SeedSequence([seed, replicate]).generate_state(1)[0])


def _cohorts(config: ExperimentConfig, profiles, seed: int):
    if not config.exact_half_self_monitoring:
        return None
    ids = [p.participant_id for p in profiles]
    return {day: self_monitoring_cohort(ids, _rng(seed, _COHORT, day)) for day in range(1, config.study_days + 1)}


def _participant_task(args):
    profile, config, models, seed, cohorts = args
    return run_participant(profile, config, models, seed, cohorts)


def run_experiment(
    config: ExperimentConfig,
    models: PretrainedModels | None,
    seed: int | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Simulate the whole study; returns events ordered by participant."""
    if models is None or models.static is None or models.p1 is None:
        raise ConfigError("a pre-trained static model (and P1) is required to run the study")
    seed = config.seed if seed is None else seed
    profiles = generate_population(config, seed)
    cohorts = _cohorts(config, profiles, seed)
    tasks = [(p, config, models, seed, cohorts) for p in profiles]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_participant_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        chunks = [_participant_task(t) for t in tasks]
    return [ev for chunk in chunks for ev in chunk]


def dump_events(events: Iterable[dict]) -> str:
    return "".join(json.dumps(ev, separators=(",", ":")) + "\n" for ev in events)


def iter_records(events: Iterable[dict]) -> Iterator[tuple]:
    """Join delivery and outcome events into (DeliveryRecord, OutcomeRecord) pairs."""
    from .delivery import DeliveryRecord

    pending = {}
    for ev in events:
        kind = ev.get("type")
        if kind == "delivery":
            pending[(ev["participant"], ev["trigger_ts"])] = DeliveryRecord.from_event(ev)
        elif kind == "outcome":
            rec = pending.pop((ev["participant"], ev["trigger_ts"]))
            yield rec, OutcomeRecord.from_event(ev)
