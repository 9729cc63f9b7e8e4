"""Contextual state of a participant-moment and its numeric encoding.

Layout of the 16-component feature vector::

    0       is_weekend
    1-3     time of day (morning, afternoon, evening)
    4-6     battery status (charging, discharging, full)
    7       battery level / 100
    8       is_unlocked
    9       min(log1p(lock_change_time) / log1p(86400), 1)
    10      is_wifi_connected
    11-15   activity (still, on_foot, on_bike, running, in_vehicle)
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

DAY_TYPES = ("weekday", "weekend")
TIMES_OF_DAY = ("morning", "afternoon", "evening")
BATTERY_STATUSES = ("charging", "discharging", "full")
LOCK_STATES = ("locked", "unlocked")
WIFI_STATES = ("connected", "disconnected")
ACTIVITIES = ("still", "on_foot", "on_bike", "running", "in_vehicle")

N_FEATURES = 16
FEATURE_NAMES = (
    "is_weekend",
    "tod_morning", "tod_afternoon", "tod_evening",
    "battery_charging", "battery_discharging", "battery_full",
    "battery_level",
    "is_unlocked",
    "lock_change_time",
    "wifi_connected",
    "act_still", "act_on_foot", "act_on_bike", "act_running", "act_in_vehicle",
)

SECONDS_PER_DAY = 86400
_LOG_DAY = math.log1p(SECONDS_PER_DAY)

_CATEGORIES = {
    "day_type": DAY_TYPES,
    "time_of_day": TIMES_OF_DAY,
    "battery_status": BATTERY_STATUSES,
    "lock_state": LOCK_STATES,
    "wifi": WIFI_STATES,
    "activity": ACTIVITIES,
}

CSV_COLUMNS = (
    "participant",
    "day_type", "time_of_day", "battery_status", "battery_level",
    "lock_state", "lock_change_time", "wifi", "activity",
    "label",
)


@dataclass(frozen=True)
class ContextSnapshot:
    day_type: str
    time_of_day: str
    battery_status: str
    battery_level: int
    lock_state: str
    lock_change_time: int
    wifi: str
    activity: str

    def __post_init__(self):
        for name, allowed in _CATEGORIES.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ValueError(f"{name}={value!r} not in {allowed}")
        if isinstance(self.battery_level, bool) or not 1 <= self.battery_level <= 100:
            raise ValueError(f"battery_level={self.battery_level!r} outside [1, 100]")
        if self.lock_change_time < 0:
            raise ValueError(f"lock_change_time={self.lock_change_time!r} is negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ContextSnapshot":
        return cls(
            day_type=d["day_type"],
            time_of_day=d["time_of_day"],
            battery_status=d["battery_status"],
            battery_level=int(d["battery_level"]),
            lock_state=d["lock_state"],
            lock_change_time=int(d["lock_change_time"]),
            wifi=d["wifi"],
            activity=d["activity"],
        )


def time_of_day_from_clock(minutes_since_midnight: int) -> str:
    """Map a clock minute to its block: [05:00, 12:00) morning, [12:00, 18:00) afternoon, else evening."""
    if not 0 <= minutes_since_midnight <= 1439:
        raise ValueError(f"minute of day {minutes_since_midnight} outside [0, 1439]")
    if 300 <= minutes_since_midnight < 720:
        return "morning"
    if 720 <= minutes_since_midnight < 1080:
        return "afternoon"
    return "evening"


def lock_time_component(seconds: float) -> float:
    return min(math.log1p(seconds) / _LOG_DAY, 1.0)


@lru_cache(maxsize=65536)
def _encode_cached(snapshot: ContextSnapshot) -> np.ndarray:
    v = np.zeros(N_FEATURES)
    v[0] = 1.0 if snapshot.day_type == "weekend" else 0.0
    v[1 + TIMES_OF_DAY.index(snapshot.time_of_day)] = 1.0
    v[4 + BATTERY_STATUSES.index(snapshot.battery_status)] = 1.0
    v[7] = snapshot.battery_level / 100.0
    v[8] = 1.0 if snapshot.lock_state == "unlocked" else 0.0
    v[9] = lock_time_component(snapshot.lock_change_time)
    v[10] = 1.0 if snapshot.wifi == "connected" else 0.0
    v[11 + ACTIVITIES.index(snapshot.activity)] = 1.0
    v.setflags(write=False)
    return v


def encode(snapshot: ContextSnapshot) -> np.ndarray:
    """Encode a snapshot as a read-only length-16 vector with components in [0, 1]."""
    return _encode_cached(snapshot)


def encode_many(snapshots: Iterable[ContextSnapshot]) -> np.ndarray:
    rows = [encode(s) for s in snapshots]
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.vstack(rows)


class DatasetError(ValueError):
    """Malformed training CSV. ``line`` is 1-based and counts the header."""

    def __init__(self, line: int, message: str, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}line {line}: {message}")


class DatasetRow(NamedTuple):
    participant: str
    snapshot: ContextSnapshot
    label: int


def read_dataset(path: str | Path) -> list[DatasetRow]:
    """Parse a training CSV (header + one row per labelled moment).

    Raises DatasetError naming the offending line on any schema violation.
    """
    path = str(path)
    rows: list[DatasetRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(1, "empty file, expected header row", path)
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DatasetError(1, f"header must be {','.join(CSV_COLUMNS)}", path)
        for cells in reader:
            line = reader.line_num
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(CSV_COLUMNS):
                raise DatasetError(line, f"expected {len(CSV_COLUMNS)} columns, got {len(cells)}", path)
            rec = dict(zip(CSV_COLUMNS, (c.strip() for c in cells)))
            try:
                battery = int(rec["battery_level"])
                lock_time = int(rec["lock_change_time"])
                label = int(rec["label"])
            except ValueError as exc:
                raise DatasetError(line, f"non-integer numeric field ({exc})", path) from None
            if label not in (0, 1):
                raise DatasetError(line, f"label must be 0 or 1, got {label}", path)
            try:
                snap = ContextSnapshot(
                    rec["day_type"], rec["time_of_day"], rec["battery_status"], battery,
                    rec["lock_state"], lock_time, rec["wifi"], rec["activity"],
                )
            except ValueError as exc:
                raise DatasetError(line, str(exc), path) from None
            rows.append(DatasetRow(rec["participant"], snap, label))
    if not rows:
        raise DatasetError(2, "no data rows", path)
    return rows


def write_dataset(path: str | Path, rows: Iterable[DatasetRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for participant, s, label in rows:
            w.writerow([
                participant, s.day_type, s.time_of_day, s.battery_status, s.battery_level,
                s.lock_state, s.lock_change_time, s.wifi, s.activity, int(label),
            ])
