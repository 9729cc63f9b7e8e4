import numpy as np
import pytest
from hypothesis import strategies as st

from receptive_jitai.features import (
    ACTIVITIES, BATTERY_STATUSES, DAY_TYPES, LOCK_STATES, TIMES_OF_DAY, WIFI_STATES,
    ContextSnapshot,
)

snapshots = st.builds(
    ContextSnapshot,
    day_type=st.sampled_from(DAY_TYPES),
    time_of_day=st.sampled_from(TIMES_OF_DAY),
    battery_status=st.sampled_from(BATTERY_STATUSES),
    battery_level=st.integers(1, 100),
    lock_state=st.sampled_from(LOCK_STATES),
    lock_change_time=st.integers(0, 10 * 86400),
    wifi=st.sampled_from(WIFI_STATES),
    activity=st.sampled_from(ACTIVITIES),
)


def random_snapshot(rng: np.random.Generator) -> ContextSnapshot:
    return ContextSnapshot(
        day_type=DAY_TYPES[rng.integers(2)],
        time_of_day=TIMES_OF_DAY[rng.integers(3)],
        battery_status=BATTERY_STATUSES[rng.integers(3)],
        battery_level=int(rng.integers(1, 101)),
        lock_state=LOCK_STATES[rng.integers(2)],
        lock_change_time=int(rng.integers(0, 86400)),
        wifi=WIFI_STATES[rng.integers(2)],
        activity=ACTIVITIES[rng.integers(5)],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
