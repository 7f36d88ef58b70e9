"""
Pytest configuration and shared fixtures.

This file is automatically loaded by pytest and provides fixtures
available to all test files.
"""

from datetime import datetime, timedelta

import numpy as np
import pandas as pd
import pytest

from crashrisk_tools.domain import to_epoch
from crashrisk_tools.schemas import (
    ApproachConfig,
    Bearing,
    EventKey,
    EventRole,
    FeatureVector,
    IntersectionConfig,
    LocationClass,
    Stratum,
)
from crashrisk_tools.streams import CRASH_COLUMNS, StreamSet, empty_frame

# =============================================================================
# Marker Configurations
# =============================================================================


def pytest_configure(config: pytest.Config) -> None:
    """Configure custom pytest markers."""
    config.addinivalue_line("markers", "slow: marks tests as slow running")
    config.addinivalue_line("markers", "integration: marks integration tests")
    config.addinivalue_line("markers", "unit: marks unit tests")


# =============================================================================
# Builders
# =============================================================================

# Hand-built world: 2017-01-03 (a Tuesday) 17:00 to 20:00, one intersection.
WORLD_START = datetime(2017, 1, 3, 17, 0)
WORLD_END = datetime(2017, 1, 3, 20, 0)
CRASH_INSTANT = datetime(2017, 1, 3, 18, 31)


def make_intersection(
    intersection_id: str = "I01",
    major: tuple[Bearing, ...] = (Bearing.NB, Bearing.SB),
    through_lanes: int = 2,
    left_turn_lanes: int = 1,
) -> IntersectionConfig:
    return IntersectionConfig(
        id=intersection_id,
        approaches=tuple(
            ApproachConfig(
                bearing=b,
                is_major=b in major,
                through_lanes=through_lanes,
                left_turn_lanes=left_turn_lanes,
                upstream_segment_length=1000.0,
            )
            for b in Bearing
        ),
    )


def make_stratum(
    stratum_id: str, crash: dict[str, float], controls: list[dict[str, float]]
) -> Stratum:
    return Stratum(
        stratum_id=stratum_id,
        crash=FeatureVector(values=crash),
        controls=tuple(FeatureVector(values=c) for c in controls),
    )


def make_key(instant: datetime, role: EventRole = EventRole.crash, stratum_id: str = "S1") -> EventKey:
    return EventKey(
        intersection="I01",
        instant=instant,
        location_class=LocationClass.within,
        role=role,
        stratum_id=stratum_id,
        at_fault_bearing=Bearing.NB,
    )


def _hand_built_streams() -> StreamSet:
    """Every approach: lane 1 left (45 veh / 15 min), lanes 2-3 through (90 each).

    Through greens start on every minute for 30 s (queue 4, wait 50); left
    greens start 40 s past every minute for 10 s (queue 2, wait 70). Major
    approaches carry one speed observation per 5-minute slot whose value
    depends on the slot's minute offset within the quarter hour.
    """
    t0, t1 = to_epoch(WORLD_START), to_epoch(WORLD_END)
    volumes, phases, speeds = [], [], []
    for bearing in Bearing:
        for w in range(t0, t1, 900):
            volumes.append(("I01", str(bearing), 1, "left", w, 45))
            volumes.append(("I01", str(bearing), 2, "through", w, 90))
            volumes.append(("I01", str(bearing), 3, "through", w, 90))
        for minute in range(t0, t1, 60):
            phases.append(("I01", str(bearing), "through", minute, minute + 30, 4.0, 50.0))
            phases.append(("I01", str(bearing), "left", minute + 40, minute + 50, 2.0, 70.0))
        if bearing in (Bearing.NB, Bearing.SB):
            for slot in range(t0, t1, 300):
                speed = 30.0 + 5.0 * (((slot - t0) // 300) % 4)
                speeds.append(("I01", str(bearing), slot + 60, speed))
    weather = [
        (t0, 0, 10.0, 0.0),
        (to_epoch(datetime(2017, 1, 3, 18, 20)), 1, 3.5, 0.2),
    ]
    return StreamSet(
        intersections={"I01": make_intersection()},
        volumes=pd.DataFrame(
            volumes,
            columns=["intersection", "bearing", "lane_index", "movement", "window_start", "count"],
        ),
        phases=pd.DataFrame(
            phases,
            columns=[
                "intersection",
                "bearing",
                "movement",
                "green_start",
                "green_end",
                "queue_at_green",
                "max_wait_at_green",
            ],
        ),
        speeds=pd.DataFrame(
            speeds, columns=["intersection", "bearing", "timestamp", "space_mean_speed"]
        ),
        weather=pd.DataFrame(
            weather, columns=["timestamp", "weather_type", "visibility", "hourly_precip"]
        ),
        crashes=empty_frame(CRASH_COLUMNS),
    )


def simulate_strata(
    beta: np.ndarray, n_strata: int, m: int = 4, seed: int = 0
) -> np.ndarray:
    """Design array ``(n, m + 1, k)`` whose crash row is drawn from the conditional logit."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_strata, m + 1, beta.size))
    eta = X @ beta
    p = np.exp(eta - eta.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    for i in range(n_strata):
        j = rng.choice(m + 1, p=p[i])
        X[i, [0, j]] = X[i, [j, 0]]
    return X


def design_frame(X: np.ndarray, names: list[str]) -> pd.DataFrame:
    """Wide dataset frame (no event keys) from an ``(n, m + 1, k)`` design array."""
    rows = []
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            rows.append(
                {
                    "stratum_id": f"S{i:04d}",
                    "event_id": f"S{i:04d}" if j == 0 else f"S{i:04d}-c{j}",
                    "role": "crash" if j == 0 else "control",
                    "label": 1 if j == 0 else 0,
                    **dict(zip(names, X[i, j].tolist(), strict=True)),
                }
            )
    return pd.DataFrame(rows)


# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def intersection() -> IntersectionConfig:
    return make_intersection()


@pytest.fixture
def hand_streams() -> StreamSet:
    return _hand_built_streams()


@pytest.fixture
def sample_dataset() -> pd.DataFrame:
    """Wide dataset of three 1:2 strata with two variables."""
    rows = []
    values = {
        "S1": [(2.0, 1.0), (0.0, 0.0), (1.0, 0.5)],
        "S2": [(1.5, 0.2), (0.5, 0.4), (0.0, 1.0)],
        "S3": [(0.2, 2.0), (1.0, 0.1), (0.4, 0.3)],
    }
    for stratum_id, events in values.items():
        for j, (a, b) in enumerate(events):
            rows.append(
                {
                    "stratum_id": stratum_id,
                    "event_id": stratum_id if j == 0 else f"{stratum_id}-c{j}",
                    "role": "crash" if j == 0 else "control",
                    "label": 1 if j == 0 else 0,
                    "intersection": "I01",
                    "instant": (CRASH_INSTANT + timedelta(weeks=j)).isoformat(),
                    "location_class": "within",
                    "at_fault_bearing": "NB",
                    "Avg_speed_0_5": a,
                    "B_Vol_LT_5_10": b,
                }
            )
    return pd.DataFrame(rows)
