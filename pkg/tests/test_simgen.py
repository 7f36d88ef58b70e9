"""
Tests for the synthetic world generator.
"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from crashrisk_tools.domain import clock_of, to_epoch
from crashrisk_tools.schemas import Bearing, Position
from crashrisk_tools.simgen import (
    INFLUENCE_FT,
    ScenarioConfig,
    adverse_at,
    build_intersections,
    generate_streams,
    inject_crashes,
    injection_instants,
    load_scenario,
    simulate_world,
)

EXAMPLE_SCENARIO = Path(__file__).parents[1] / "scenarios" / "example.json"

TINY = ScenarioConfig(
    n_intersections=2,
    days=14,
    base_rate=0.002,
    true_beta={"Avg_speed_0_5": -0.1, "A_TH_Avg_Queue_0_5": 0.05},
    seed=11,
)


@pytest.fixture(scope="module")
def tiny_streams():
    return generate_streams(TINY)


class TestScenarioConfig:
    """Tests for scenario validation."""

    def test_defaults(self) -> None:
        config = ScenarioConfig()

        assert config.n_intersections == 23
        assert len(config.volume_profile) == 24

    def test_period(self) -> None:
        t0, t1 = ScenarioConfig(days=7).period

        assert t1 - t0 == 7 * 86400
        assert clock_of(np.array([t0]))[0] == 0

    def test_profile_length(self) -> None:
        with pytest.raises(ValidationError, match="24 hourly values"):
            ScenarioConfig(volume_profile=[1.0] * 23)

    def test_negative_profile(self) -> None:
        with pytest.raises(ValidationError):
            ScenarioConfig(volume_profile=[-1.0] + [1.0] * 23)

    def test_unknown_true_beta(self) -> None:
        with pytest.raises(ValidationError, match="unknown variables"):
            ScenarioConfig(true_beta={"E_OAFR_0_5": 1.0})

    def test_cycle_too_short(self) -> None:
        with pytest.raises(ValidationError, match="base_cycle"):
            ScenarioConfig(base_cycle=40.0, cycle_jitter=10.0)

    def test_example_scenario_loads(self) -> None:
        config = load_scenario(EXAMPLE_SCENARIO)

        assert config.n_intersections == 4
        assert config.seed == 2017
        assert set(config.true_beta) == {"Avg_speed_0_5", "A_TH_Avg_Queue_0_5", "B_Vol_LT_5_10"}


class TestLayout:
    def test_major_axis_alternates(self) -> None:
        first, second = build_intersections(ScenarioConfig(n_intersections=2))

        assert first.id == "I01"
        assert set(first.major_bearings) == {Bearing.NB, Bearing.SB}
        assert set(second.major_bearings) == {Bearing.EB, Bearing.WB}

    def test_lane_counts(self) -> None:
        layout = build_intersections(ScenarioConfig(n_intersections=1))[0]

        assert layout.approach(Bearing.NB).through_lanes == 3
        assert layout.approach(Bearing.EB).through_lanes == 2


class TestWeather:
    def test_adverse_at(self) -> None:
        weather = pd.DataFrame(
            {
                "timestamp": [100, 200, 300],
                "weather_type": [0, 1, 0],
                "visibility": [10.0, 2.0, 10.0],
                "hourly_precip": [0.0, 0.3, 0.0],
            }
        )

        flags = adverse_at(weather, np.array([50, 100, 250, 300, 999]))

        assert flags.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]

    def test_records_cover_period(self, tiny_streams) -> None:
        weather = tiny_streams.weather
        t0, _ = TINY.period

        assert weather["timestamp"].iloc[0] == t0
        assert weather["timestamp"].is_monotonic_increasing
        assert set(weather["weather_type"].unique()) <= {0, 1}


class TestGenerateStreams:
    """Tests for the traffic, signal and speed streams."""

    def test_deterministic(self, tiny_streams) -> None:
        again = generate_streams(TINY, num_threads=2)

        pd.testing.assert_frame_equal(tiny_streams.volumes, again.volumes)
        pd.testing.assert_frame_equal(tiny_streams.phases, again.phases)
        pd.testing.assert_frame_equal(tiny_streams.speeds, again.speeds)

    def test_seed_changes_output(self, tiny_streams) -> None:
        other = generate_streams(TINY.model_copy(update={"seed": 12}))

        assert not tiny_streams.volumes["count"].equals(other.volumes["count"])

    def test_peak_busier_than_night(self, tiny_streams) -> None:
        volumes = tiny_streams.volumes
        hour = clock_of(volumes["window_start"].to_numpy()) // 3600
        per_window = volumes.assign(hour=hour).groupby(["window_start", "hour"])["count"].sum()
        by_hour = per_window.groupby(level="hour").mean()

        assert by_hour[17] > 3 * by_hour[3]

    def test_speeds_only_on_major_approaches(self, tiny_streams) -> None:
        for intersection_id, group in tiny_streams.speeds.groupby("intersection"):
            major = {str(b) for b in tiny_streams.intersections[intersection_id].major_bearings}
            assert set(group["bearing"].unique()) == major

    def test_greens_do_not_overlap(self, tiny_streams) -> None:
        for _, group in tiny_streams.phases.groupby(["intersection", "bearing", "movement"]):
            starts = group["green_start"].to_numpy()
            ends = group["green_end"].to_numpy()
            assert (ends > starts).all()
            assert (ends[:-1] <= starts[1:]).all()

    def test_queues_non_negative(self, tiny_streams) -> None:
        assert (tiny_streams.phases["queue_at_green"] >= 0).all()
        assert (tiny_streams.phases["max_wait_at_green"] >= 0).all()


class TestInjectCrashes:
    """Tests for crash injection."""

    def test_zero_base_rate(self, tiny_streams) -> None:
        assert inject_crashes(tiny_streams, TINY.model_copy(update={"base_rate": 0.0})) == []

    def test_crash_count_matches_base_rate(self, tiny_streams) -> None:
        """With no covariate effect every site-instant crashes with probability base_rate."""
        config = TINY.model_copy(
            update={"true_beta": {}, "exit_fraction": 0.0, "beyond_fraction": 0.0}
        )
        trials = TINY.n_intersections * (4 + 2) * injection_instants(tiny_streams).size
        expected = config.base_rate * trials
        sd = np.sqrt(trials * config.base_rate * (1 - config.base_rate))

        crashes = inject_crashes(tiny_streams, config)

        assert abs(len(crashes) - expected) < 4 * sd
        assert all(c.id.startswith("C") for c in crashes)

    def test_records(self, tiny_streams) -> None:
        crashes = inject_crashes(tiny_streams, TINY)
        t0, t1 = tiny_streams.study_period

        assert crashes
        for crash in crashes:
            assert t0 <= to_epoch(crash.occurred_at) < t1
            assert crash.location_class is None
            if crash.id.startswith("X"):
                assert crash.position == Position.downstream
            elif crash.id.startswith("F"):
                assert crash.position == Position.upstream
                assert crash.distance_ft > INFLUENCE_FT
            elif crash.position == Position.box:
                assert crash.distance_ft == 0.0
            else:
                assert crash.position == Position.upstream
                assert crash.distance_ft <= INFLUENCE_FT
                layout = tiny_streams.intersections[crash.intersection]
                assert crash.at_fault_bearing in layout.major_bearings
            assert crash.intersection in tiny_streams.intersections
        assert len({c.id for c in crashes}) == len(crashes)

    def test_simulate_world_attaches_crashes(self) -> None:
        world = simulate_world(TINY.model_copy(update={"days": 7}))

        assert len(world.crashes) > 0
        assert world.crashes["occurred_at"].is_monotonic_increasing
