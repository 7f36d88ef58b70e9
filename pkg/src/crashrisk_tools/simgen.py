"""Seeded synthetic world: intersections, traffic, signals, speeds, weather, crashes.

Crashes are injected with the conditional-logit mechanism the estimator
assumes, so a full pipeline run over a scenario should recover ``true_beta``.
"""

from __future__ import annotations

import logging
from datetime import date, datetime, time
from pathlib import Path

import numpy as np
import pandas as pd
import typer
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.special import expit, logit

from .domain import SLICE_SECONDS, clock_of, event_variables, from_epoch, to_epoch
from .features import VOLUME_WINDOW_SECONDS, StreamIndex
from .manifest import CLI_ERRORS, RunRecorder, fail
from .matching import LOOKBACK_SECONDS
from .schemas import (
    ApproachConfig,
    Bearing,
    CrashRecord,
    IntersectionConfig,
    LocationClass,
    Movement,
    Position,
)
from .streams import (
    CRASH_COLUMNS,
    PHASE_COLUMNS,
    SPEED_COLUMNS,
    VOLUME_COLUMNS,
    WEATHER_COLUMNS,
    StreamSet,
    crashes_frame,
    empty_frame,
    validate_streams,
    write_streams,
)
from .utils import console, human_readable_number, parallel_map

logger = logging.getLogger(__name__)

DEFAULT_PROFILE = [
    0.15, 0.10, 0.08, 0.08, 0.12, 0.30, 0.70, 1.00, 0.95, 0.75, 0.70, 0.75,
    0.80, 0.78, 0.80, 0.90, 1.00, 1.05, 0.85, 0.60, 0.45, 0.38, 0.30, 0.20,
]  # fmt: skip
INFLUENCE_FT = 250.0


class ScenarioConfig(BaseModel):
    """Everything that defines a synthetic world; loaded from a JSON file."""

    n_intersections: int = Field(default=23, ge=1)
    start: date = date(2017, 1, 2)
    days: int = Field(default=365, ge=7)

    major_through_lanes: int = Field(default=3, ge=1)
    major_left_lanes: int = Field(default=1, ge=0)
    minor_through_lanes: int = Field(default=2, ge=1)
    minor_left_lanes: int = Field(default=1, ge=0)

    volume_profile: list[float] = Field(default_factory=lambda: list(DEFAULT_PROFILE))
    through_lane_volume: float = Field(default=110.0, ge=0, description="veh per lane per 15 min")
    left_lane_volume: float = Field(default=25.0, ge=0)
    minor_volume_scale: float = Field(default=0.45, ge=0)
    volume_noise: float = Field(default=0.15, ge=0)
    lane_imbalance: float = Field(default=0.2, ge=0)
    volume_missing_rate: float = Field(default=0.0005, ge=0, lt=1)

    base_cycle: float = Field(default=120.0, gt=0, description="seconds")
    cycle_jitter: float = Field(default=20.0, ge=0)
    lost_time: float = Field(default=4.0, ge=0)
    min_green: float = Field(default=7.0, ge=1)

    free_flow_speed: float = Field(default=42.0, gt=0, description="mph")
    speed_sd: float = Field(default=6.0, ge=0)
    congestion_dip: float = Field(default=0.35, ge=0, lt=1)
    lane_capacity: float = Field(default=200.0, gt=0, description="veh per lane per 15 min")
    speed_obs_per_slice: float = Field(default=6.0, ge=0)
    weather_speed_drop: float = Field(default=4.0, ge=0)

    adverse_spell_rate: float = Field(default=0.25, ge=0, description="spells per day")
    adverse_spell_hours: float = Field(default=3.0, gt=0)

    true_beta: dict[str, float] = Field(default_factory=dict)
    base_rate: float = Field(default=0.001, ge=0, le=0.05)
    single_vehicle_fraction: float = Field(default=0.1, ge=0, le=1)
    impaired_fraction: float = Field(default=0.05, ge=0, le=1)
    exit_fraction: float = Field(default=0.1, ge=0)
    beyond_fraction: float = Field(default=0.05, ge=0)

    seed: int = 0

    @field_validator("volume_profile")
    @classmethod
    def _check_profile(cls, value: list[float]) -> list[float]:
        if len(value) != 24:
            msg = f"volume_profile needs 24 hourly values, got {len(value)}"
            raise ValueError(msg)
        if any(v < 0 for v in value):
            msg = "volume_profile values must be >= 0"
            raise ValueError(msg)
        return value

    @field_validator("true_beta")
    @classmethod
    def _check_beta(cls, value: dict[str, float]) -> dict[str, float]:
        vocabulary = set(event_variables("within"))
        unknown = sorted(set(value) - vocabulary)
        if unknown:
            msg = f"true_beta names unknown variables: {', '.join(unknown)}"
            raise ValueError(msg)
        return value

    @model_validator(mode="after")
    def _check_cycle(self) -> ScenarioConfig:
        phases = 2 + (self.major_left_lanes > 0) + (self.minor_left_lanes > 0)
        if self.base_cycle - self.cycle_jitter <= phases * (self.lost_time + self.min_green):
            msg = "base_cycle - cycle_jitter must leave room for every phase's lost time and min green"
            raise ValueError(msg)
        return self

    @property
    def period(self) -> tuple[int, int]:
        """[start, end) in epoch seconds."""
        t0 = to_epoch(datetime.combine(self.start, time()))
        return t0, t0 + self.days * 86400


def load_scenario(path: Path) -> ScenarioConfig:
    return ScenarioConfig.model_validate_json(Path(path).read_text())


# -- Layout --


def _is_major_axis(index: int, bearing: Bearing) -> bool:
    north_south = bearing in (Bearing.NB, Bearing.SB)
    return north_south if index % 2 == 0 else not north_south


def build_intersections(config: ScenarioConfig) -> list[IntersectionConfig]:
    """Four-leg layouts; even-numbered sites run north-south as the major road."""
    layouts = []
    for i in range(config.n_intersections):
        approaches = []
        for bearing in Bearing:
            major = _is_major_axis(i, bearing)
            approaches.append(
                ApproachConfig(
                    bearing=bearing,
                    is_major=major,
                    through_lanes=config.major_through_lanes if major else config.minor_through_lanes,
                    left_turn_lanes=config.major_left_lanes if major else config.minor_left_lanes,
                    upstream_segment_length=1500.0 if major else 800.0,
                )
            )
        layouts.append(IntersectionConfig(id=f"I{i + 1:02d}", approaches=tuple(approaches)))
    return layouts


# -- Weather --


def generate_weather(config: ScenarioConfig, rng: np.random.Generator) -> pd.DataFrame:
    """Event-driven records: one at the start, then one per change.

    Adverse spells arrive as a Poisson process; during a spell visibility and
    precipitation are re-reported every hour.
    """
    t0, t1 = config.period
    rows = [(t0, 0, 10.0, 0.0)]
    n_spells = rng.poisson(config.adverse_spell_rate * config.days)
    starts = np.sort(rng.integers(t0 + 1, t1, size=n_spells))
    durations = rng.exponential(config.adverse_spell_hours * 3600, size=n_spells)
    last_end = t0
    for start, duration in zip(starts.tolist(), durations.tolist(), strict=True):
        start = max(start, last_end + 1)
        end = min(start + max(int(duration), 600), t1)
        if start >= t1:
            break
        for t in range(start, end, 3600):
            rows.append((t, 1, round(float(rng.uniform(1.0, 6.0)), 1), round(float(rng.exponential(0.1)), 2)))
        if end < t1:
            rows.append((end, 0, 10.0, 0.0))
        last_end = end
    df = pd.DataFrame(rows, columns=WEATHER_COLUMNS)
    return df.astype({"timestamp": np.int64, "weather_type": np.int64})


def adverse_at(weather: pd.DataFrame, instants: np.ndarray) -> np.ndarray:
    """1.0 where the latest weather record before the instant is adverse."""
    times = weather["timestamp"].to_numpy(dtype=np.int64)
    kinds = weather["weather_type"].to_numpy(dtype=float)
    pos = np.searchsorted(times, instants, side="right") - 1
    return np.where(pos >= 0, kinds[np.clip(pos, 0, None)], 0.0)


# -- One intersection --


def _lane_counts(
    config: ScenarioConfig, rng: np.random.Generator, mean: np.ndarray, n_lanes: int
) -> np.ndarray:
    """(windows, lanes) Poisson counts with shared noise and per-lane imbalance."""
    if n_lanes == 0:
        return np.zeros((mean.size, 0), dtype=np.int64)
    sigma = config.volume_noise
    shared = rng.lognormal(-0.5 * sigma**2, sigma, size=mean.size) if sigma else np.ones(mean.size)
    tau = config.lane_imbalance
    shares = rng.lognormal(0.0, tau, size=(mean.size, n_lanes)) if tau else np.ones((mean.size, n_lanes))
    shares = shares / shares.mean(axis=1, keepdims=True)
    return rng.poisson(mean[:, None] * shared[:, None] * shares)


def _volume_frame(
    intersection: IntersectionConfig,
    counts: dict[tuple[Bearing, Movement], np.ndarray],
    window_starts: np.ndarray,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> pd.DataFrame:
    frames = []
    for bearing in Bearing:
        entry = intersection.approach(bearing)
        for movement, first_lane in ((Movement.left, 1), (Movement.through, entry.left_turn_lanes + 1)):
            block = counts[(bearing, movement)]
            n_windows, n_lanes = block.shape
            if n_lanes == 0:
                continue
            keep = rng.random(block.shape) >= config.volume_missing_rate
            w_idx, lane_idx = np.nonzero(keep)
            frames.append(
                pd.DataFrame(
                    {
                        "intersection": intersection.id,
                        "bearing": str(bearing),
                        "lane_index": (first_lane + lane_idx).astype(np.int64),
                        "movement": str(movement),
                        "window_start": window_starts[w_idx],
                        "count": block[w_idx, lane_idx].astype(np.int64),
                    }
                )
            )
    return pd.concat(frames, ignore_index=True)[VOLUME_COLUMNS]


def _phase_frame(
    intersection: IntersectionConfig,
    totals: dict[tuple[Bearing, Movement], np.ndarray],
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Demand-proportional green split over a jittered cycle.

    Phase order per cycle: major left, major through, minor left, minor through.
    """
    t0, t1 = config.period
    n_windows = (t1 - t0) // VOLUME_WINDOW_SECONDS
    n_est = int(np.ceil((t1 - t0) / (config.base_cycle - config.cycle_jitter))) + 1
    lengths = np.rint(config.base_cycle + rng.uniform(-config.cycle_jitter, config.cycle_jitter, n_est))
    lengths = lengths.astype(np.int64)
    starts = t0 + np.concatenate([[0], np.cumsum(lengths)[:-1]])
    inside = starts < t1
    starts, lengths = starts[inside], lengths[inside]
    w = np.clip((starts - t0) // VOLUME_WINDOW_SECONDS, 0, n_windows - 1)

    major = intersection.major_bearings
    minor = tuple(b for b in intersection.bearings if b not in major)
    groups: list[tuple[tuple[Bearing, ...], Movement]] = [
        (major, Movement.left),
        (major, Movement.through),
        (minor, Movement.left),
        (minor, Movement.through),
    ]
    active = np.array(
        [all(intersection.approach(b).left_turn_lanes > 0 for b in bs) if mv == Movement.left else True
         for bs, mv in groups]
    )  # fmt: skip
    demand = np.zeros((starts.size, len(groups)))
    for g, (bearings, movement) in enumerate(groups):
        if not active[g]:
            continue
        per_lane = []
        for b in bearings:
            entry = intersection.approach(b)
            lanes = entry.left_turn_lanes if movement == Movement.left else entry.through_lanes
            per_lane.append(totals[(b, movement)][w] / lanes)
        demand[:, g] = np.max(per_lane, axis=0)
    n_active = int(active.sum())
    spare = lengths - n_active * (config.lost_time + config.min_green)
    total = demand.sum(axis=1, keepdims=True)
    share = np.where(total > 0, demand / np.where(total > 0, total, 1.0), active / n_active)
    greens = np.where(active, np.floor(config.min_green + spare[:, None] * share), 0).astype(np.int64)
    offsets = np.cumsum(np.where(active, greens + int(config.lost_time), 0), axis=1) - np.where(
        active, greens + int(config.lost_time), 0
    )

    frames = []
    for g, (bearings, movement) in enumerate(groups):
        if not active[g]:
            continue
        green_start = starts + offsets[:, g]
        green_end = green_start + greens[:, g]
        red = (lengths - greens[:, g]).astype(float)
        for b in bearings:
            rate = totals[(b, movement)][w] / VOLUME_WINDOW_SECONDS
            queue = rng.poisson(rate * red).astype(float)
            first_arrival = rng.exponential(1.0, size=rate.size) / np.where(rate > 0, rate, 1.0)
            wait = np.where(queue > 0, np.clip(red - first_arrival, 0.0, red), 0.0)
            frames.append(
                pd.DataFrame(
                    {
                        "intersection": intersection.id,
                        "bearing": str(b),
                        "movement": str(movement),
                        "green_start": green_start,
                        "green_end": green_end,
                        "queue_at_green": queue,
                        "max_wait_at_green": np.round(wait, 1),
                    }
                )
            )
    df = pd.concat(frames, ignore_index=True)[PHASE_COLUMNS]
    return df.sort_values(["bearing", "movement", "green_start"], kind="stable", ignore_index=True)


def _speed_frame(
    intersection: IntersectionConfig,
    totals: dict[tuple[Bearing, Movement], np.ndarray],
    weather: pd.DataFrame,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Vehicle speed samples on the major approaches; congestion and bad weather slow them."""
    t0, t1 = config.period
    slots = np.arange(t0, t1, SLICE_SECONDS, dtype=np.int64)
    w = (slots - t0) // VOLUME_WINDOW_SECONDS
    profile = np.asarray(config.volume_profile)[clock_of(slots) // 3600]
    adverse = adverse_at(weather, slots)
    frames = []
    for b in intersection.major_bearings:
        entry = intersection.approach(b)
        load = totals[(b, Movement.through)][w] / (entry.through_lanes * config.lane_capacity)
        mean = (
            config.free_flow_speed * (1.0 - config.congestion_dip * np.minimum(load, 1.5) / 1.5)
            - config.weather_speed_drop * adverse
        )
        n_obs = rng.poisson(config.speed_obs_per_slice * np.maximum(profile, 0.2))
        total = int(n_obs.sum())
        times = np.repeat(slots, n_obs) + rng.integers(0, SLICE_SECONDS, size=total)
        speeds = np.repeat(mean, n_obs) + rng.normal(0.0, config.speed_sd, size=total)
        frames.append(
            pd.DataFrame(
                {
                    "intersection": intersection.id,
                    "bearing": str(b),
                    "timestamp": times.astype(np.int64),
                    "space_mean_speed": np.round(np.maximum(speeds, 2.0), 1),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)[SPEED_COLUMNS]


def _generate_intersection(
    intersection: IntersectionConfig,
    weather: pd.DataFrame,
    config: ScenarioConfig,
    seed: np.random.SeedSequence,
) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    rng = np.random.default_rng(seed)
    t0, t1 = config.period
    window_starts = np.arange(t0, t1, VOLUME_WINDOW_SECONDS, dtype=np.int64)
    profile = np.asarray(config.volume_profile)[clock_of(window_starts) // 3600]
    counts: dict[tuple[Bearing, Movement], np.ndarray] = {}
    totals: dict[tuple[Bearing, Movement], np.ndarray] = {}
    for bearing in Bearing:
        entry = intersection.approach(bearing)
        scale = 1.0 if entry.is_major else config.minor_volume_scale
        for movement, lanes, base in (
            (Movement.left, entry.left_turn_lanes, config.left_lane_volume),
            (Movement.through, entry.through_lanes, config.through_lane_volume),
        ):
            block = _lane_counts(config, rng, base * scale * profile, lanes)
            counts[(bearing, movement)] = block
            totals[(bearing, movement)] = block.sum(axis=1).astype(float)
    volumes = _volume_frame(intersection, counts, window_starts, config, rng)
    phases = _phase_frame(intersection, totals, config, rng)
    speeds = _speed_frame(intersection, totals, weather, config, rng)
    return volumes, phases, speeds


def generate_streams(config: ScenarioConfig, *, num_threads: int = 1) -> StreamSet:
    """Volumes, phases, speeds and weather for every intersection; no crashes.

    Each intersection draws from its own spawned seed, so the output does not
    depend on ``num_threads``.
    """
    root = np.random.SeedSequence(config.seed)
    weather_seed, _, *site_seeds = root.spawn(config.n_intersections + 2)
    intersections = build_intersections(config)
    weather = generate_weather(config, np.random.default_rng(weather_seed))
    parts = parallel_map(
        lambda pair: _generate_intersection(pair[0], weather, config, pair[1]),
        list(zip(intersections, site_seeds, strict=True)),
        num_threads,
        description="Generating intersections...",
    )
    streams = StreamSet(
        intersections={c.id: c for c in intersections},
        volumes=pd.concat([p[0] for p in parts], ignore_index=True),
        phases=pd.concat([p[1] for p in parts], ignore_index=True),
        speeds=pd.concat([p[2] for p in parts], ignore_index=True),
        weather=weather,
        crashes=empty_frame(CRASH_COLUMNS),
    )
    validate_streams(streams)
    return streams


# -- Crash injection --


def injection_instants(streams: StreamSet) -> np.ndarray:
    """5-minute grid points whose full 20-minute lookback lies in the study period."""
    t0, t1 = streams.study_period
    return np.arange(t0 + LOOKBACK_SECONDS, t1, SLICE_SECONDS, dtype=np.int64)


def _injection_sites(streams: StreamSet) -> list[tuple[str, LocationClass, Bearing]]:
    sites = []
    for intersection_id in sorted(streams.intersections):
        config = streams.intersections[intersection_id]
        for location_class in (LocationClass.within, LocationClass.entrance):
            bearings = config.bearings if location_class == LocationClass.within else config.major_bearings
            sites.extend((intersection_id, location_class, b) for b in bearings)
    return sites


def inject_crashes(
    streams: StreamSet, config: ScenarioConfig, *, index: StreamIndex | None = None
) -> list[CrashRecord]:
    """Draw crashes with ``logit p = logit(base_rate) + beta . (x - mean x)``.

    Every (intersection, 5-minute instant, location class, at-fault bearing)
    is a Bernoulli trial; entrance trials use major approaches only. Rows with
    missing covariates never crash. Some crashes are then flagged
    single-vehicle or impaired, and exit-class and out-of-range crashes are
    added so the eligibility filters have something to remove.
    """
    if config.base_rate == 0:
        return []
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(config.n_intersections + 2)[1])
    index = index or StreamIndex(streams)
    instants = injection_instants(streams)
    blocks: list[tuple[str, LocationClass, Bearing, list[str], np.ndarray]] = []
    for intersection_id, location_class, bearing in _injection_sites(streams):
        vocabulary = set(event_variables(location_class))
        names = [n for n in config.true_beta if n in vocabulary]
        _, matrix = index.feature_matrix(intersection_id, bearing, location_class, instants, names)
        blocks.append((intersection_id, location_class, bearing, names, matrix))

    means: dict[LocationClass, np.ndarray] = {}
    for location_class in (LocationClass.within, LocationClass.entrance):
        stacked = [b[4] for b in blocks if b[1] == location_class]
        if stacked and stacked[0].shape[1]:
            with np.errstate(invalid="ignore"):
                means[location_class] = np.nanmean(np.vstack(stacked), axis=0)

    offset = float(logit(config.base_rate))
    hits: list[tuple[int, str, Bearing, LocationClass]] = []
    for intersection_id, location_class, bearing, names, matrix in blocks:
        if names:
            beta = np.array([config.true_beta[n] for n in names])
            complete = np.isfinite(matrix).all(axis=1)
            centered = np.where(complete[:, None], matrix - means[location_class], 0.0)
            p = np.where(complete, expit(offset + centered @ beta), 0.0)
        else:
            p = np.full(instants.size, config.base_rate)
        drawn = rng.random(instants.size) < p
        hits.extend((int(t), intersection_id, bearing, location_class) for t in instants[drawn])
    hits.sort(key=lambda h: (h[0], h[1], str(h[2]), str(h[3])))

    records = []
    for n, (t, intersection_id, bearing, location_class) in enumerate(hits, start=1):
        if location_class == LocationClass.within:
            position, distance = Position.box, 0.0
        else:
            position, distance = Position.upstream, round(float(rng.uniform(0.0, INFLUENCE_FT)), 1)
        records.append(
            CrashRecord(
                id=f"C{n:06d}",
                intersection=intersection_id,
                occurred_at=from_epoch(t),
                at_fault_bearing=bearing,
                location_class=None,
                single_vehicle=bool(rng.random() < config.single_vehicle_fraction),
                impaired=bool(rng.random() < config.impaired_fraction),
                position=position,
                distance_ft=distance,
            )
        )
    records.extend(_decoy_crashes(streams, config, rng, instants, len(records)))
    logger.info("injected %d crashes", len(records))
    return records


def _decoy_crashes(
    streams: StreamSet,
    config: ScenarioConfig,
    rng: np.random.Generator,
    instants: np.ndarray,
    n_core: int,
) -> list[CrashRecord]:
    """Exit-side and out-of-range crashes at random sites and instants."""
    ids = sorted(streams.intersections)
    decoys = []
    plan = (
        ("X", Position.downstream, round(config.exit_fraction * n_core), (0.0, INFLUENCE_FT)),
        ("F", Position.upstream, round(config.beyond_fraction * n_core), (INFLUENCE_FT + 10, 600.0)),
    )
    for prefix, position, count, (lo, hi) in plan:
        for n in range(1, count + 1):
            intersection_id = ids[int(rng.integers(len(ids)))]
            decoys.append(
                CrashRecord(
                    id=f"{prefix}{n:06d}",
                    intersection=intersection_id,
                    occurred_at=from_epoch(int(instants[rng.integers(instants.size)])),
                    at_fault_bearing=list(Bearing)[int(rng.integers(4))],
                    location_class=None,
                    single_vehicle=False,
                    impaired=False,
                    position=position,
                    distance_ft=round(float(rng.uniform(lo, hi)), 1),
                )
            )
    return decoys


def simulate_world(config: ScenarioConfig, *, num_threads: int = 1) -> StreamSet:
    """Generated streams with the injected crashes attached."""
    streams = generate_streams(config, num_threads=num_threads)
    crashes = inject_crashes(streams, config)
    frame = crashes_frame(crashes).sort_values("occurred_at", kind="stable", ignore_index=True)
    return streams.replace(crashes=frame)


# -- CLI command --


def simulate(
    ctx: typer.Context,
    scenario: Path = typer.Option(..., "--scenario", help="Scenario JSON"),
    out: Path = typer.Option(..., "--out", help="Output directory for the stream CSVs"),
) -> None:
    """Generate a synthetic world and write its streams and crashes."""
    num_threads = ctx.obj.get("threads", 1) if ctx.obj else 1
    try:
        config = load_scenario(scenario)
        with RunRecorder("simulate", seeds={"seed": config.seed}, config_paths=[scenario]) as recorder:
            recorder.add_input(scenario)
            streams = simulate_world(config, num_threads=num_threads)
            out.mkdir(parents=True, exist_ok=True)
            write_streams(streams, out, recorder)
    except CLI_ERRORS as exc:
        raise fail(exc) from exc
    console.print(
        f"[green]Simulated {config.n_intersections} intersections over {config.days} days[/green]"
    )
    console.print(f"[cyan]Volume records:[/cyan] {human_readable_number(len(streams.volumes))}")
    console.print(f"[cyan]Phase events:[/cyan] {human_readable_number(len(streams.phases))}")
    console.print(f"[cyan]Speed observations:[/cyan] {human_readable_number(len(streams.speeds))}")
    console.print(f"[cyan]Crashes:[/cyan] {human_readable_number(len(streams.crashes))}")
