"""Feature engineering: time-slice traffic, signal, speed and weather aggregates.

Scalar functions (``aggregate_speed``, ``aggregate_phase``, ``compute_oafr``...)
operate on raw records and define the semantics. ``StreamIndex`` computes the
same quantities for many windows at once from cumulative sums, which is what
dataset construction and crash injection use.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from .domain import (
    N_SLICES,
    SLICE_SECONDS,
    SPEED_MEASURES,
    WEATHER_MEASURES,
    assign_approach_roles,
    event_variables,
    parse_variable_name,
    to_epoch,
)
from .exceptions import (
    InvalidInputError,
    LaneSkipped,
    MissingDataError,
    MissingWeatherError,
    UndefinedStatisticError,
)
from .schemas import (
    Bearing,
    EventKey,
    FeatureVector,
    IntersectionConfig,
    Movement,
    Role,
)
from .settings import BoundaryMode, MeanMode, OafrSettings, ZeroVolumePolicy

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from datetime import datetime

    from .schemas import PhaseEvent, SpeedObservation, VolumeRecord, WeatherRecord
    from .streams import StreamSet

logger = logging.getLogger(__name__)

VOLUME_WINDOW_SECONDS = 900
SUB_WINDOWS = VOLUME_WINDOW_SECONDS // SLICE_SECONDS


# -- Volumes and OAFR --


def disaggregate_volume(
    records: Iterable[VolumeRecord],
) -> dict[tuple[Bearing, Movement, int], tuple[float, float, float]]:
    """Spread each lane's 15-minute count evenly over its three 5-minute sub-windows."""
    per_lane: dict[tuple[Bearing, Movement, int], tuple[float, float, float]] = {}
    for record in records:
        share = record.count / SUB_WINDOWS
        per_lane[(record.bearing, record.movement, record.lane_index)] = (share, share, share)
    return per_lane


def _neighbour_fractions(n_lanes: int, mode: BoundaryMode) -> tuple[np.ndarray, np.ndarray]:
    """Destination fractions of the left (i-1) and right (i+1) neighbours of each lane.

    A neighbour that is missing contributes nothing. Under ``forced_destination`` a
    neighbour whose only possible change target is the subject lane counts fully.
    """
    left = np.zeros(n_lanes)
    right = np.zeros(n_lanes)
    for i in range(n_lanes):
        if i - 1 >= 0:
            forced = mode == BoundaryMode.forced_destination and i - 2 < 0
            left[i] = 1.0 if forced else 0.5
        if i + 1 < n_lanes:
            forced = mode == BoundaryMode.forced_destination and i + 2 >= n_lanes
            right[i] = 1.0 if forced else 0.5
    return left, right


def afr_terms(volumes: np.ndarray, settings: OafrSettings) -> tuple[np.ndarray, np.ndarray]:
    """Numerators and denominators of every lane's AFR.

    ``volumes`` has lanes on its last axis. Denominators of lanes skipped under
    the skip-lane policy are NaN.
    """
    V = np.asarray(volumes, dtype=float)
    n_lanes = V.shape[-1]
    if n_lanes < 2:
        msg = "AFR is undefined for a single-lane group"
        raise UndefinedStatisticError(msg)
    left, right = _neighbour_fractions(n_lanes, settings.boundary_mode)
    num = np.zeros_like(V)
    num[..., 1:] += left[1:] * V[..., :-1]
    num[..., :-1] += right[:-1] * V[..., 1:]
    if settings.zero_volume_policy == ZeroVolumePolicy.epsilon:
        den = np.where(V == 0, settings.epsilon, V)
    else:
        den = np.where(V == 0, np.nan, V)
    return num, den


def compute_afr(volumes: Sequence[float], i: int, settings: OafrSettings) -> float:
    """Modified average flow ratio of lane ``i`` (1-based, leftmost lane is 1)."""
    if not 1 <= i <= len(volumes):
        msg = f"lane index {i} out of range for {len(volumes)} lanes"
        raise InvalidInputError(msg)
    num, den = afr_terms(np.asarray(volumes, dtype=float), settings)
    if np.isnan(den[i - 1]):
        msg = f"lane {i} has zero volume"
        raise LaneSkipped(msg)
    return float(num[i - 1] / den[i - 1])


def oafr_array(volumes: np.ndarray, settings: OafrSettings) -> np.ndarray:
    """OAFR over the last axis; NaN where every lane is skipped."""
    num, den = afr_terms(volumes, settings)
    valid = ~np.isnan(den)
    n_valid = valid.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        if settings.mean_mode == MeanMode.arithmetic:
            afr = np.where(valid, num / np.where(valid, den, 1.0), 0.0)
            result = afr.sum(axis=-1) / n_valid
        else:
            # product of numerators over product of denominators keeps the
            # two-lane equal-split case exactly at 0.5
            ratio = np.prod(np.where(valid, num, 1.0), axis=-1) / np.prod(
                np.where(valid, den, 1.0), axis=-1
            )
            result = np.power(ratio, 1.0 / n_valid)
    return np.where(n_valid > 0, result, np.nan)


def compute_oafr(volumes: Sequence[float], settings: OafrSettings) -> float:
    """Overall average flow ratio of one lane group (through lanes of an approach)."""
    value = float(oafr_array(np.asarray(volumes, dtype=float), settings))
    if np.isnan(value):
        msg = "OAFR is undefined: every lane was skipped"
        raise UndefinedStatisticError(msg)
    return value


# -- Speed, phase and weather aggregates --


def aggregate_speed(observations: Sequence[SpeedObservation]) -> tuple[float, float]:
    """Sample mean and standard deviation (n-1) of space-mean speeds in one window."""
    speeds = np.array([o.space_mean_speed for o in observations], dtype=float)
    if speeds.size == 0:
        msg = "no speed observations in window"
        raise MissingDataError(msg)
    std = float(speeds.std(ddof=1)) if speeds.size > 1 else 0.0
    return float(speeds.mean()), std


@dataclasses.dataclass(frozen=True, slots=True)
class PhaseAggregate:
    green_ratio: float
    avg_green: float
    std_green: float
    avg_queue: float
    avg_wait: float
    sparse: bool = False


def aggregate_phase(
    phase_events: Sequence[PhaseEvent], movement: Movement, window_start: datetime
) -> PhaseAggregate:
    """Signal measures of one movement over the 300 s window starting at ``window_start``.

    Green ratio uses green time clipped to the window; duration, queue and wait
    statistics use the phases whose green starts inside it.
    """
    a = to_epoch(window_start)
    b = a + SLICE_SECONDS
    green = 0.0
    durations, queues, waits = [], [], []
    for event in phase_events:
        if event.movement != movement:
            continue
        s, e = to_epoch(event.green_start), to_epoch(event.green_end)
        green += max(0, min(e, b) - max(s, a))
        if a <= s < b:
            durations.append(e - s)
            queues.append(event.queue_at_green)
            waits.append(event.max_wait_at_green)
    if green == 0 and not durations:
        return PhaseAggregate(0.0, 0.0, 0.0, 0.0, 0.0, sparse=True)
    ratio = 100.0 * green / SLICE_SECONDS
    if not durations:
        return PhaseAggregate(ratio, 0.0, 0.0, 0.0, 0.0)
    d = np.asarray(durations, dtype=float)
    std = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return PhaseAggregate(
        green_ratio=ratio,
        avg_green=float(d.mean()),
        std_green=std,
        avg_queue=float(np.mean(queues)),
        avg_wait=float(np.mean(waits)),
    )


def join_weather(
    event_instant: datetime, weather_records: Sequence[WeatherRecord]
) -> tuple[int, float, float]:
    """Fields of the latest weather record at or before the event instant."""
    prior = [r for r in weather_records if r.timestamp <= event_instant]
    if not prior:
        msg = f"no weather record at or before {event_instant.isoformat()}"
        raise MissingWeatherError(msg)
    latest = max(prior, key=lambda r: r.timestamp)
    return latest.weather_type, latest.visibility, latest.hourly_precip


# -- Vectorized per-intersection index --


def _window_sums(prefix: np.ndarray, times: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum of values whose time falls in [a, b), from a prefix-sum array."""
    lo = np.searchsorted(times, a, side="left")
    hi = np.searchsorted(times, b, side="left")
    return prefix[hi] - prefix[lo]


class _LaneVolumes:
    """Piecewise-constant flow of each lane, integrable over arbitrary windows."""

    def __init__(self, frame: pd.DataFrame, lanes: list[int], t0: int, t1: int) -> None:
        n_windows = max((t1 - t0) // VOLUME_WINDOW_SECONDS, 0)
        self.knots = t0 + VOLUME_WINDOW_SECONDS * np.arange(n_windows + 1, dtype=np.int64)
        counts = np.zeros((n_windows, len(lanes)))
        missing = np.ones((n_windows, len(lanes)))
        if n_windows and not frame.empty:
            w = ((frame["window_start"].to_numpy() - t0) // VOLUME_WINDOW_SECONDS).astype(int)
            lane_pos = {lane: j for j, lane in enumerate(lanes)}
            col = frame["lane_index"].map(lane_pos).to_numpy()
            ok = (w >= 0) & (w < n_windows) & ~pd.isna(col)
            rows, cols = w[ok], col[ok].astype(int)
            counts[rows, cols] = frame["count"].to_numpy(dtype=float)[ok]
            missing[rows, cols] = 0.0
        zero = np.zeros((1, len(lanes)))
        self.cum_counts = np.vstack([zero, np.cumsum(counts, axis=0)])
        self.cum_missing = np.vstack([zero, np.cumsum(missing, axis=0)])
        self.n_lanes = len(lanes)

    def window(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Volume per lane in [a, b); NaN when any covered 15-min window is missing."""
        out = np.empty((a.size, self.n_lanes))
        if self.knots.size < 2:
            out.fill(np.nan)
            return out
        inside = (a >= self.knots[0]) & (b <= self.knots[-1])
        for j in range(self.n_lanes):
            vol = np.interp(b, self.knots, self.cum_counts[:, j]) - np.interp(
                a, self.knots, self.cum_counts[:, j]
            )
            gap = np.interp(b, self.knots, self.cum_missing[:, j]) - np.interp(
                a, self.knots, self.cum_missing[:, j]
            )
            out[:, j] = np.where(inside & (gap <= 1e-9), vol, np.nan)
        return out


class _PhaseSeries:
    """Green intervals of one movement with prefix sums over green onsets."""

    def __init__(self, frame: pd.DataFrame) -> None:
        frame = frame.sort_values("green_start", kind="stable")
        starts = frame["green_start"].to_numpy(dtype=float)
        ends = frame["green_end"].to_numpy(dtype=float)
        if starts.size > 1:
            ends[:-1] = np.minimum(ends[:-1], starts[1:])
        durations = ends - starts
        self.starts = starts
        self.empty = starts.size == 0
        # cumulative green time, linear inside greens and flat during reds
        self.knots = np.column_stack([starts, ends]).ravel()
        self.cum_green = np.concatenate([[0.0], np.cumsum(durations)])
        self.cum_at_knots = np.column_stack([self.cum_green[:-1], self.cum_green[1:]]).ravel()
        self.center = float(durations.mean()) if durations.size else 0.0
        centered = durations - self.center
        zero = np.zeros(1)
        self.p_n = np.concatenate([zero, np.cumsum(np.ones_like(durations))])
        self.p_d = np.concatenate([zero, np.cumsum(centered)])
        self.p_d2 = np.concatenate([zero, np.cumsum(centered**2)])
        self.p_q = np.concatenate([zero, np.cumsum(frame["queue_at_green"].to_numpy(dtype=float))])
        self.p_w = np.concatenate(
            [zero, np.cumsum(frame["max_wait_at_green"].to_numpy(dtype=float))]
        )

    def window(self, a: np.ndarray) -> dict[str, np.ndarray]:
        zeros = np.zeros(a.size)
        if self.empty:
            return {"GreenRatio": zeros, "Avg_Green": zeros, "Std_Green": zeros,
                    "Avg_Queue": zeros, "Avg_Wait": zeros}  # fmt: skip
        b = a + SLICE_SECONDS
        green = np.interp(b, self.knots, self.cum_at_knots) - np.interp(
            a, self.knots, self.cum_at_knots
        )
        n = _window_sums(self.p_n, self.starts, a, b)
        sd = _window_sums(self.p_d, self.starts, a, b)
        sd2 = _window_sums(self.p_d2, self.starts, a, b)
        sq = _window_sums(self.p_q, self.starts, a, b)
        sw = _window_sums(self.p_w, self.starts, a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            safe_n = np.where(n > 0, n, 1.0)
            mean_c = sd / safe_n
            var = np.where(n > 1, (sd2 - n * mean_c**2) / np.where(n > 1, n - 1, 1.0), 0.0)
        return {
            "GreenRatio": 100.0 * green / SLICE_SECONDS,
            "Avg_Green": np.where(n > 0, mean_c + self.center, 0.0),
            "Std_Green": np.sqrt(np.clip(var, 0.0, None)),
            "Avg_Queue": np.where(n > 0, sq / safe_n, 0.0),
            "Avg_Wait": np.where(n > 0, sw / safe_n, 0.0),
        }


class _SpeedSeries:
    def __init__(self, frame: pd.DataFrame) -> None:
        frame = frame.sort_values("timestamp", kind="stable")
        self.times = frame["timestamp"].to_numpy(dtype=np.int64)
        speeds = frame["space_mean_speed"].to_numpy(dtype=float)
        self.center = float(speeds.mean()) if speeds.size else 0.0
        centered = speeds - self.center
        zero = np.zeros(1)
        self.p_n = np.concatenate([zero, np.cumsum(np.ones_like(speeds))])
        self.p_v = np.concatenate([zero, np.cumsum(centered)])
        self.p_v2 = np.concatenate([zero, np.cumsum(centered**2)])

    def window(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and n-1 standard deviation in [a, a+300); NaN where empty."""
        b = a + SLICE_SECONDS
        n = _window_sums(self.p_n, self.times, a, b)
        sv = _window_sums(self.p_v, self.times, a, b)
        sv2 = _window_sums(self.p_v2, self.times, a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_c = sv / n
            var = np.where(n > 1, (sv2 - n * mean_c**2) / np.where(n > 1, n - 1, 1.0), 0.0)
        avg = np.where(n > 0, mean_c + self.center, np.nan)
        std = np.where(n > 0, np.sqrt(np.clip(var, 0.0, None)), np.nan)
        return avg, std


@dataclasses.dataclass(frozen=True, slots=True)
class _ApproachIndex:
    through: _LaneVolumes
    left: _LaneVolumes
    phases: dict[Movement, _PhaseSeries]
    speed: _SpeedSeries | None


class StreamIndex:
    """Lookup structures over a ``StreamSet`` for fast window aggregation.

    Per-intersection structures are built lazily and cached; building is
    guarded by a lock so the index can be shared between worker threads.
    """

    def __init__(self, streams: StreamSet, settings: OafrSettings | None = None) -> None:
        self.streams = streams
        self.settings = settings or OafrSettings()
        self.t0, self.t1 = streams.study_period
        self._lock = threading.Lock()
        self._approaches: dict[tuple[str, Bearing], _ApproachIndex] = {}
        self._by_intersection = {
            "volumes": dict(tuple(streams.volumes.groupby("intersection", sort=False))),
            "phases": dict(tuple(streams.phases.groupby("intersection", sort=False))),
            "speeds": dict(tuple(streams.speeds.groupby("intersection", sort=False))),
        }
        weather = streams.weather.sort_values("timestamp", kind="stable")
        self._wx_times = weather["timestamp"].to_numpy(dtype=np.int64)
        self._wx_values = weather[["weather_type", "visibility", "hourly_precip"]].to_numpy(
            dtype=float
        )

    def config(self, intersection: str) -> IntersectionConfig:
        try:
            return self.streams.intersections[intersection]
        except KeyError:
            msg = f"unknown intersection {intersection!r}"
            raise InvalidInputError(msg) from None

    def _frame(self, kind: str, intersection: str) -> pd.DataFrame:
        frame = self._by_intersection[kind].get(intersection)
        if frame is None:
            return getattr(self.streams, kind).iloc[0:0]
        return frame

    def _approach(self, intersection: str, bearing: Bearing) -> _ApproachIndex:
        key = (intersection, bearing)
        cached = self._approaches.get(key)
        if cached is not None:
            return cached
        with self._lock:
            cached = self._approaches.get(key)
            if cached is None:
                cached = self._build_approach(intersection, bearing)
                self._approaches[key] = cached
        return cached

    def _build_approach(self, intersection: str, bearing: Bearing) -> _ApproachIndex:
        entry = self.config(intersection).approach(bearing)
        vol = self._frame("volumes", intersection)
        vol = vol[vol["bearing"] == bearing]
        left_lanes = list(range(1, entry.left_turn_lanes + 1))
        through_lanes = [entry.left_turn_lanes + j for j in range(1, entry.through_lanes + 1)]
        through = _LaneVolumes(vol[vol["movement"] == Movement.through], through_lanes, self.t0, self.t1)
        left = _LaneVolumes(vol[vol["movement"] == Movement.left], left_lanes, self.t0, self.t1)
        ph = self._frame("phases", intersection)
        ph = ph[ph["bearing"] == bearing]
        phases = {mv: _PhaseSeries(ph[ph["movement"] == mv]) for mv in Movement}
        speed = None
        if entry.is_major:
            sp = self._frame("speeds", intersection)
            speed = _SpeedSeries(sp[sp["bearing"] == bearing])
        return _ApproachIndex(through=through, left=left, phases=phases, speed=speed)

    def approach_measures(
        self, intersection: str, bearing: Bearing, window_starts: np.ndarray
    ) -> dict[str, np.ndarray]:
        """All 13 approach measures for windows [s, s+300); NaN marks missing volume."""
        idx = self._approach(intersection, bearing)
        a = np.asarray(window_starts, dtype=np.int64)
        b = a + SLICE_SECONDS
        through = idx.through.window(a, b)
        left = idx.left.window(a, b)
        out: dict[str, np.ndarray] = {
            "Vol_LT": (
                left.sum(axis=1)
                if left.shape[1]
                else np.where(np.isnan(through).any(axis=1), np.nan, 0.0)
            ),
            "Vol_Th": through.sum(axis=1),
        }
        if through.shape[1] >= 2:
            out["OAFR"] = oafr_array(through, self.settings)
        else:
            out["OAFR"] = np.full(a.size, np.nan)
        for prefix, movement in (("LT", Movement.left), ("TH", Movement.through)):
            for name, values in idx.phases[movement].window(a).items():
                out[f"{prefix}_{name}"] = values
        return out

    def speed_measures(
        self, intersection: str, bearing: Bearing, window_starts: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        idx = self._approach(intersection, bearing)
        a = np.asarray(window_starts, dtype=np.int64)
        if idx.speed is None:
            nan = np.full(a.size, np.nan)
            return nan, nan.copy()
        return idx.speed.window(a)

    def undefined_oafr(
        self, intersection: str, at_fault_bearing: Bearing, names: Sequence[str]
    ) -> list[str]:
        """OAFR variables among ``names`` whose approach has a single through lane."""
        config = self.config(intersection)
        approach_map = assign_approach_roles(at_fault_bearing, config)
        undefined = []
        for name in names:
            parsed = parse_variable_name(name)
            if parsed.measure != "OAFR" or parsed.role is None:
                continue
            if config.approach(approach_map.bearing_of(parsed.role)).through_lanes < 2:
                undefined.append(name)
        return undefined

    def weather_at(self, instants: np.ndarray) -> np.ndarray:
        """(n, 3) weather type, visibility, precipitation; NaN rows when no prior record."""
        t = np.asarray(instants, dtype=np.int64)
        pos = np.searchsorted(self._wx_times, t, side="right") - 1
        out = np.full((t.size, 3), np.nan)
        ok = pos >= 0
        out[ok] = self._wx_values[pos[ok]]
        return out

    def feature_matrix(
        self,
        intersection: str,
        at_fault_bearing: Bearing,
        location_class: str,
        instants: np.ndarray,
        names: Sequence[str] | None = None,
    ) -> tuple[list[str], np.ndarray]:
        """Feature values for many events sharing intersection, bearing and class.

        Rows follow ``instants``; columns follow ``names`` (default: the full
        variable set of the location class). Missing values are NaN.
        """
        config = self.config(intersection)
        approach_map = assign_approach_roles(at_fault_bearing, config)
        if names is None:
            names = event_variables(location_class)
        t = np.asarray(instants, dtype=np.int64)
        parsed = [parse_variable_name(n) for n in names]
        matrix = np.empty((t.size, len(names)))
        cache: dict[tuple[str, int], dict[str, np.ndarray]] = {}
        speed_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        weather = None
        a_bearing = approach_map.bearing_of(Role.A)
        for col, p in enumerate(parsed):
            if p.measure in WEATHER_MEASURES:
                if weather is None:
                    weather = self.weather_at(t)
                matrix[:, col] = weather[:, WEATHER_MEASURES.index(p.measure)]
                continue
            if p.slice_index is None:
                msg = f"variable {names[col]!r} needs a slice suffix"
                raise InvalidInputError(msg)
            starts = t - SLICE_SECONDS * p.slice_index
            if p.measure in SPEED_MEASURES:
                if p.slice_index not in speed_cache:
                    speed_cache[p.slice_index] = self.speed_measures(intersection, a_bearing, starts)
                avg, std = speed_cache[p.slice_index]
                matrix[:, col] = avg if p.measure == "Avg_speed" else std
                continue
            assert p.role is not None
            bearing = approach_map.bearing_of(p.role)
            key = (str(bearing), p.slice_index)
            if key not in cache:
                cache[key] = self.approach_measures(intersection, bearing, starts)
            matrix[:, col] = cache[key][p.measure]
        return list(names), matrix


def missing_reason(names: Sequence[str], row: np.ndarray) -> str:
    """Describe which variables of a feature row are missing."""
    missing = [n for n, v in zip(names, row, strict=True) if not np.isfinite(v)]
    kinds = sorted({parse_variable_name(n).measure for n in missing})
    if any(k in WEATHER_MEASURES for k in kinds):
        return "missing weather"
    if any(k in SPEED_MEASURES for k in kinds):
        return "missing speed"
    return "missing " + ",".join(kinds[:3])


def extract_features(
    event: EventKey,
    index: StreamIndex,
    names: Sequence[str] | None = None,
) -> FeatureVector:
    """Slice-tagged feature vector of one crash or control event.

    Slice k covers [t - 5k min, t - 5(k-1) min) before the event instant t.
    Raises ``MissingDataError`` when any required window has no data and
    ``UndefinedStatisticError`` when an OAFR variable belongs to an approach
    with a single through lane.
    """
    names = list(names) if names is not None else event_variables(event.location_class)
    undefined = index.undefined_oafr(event.intersection, event.at_fault_bearing, names)
    if undefined:
        msg = f"OAFR is undefined for a single through lane: {', '.join(undefined)}"
        raise UndefinedStatisticError(msg)
    cols, matrix = index.feature_matrix(
        event.intersection,
        event.at_fault_bearing,
        event.location_class,
        np.array([to_epoch(event.instant)]),
        names,
    )
    row = matrix[0]
    if not np.isfinite(row).all():
        raise MissingDataError(missing_reason(cols, row))
    return FeatureVector(values=dict(zip(cols, row.tolist(), strict=True)))


def slice_starts(instant: int) -> dict[int, int]:
    """Window start (epoch seconds) of every slice of an event instant."""
    return {k: instant - SLICE_SECONDS * k for k in range(1, N_SLICES + 1)}

