"""CSV schemas and I/O for the five raw ingest streams.

Inside the package every timestamp column holds ``int64`` seconds since the
epoch; on disk they are ISO-8601 strings (``YYYY-MM-DDTHH:MM:SS``).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from pydantic import TypeAdapter

from .domain import from_epoch, to_epoch, validate_intersection
from .exceptions import InvalidInputError
from .manifest import csv_bytes
from .schemas import (
    Bearing,
    CrashRecord,
    IntersectionConfig,
    LocationClass,
    Movement,
    PhaseEvent,
    Position,
    SpeedObservation,
    VolumeRecord,
    WeatherRecord,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping

    from .manifest import RunRecorder

VOLUME_COLUMNS = ["intersection", "bearing", "lane_index", "movement", "window_start", "count"]
PHASE_COLUMNS = [
    "intersection",
    "bearing",
    "movement",
    "green_start",
    "green_end",
    "queue_at_green",
    "max_wait_at_green",
]
SPEED_COLUMNS = ["intersection", "bearing", "timestamp", "space_mean_speed"]
WEATHER_COLUMNS = ["timestamp", "weather_type", "visibility", "hourly_precip"]
CRASH_COLUMNS = [
    "id",
    "intersection",
    "occurred_at",
    "at_fault_bearing",
    "location_class",
    "single_vehicle",
    "impaired",
    "position",
    "distance_ft",
]

STREAM_FILES = {
    "volumes": ("volumes.csv", VOLUME_COLUMNS, ["window_start"]),
    "phases": ("phases.csv", PHASE_COLUMNS, ["green_start", "green_end"]),
    "speeds": ("speeds.csv", SPEED_COLUMNS, ["timestamp"]),
    "weather": ("weather.csv", WEATHER_COLUMNS, ["timestamp"]),
    "crashes": ("crashes.csv", CRASH_COLUMNS, ["occurred_at"]),
}
INTERSECTIONS_FILE = "intersections.json"

_INTERSECTIONS = TypeAdapter(list[IntersectionConfig])
_TRUE = {"true", "1", "yes"}


# -- Timestamps --


def parse_timestamps(values: Iterable[str]) -> np.ndarray:
    """ISO strings to int64 epoch seconds."""
    arr = np.asarray(list(values), dtype="datetime64[s]")
    return arr.astype(np.int64)


def format_timestamps(seconds: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(seconds, dtype=np.int64).astype("datetime64[s]")
    return np.datetime_as_string(arr, unit="s")


# -- Stream container --


@dataclasses.dataclass(frozen=True, slots=True)
class StreamSet:
    """The five raw streams plus the intersection layouts they refer to."""

    intersections: Mapping[str, IntersectionConfig]
    volumes: pd.DataFrame
    phases: pd.DataFrame
    speeds: pd.DataFrame
    weather: pd.DataFrame
    crashes: pd.DataFrame

    @property
    def study_period(self) -> tuple[int, int]:
        """[start, end) of the volume coverage, in epoch seconds."""
        if self.volumes.empty:
            msg = "no volume records: study period undefined"
            raise InvalidInputError(msg)
        start = int(self.volumes["window_start"].min())
        end = int(self.volumes["window_start"].max()) + 900
        return start, end

    def replace(self, **changes: object) -> StreamSet:
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]


def empty_frame(columns: list[str]) -> pd.DataFrame:
    return pd.DataFrame({col: pd.Series(dtype=object) for col in columns})


def validate_streams(streams: StreamSet) -> None:
    """Check the record-level invariants of every stream."""
    vol = streams.volumes
    if not vol.empty:
        if (vol["window_start"] % 900 != 0).any():
            msg = "volume window_start values must be aligned to 15-minute boundaries"
            raise InvalidInputError(msg)
        if (vol["count"] < 0).any():
            msg = "volume counts must be non-negative"
            raise InvalidInputError(msg)
    ph = streams.phases
    if not ph.empty and (ph["green_end"] <= ph["green_start"]).any():
        msg = "phase events must have green_end > green_start"
        raise InvalidInputError(msg)
    sp = streams.speeds
    if not sp.empty:
        speeds = sp["space_mean_speed"].to_numpy(dtype=float)
        if not (np.isfinite(speeds) & (speeds > 0)).all():
            msg = "space-mean speeds must be finite and positive"
            raise InvalidInputError(msg)
    wx = streams.weather
    if not wx.empty:
        if not wx["weather_type"].isin([0, 1]).all():
            msg = "weather_type must be 0 (normal) or 1 (adverse)"
            raise InvalidInputError(msg)
        if not wx["visibility"].between(0, 10).all() or (wx["hourly_precip"] < 0).any():
            msg = "weather visibility must lie in [0, 10] and precipitation be >= 0"
            raise InvalidInputError(msg)
    for config in streams.intersections.values():
        validate_intersection(config)


# -- Reading --


def _read_table(path: Path, columns: list[str], time_columns: list[str]) -> pd.DataFrame:
    if not path.exists():
        msg = f"missing stream file: {path}"
        raise FileNotFoundError(msg)
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        msg = f"{path.name} is missing columns: {', '.join(missing)}"
        raise InvalidInputError(msg)
    df = df[columns].copy()
    for col in time_columns:
        try:
            df[col] = parse_timestamps(df[col])
        except ValueError as exc:
            msg = f"{path.name}: bad timestamp in column {col}: {exc}"
            raise InvalidInputError(msg) from exc
    return df


def _coerce_numeric(df: pd.DataFrame, ints: list[str], floats: list[str]) -> pd.DataFrame:
    for col in ints:
        df[col] = pd.to_numeric(df[col]).astype(np.int64)
    for col in floats:
        df[col] = pd.to_numeric(df[col], errors="coerce").astype(float)
    return df


def read_intersections(path: Path) -> dict[str, IntersectionConfig]:
    configs = _INTERSECTIONS.validate_json(path.read_bytes())
    return {c.id: c for c in configs}


def intersections_json(configs: Iterable[IntersectionConfig]) -> bytes:
    return _INTERSECTIONS.dump_json(sorted(configs, key=lambda c: c.id), indent=2) + b"\n"


def read_crashes(path: Path) -> pd.DataFrame:
    df = _read_table(path, CRASH_COLUMNS, ["occurred_at"])
    for col in ("single_vehicle", "impaired"):
        df[col] = df[col].str.lower().isin(_TRUE)
    df["distance_ft"] = pd.to_numeric(df["distance_ft"], errors="coerce").astype(float)
    return df


def read_streams(directory: Path, *, require_crashes: bool = True) -> StreamSet:
    """Load a streams directory written by ``write_streams`` (or by hand)."""
    name, cols, times = STREAM_FILES["volumes"]
    volumes = _coerce_numeric(_read_table(directory / name, cols, times), ["lane_index", "count"], [])
    name, cols, times = STREAM_FILES["phases"]
    phases = _coerce_numeric(
        _read_table(directory / name, cols, times), [], ["queue_at_green", "max_wait_at_green"]
    )
    name, cols, times = STREAM_FILES["speeds"]
    speeds = _coerce_numeric(_read_table(directory / name, cols, times), [], ["space_mean_speed"])
    name, cols, times = STREAM_FILES["weather"]
    weather = _coerce_numeric(
        _read_table(directory / name, cols, times), ["weather_type"], ["visibility", "hourly_precip"]
    )
    crash_path = directory / STREAM_FILES["crashes"][0]
    if crash_path.exists() or require_crashes:
        crashes = read_crashes(crash_path)
    else:
        crashes = empty_frame(CRASH_COLUMNS)
    streams = StreamSet(
        intersections=read_intersections(directory / INTERSECTIONS_FILE),
        volumes=volumes,
        phases=phases,
        speeds=speeds,
        weather=weather,
        crashes=crashes,
    )
    validate_streams(streams)
    return streams


# -- Writing --


def stream_frame_for_disk(kind: str, df: pd.DataFrame) -> pd.DataFrame:
    """Copy of an internal frame with ISO timestamps, ready for CSV."""
    _, columns, time_columns = STREAM_FILES[kind]
    out = df[columns].copy()
    for col in time_columns:
        out[col] = format_timestamps(out[col].to_numpy())
    return out


def write_streams(streams: StreamSet, directory: Path, recorder: RunRecorder) -> None:
    for kind, (filename, _, _) in STREAM_FILES.items():
        frame = stream_frame_for_disk(kind, getattr(streams, kind))
        recorder.write_csv(frame, directory / filename)
    recorder.write_bytes(
        directory / INTERSECTIONS_FILE, intersections_json(streams.intersections.values())
    )


def crash_csv_bytes(df: pd.DataFrame) -> bytes:
    return csv_bytes(stream_frame_for_disk("crashes", df))


# -- Record conversions --


def volume_records(df: pd.DataFrame) -> list[VolumeRecord]:
    return [
        VolumeRecord(
            intersection=row.intersection,
            bearing=Bearing(row.bearing),
            lane_index=int(row.lane_index),
            movement=Movement(row.movement),
            window_start=from_epoch(row.window_start),
            count=int(row.count),
        )
        for row in df.itertuples(index=False)
    ]


def phase_events(df: pd.DataFrame) -> list[PhaseEvent]:
    return [
        PhaseEvent(
            intersection=row.intersection,
            bearing=Bearing(row.bearing),
            movement=Movement(row.movement),
            green_start=from_epoch(row.green_start),
            green_end=from_epoch(row.green_end),
            queue_at_green=float(row.queue_at_green),
            max_wait_at_green=float(row.max_wait_at_green),
        )
        for row in df.itertuples(index=False)
    ]


def speed_observations(df: pd.DataFrame) -> list[SpeedObservation]:
    return [
        SpeedObservation(
            intersection=row.intersection,
            bearing=Bearing(row.bearing),
            timestamp=from_epoch(row.timestamp),
            space_mean_speed=float(row.space_mean_speed),
        )
        for row in df.itertuples(index=False)
    ]


def weather_records(df: pd.DataFrame) -> list[WeatherRecord]:
    return [
        WeatherRecord(
            timestamp=from_epoch(row.timestamp),
            weather_type=int(row.weather_type),
            visibility=float(row.visibility),
            hourly_precip=float(row.hourly_precip),
        )
        for row in df.itertuples(index=False)
    ]


def crash_records(df: pd.DataFrame) -> list[CrashRecord]:
    records = []
    for row in df.itertuples(index=False):
        distance = float(row.distance_ft) if pd.notna(row.distance_ft) else None
        records.append(
            CrashRecord(
                id=str(row.id),
                intersection=str(row.intersection),
                occurred_at=from_epoch(row.occurred_at),
                at_fault_bearing=Bearing(row.at_fault_bearing),
                location_class=LocationClass(row.location_class) if row.location_class else None,
                single_vehicle=bool(row.single_vehicle),
                impaired=bool(row.impaired),
                position=Position(row.position) if row.position else None,
                distance_ft=distance,
            )
        )
    return records


def crashes_frame(records: Iterable[CrashRecord]) -> pd.DataFrame:
    rows = [
        {
            "id": r.id,
            "intersection": r.intersection,
            "occurred_at": to_epoch(r.occurred_at),
            "at_fault_bearing": str(r.at_fault_bearing),
            "location_class": str(r.location_class) if r.location_class else "",
            "single_vehicle": r.single_vehicle,
            "impaired": r.impaired,
            "position": str(r.position) if r.position else "",
            "distance_ft": r.distance_ft if r.distance_ft is not None else np.nan,
        }
        for r in records
    ]
    if not rows:
        return empty_frame(CRASH_COLUMNS)
    return pd.DataFrame(rows, columns=CRASH_COLUMNS)
