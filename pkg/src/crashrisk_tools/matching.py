"""Matched case-control dataset construction.

Crashes are classified and filtered, then each eligible crash is matched to
``m`` control instants at the same intersection, weekday and clock time on
other dates, away from any other crash.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import typer
from rich.table import Table

from .domain import (
    N_SLICES,
    SLICE_SECONDS,
    event_variables,
    from_epoch,
    matching_factors,
    to_epoch,
    validate_strata,
)
from .exceptions import (
    InvalidInputError,
    NotIntersectionRelated,
    UnmatchedCrashError,
)
from .features import StreamIndex, missing_reason
from .manifest import CLI_ERRORS, RunRecorder, fail
from .schemas import (
    Bearing,
    CrashRecord,
    EventKey,
    EventRole,
    FeatureVector,
    LocationClass,
    Position,
    Stratum,
)
from .settings import MatchingSettings, get_matching_settings, get_oafr_settings
from .streams import (
    crash_csv_bytes,
    crash_records,
    crashes_frame,
    format_timestamps,
    parse_timestamps,
    read_crashes,
    read_streams,
)
from .utils import console, human_readable_number, human_readable_percent, parallel_map

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence
    from datetime import datetime

    from .schemas import IntersectionConfig

logger = logging.getLogger(__name__)

LOOKBACK_SECONDS = SLICE_SECONDS * N_SLICES
WEEK_SECONDS = 7 * 86400

META_COLUMNS = [
    "stratum_id",
    "event_id",
    "role",
    "label",
    "intersection",
    "instant",
    "location_class",
    "at_fault_bearing",
]
DROP_LOG_COLUMNS = ["crash_id", "stage", "reason"]


@dataclasses.dataclass(frozen=True, slots=True)
class DropRecord:
    crash_id: str
    stage: str
    reason: str


# -- Classification and filtering --


def classify_location(crash: CrashRecord, threshold: float = 250.0) -> LocationClass:
    """Location class from the crash position relative to the stop bar.

    Records without a position keep their pre-assigned class.
    """
    if crash.position is None:
        if crash.location_class is None:
            msg = f"crash {crash.id} has neither a position nor a location class"
            raise InvalidInputError(msg)
        return crash.location_class
    if crash.position == Position.box:
        return LocationClass.within
    if crash.distance_ft is None or crash.distance_ft < 0:
        msg = f"crash {crash.id} needs a non-negative distance for position {crash.position}"
        raise InvalidInputError(msg)
    if crash.distance_ft > threshold:
        msg = f"crash {crash.id} is {crash.distance_ft:g} ft from the intersection"
        raise NotIntersectionRelated(msg)
    return LocationClass.entrance if crash.position == Position.upstream else LocationClass.exit


def filter_crashes(
    records: Iterable[CrashRecord],
    intersections: Mapping[str, IntersectionConfig] | None = None,
) -> list[CrashRecord]:
    """Keep multi-vehicle, unimpaired within/entrance crashes.

    With ``intersections`` given, entrance crashes must also have their
    at-fault vehicle on a major approach.
    """
    return [r for r in records if _drop_reason(r, intersections) is None]


def _drop_reason(
    record: CrashRecord, intersections: Mapping[str, IntersectionConfig] | None
) -> str | None:
    if record.single_vehicle:
        return "single-vehicle crash"
    if record.impaired:
        return "alcohol or drug involvement"
    if record.location_class not in (LocationClass.within, LocationClass.entrance):
        return f"location class {record.location_class}"
    if intersections is not None:
        config = intersections.get(record.intersection)
        if config is None:
            return f"unknown intersection {record.intersection}"
        if record.at_fault_bearing not in config.bearings:
            return f"at-fault bearing {record.at_fault_bearing} not an approach"
        if (
            record.location_class == LocationClass.entrance
            and record.at_fault_bearing not in config.major_bearings
        ):
            return "entrance crash on a minor approach"
    return None


def prepare_crashes(
    records: Iterable[CrashRecord],
    intersections: Mapping[str, IntersectionConfig],
    threshold: float = 250.0,
) -> tuple[list[CrashRecord], list[DropRecord]]:
    """Classify every crash and apply the eligibility filters."""
    eligible: list[CrashRecord] = []
    drops: list[DropRecord] = []
    for record in records:
        try:
            location_class = classify_location(record, threshold)
        except NotIntersectionRelated as exc:
            drops.append(DropRecord(record.id, "classify", str(exc)))
            continue
        classified = dataclasses.replace(record, location_class=location_class)
        reason = _drop_reason(classified, intersections)
        if reason is not None:
            drops.append(DropRecord(record.id, "filter", reason))
            continue
        eligible.append(classified)
    return eligible, drops


# -- Control sampling --


def crash_log_times(crash_log: pd.DataFrame) -> dict[str, np.ndarray]:
    """Sorted crash instants (epoch seconds) per intersection."""
    if crash_log.empty:
        return {}
    return {
        str(name): np.sort(group["occurred_at"].to_numpy(dtype=np.int64))
        for name, group in crash_log.groupby("intersection", sort=True)
    }


def candidate_controls(
    crash: EventKey,
    study_period: tuple[int, int],
    crash_times: Mapping[str, np.ndarray],
    settings: MatchingSettings,
) -> list[datetime]:
    """Same weekday and clock time on other dates, clear of every crash.

    A candidate is excluded when any crash at the intersection falls within
    ``exclusion_window`` hours of it, or when its 20-minute lookback starts
    before the study period.
    """
    t = to_epoch(crash.instant)
    start, end = study_period
    k_min = -((t - LOOKBACK_SECONDS - start) // WEEK_SECONDS)
    k_max = (end - t) // WEEK_SECONDS
    if settings.candidate_weeks is not None:
        k_min = max(k_min, -settings.candidate_weeks)
        k_max = min(k_max, settings.candidate_weeks)
    weeks = np.array([k for k in range(k_min, k_max + 1) if k != 0], dtype=np.int64)
    instants = t + WEEK_SECONDS * weeks
    instants = instants[(instants - LOOKBACK_SECONDS >= start) & (instants <= end)]
    times = crash_times.get(crash.intersection)
    if times is not None and times.size and instants.size:
        window = int(round(settings.exclusion_window * 3600))
        lo = np.searchsorted(times, instants - window, side="left")
        hi = np.searchsorted(times, instants + window, side="right")
        instants = instants[hi == lo]
    return [from_epoch(s) for s in instants]


def sample_controls(
    candidates: Sequence[datetime],
    settings: MatchingSettings,
    rng: np.random.Generator | None = None,
) -> list[datetime]:
    """Uniform sample of ``m`` candidates without replacement."""
    if len(candidates) < settings.m:
        msg = f"{len(candidates)} candidate instants, {settings.m} needed"
        raise UnmatchedCrashError(msg)
    rng = rng if rng is not None else np.random.default_rng(settings.rng_seed)
    chosen = rng.choice(len(candidates), size=settings.m, replace=False)
    return [candidates[i] for i in chosen]


def control_key(crash_key: EventKey, instant: datetime) -> EventKey:
    return dataclasses.replace(crash_key, instant=instant, role=EventRole.control)


def crash_key(crash: CrashRecord) -> EventKey:
    if crash.location_class not in (LocationClass.within, LocationClass.entrance):
        msg = f"crash {crash.id} is not a within or entrance crash"
        raise InvalidInputError(msg)
    return EventKey(
        intersection=crash.intersection,
        instant=crash.occurred_at,
        location_class=crash.location_class,
        role=EventRole.crash,
        stratum_id=crash.id,
        at_fault_bearing=crash.at_fault_bearing,
    )


# -- Dataset construction --


@dataclasses.dataclass(frozen=True, slots=True)
class MatchedDataset:
    strata: list[Stratum]
    drops: list[DropRecord]

    def by_class(self, location_class: LocationClass) -> list[Stratum]:
        return [s for s in self.strata if s.crash_key and s.crash_key.location_class == location_class]


@dataclasses.dataclass(frozen=True, slots=True)
class _Plan:
    key: EventKey
    candidates: list[datetime]
    order: np.ndarray


def _complete_stratum(plan: _Plan, index: StreamIndex, m: int) -> Stratum | DropRecord:
    key = plan.key
    names = event_variables(key.location_class)
    undefined = index.undefined_oafr(key.intersection, key.at_fault_bearing, names)
    if undefined:
        reason = f"undefined OAFR, single through lane: {', '.join(undefined[:2])}"
        return DropRecord(key.stratum_id, "features", reason)
    instants = np.array(
        [to_epoch(key.instant), *(to_epoch(c) for c in plan.candidates)], dtype=np.int64
    )
    cols, matrix = index.feature_matrix(
        key.intersection, key.at_fault_bearing, key.location_class, instants, names
    )
    complete = np.isfinite(matrix).all(axis=1)
    if not complete[0]:
        return DropRecord(key.stratum_id, "features", f"crash {missing_reason(cols, matrix[0])}")
    picked = [int(j) for j in plan.order if complete[j + 1]][:m]
    if len(picked) < m:
        reason = f"{len(picked)} controls with complete features, {m} needed"
        return DropRecord(key.stratum_id, "features", reason)

    def vector(row: np.ndarray) -> FeatureVector:
        return FeatureVector(values=dict(zip(cols, row.tolist(), strict=True)))

    return Stratum(
        stratum_id=key.stratum_id,
        crash=vector(matrix[0]),
        controls=tuple(vector(matrix[j + 1]) for j in picked),
        crash_key=key,
        control_keys=tuple(control_key(key, plan.candidates[j]) for j in picked),
    )


def build_dataset(
    crashes: Sequence[CrashRecord],
    index: StreamIndex,
    settings: MatchingSettings,
    *,
    crash_log: pd.DataFrame | None = None,
    num_threads: int = 1,
) -> MatchedDataset:
    """Match every eligible crash and attach complete feature vectors.

    Controls are drawn from one random permutation of the candidates per
    crash; a control whose features are incomplete is replaced by the next
    candidate in that permutation. Crashes are processed in id order with a
    single generator so the result does not depend on ``num_threads``.
    """
    log = crash_log if crash_log is not None else crashes_frame(crashes)
    times = crash_log_times(log)
    study_period = index.streams.study_period
    rng = np.random.default_rng(settings.rng_seed)
    plans: list[_Plan] = []
    drops: list[DropRecord] = []
    for crash in sorted(crashes, key=lambda c: c.id):
        key = crash_key(crash)
        candidates = candidate_controls(key, study_period, times, settings)
        if len(candidates) < settings.m:
            reason = f"unmatched: {len(candidates)} candidate instants, {settings.m} needed"
            drops.append(DropRecord(crash.id, "match", reason))
            continue
        plans.append(_Plan(key=key, candidates=candidates, order=rng.permutation(len(candidates))))

    results = parallel_map(
        lambda plan: _complete_stratum(plan, index, settings.m),
        plans,
        num_threads,
        description="Extracting features...",
    )
    strata = [r for r in results if isinstance(r, Stratum)]
    drops.extend(r for r in results if isinstance(r, DropRecord))
    for drop in drops:
        logger.warning("dropped crash %s (%s): %s", drop.crash_id, drop.stage, drop.reason)
    return MatchedDataset(strata=strata, drops=drops)


def audit_dataset(
    strata: Sequence[Stratum],
    crash_log: pd.DataFrame,
    settings: MatchingSettings,
) -> list[str]:
    """Re-check a built dataset; returns a list of violations (empty when clean)."""
    problems: list[str] = []
    try:
        validate_strata(strata)
    except InvalidInputError as exc:
        problems.append(str(exc))
    times = crash_log_times(crash_log)
    window = int(round(settings.exclusion_window * 3600))
    for stratum in strata:
        if stratum.m != settings.m:
            problems.append(f"stratum {stratum.stratum_id} has {stratum.m} controls")
        if stratum.crash_key is None:
            continue
        factors = matching_factors(stratum.crash_key)
        for key in stratum.control_keys:
            if matching_factors(key) != factors:
                problems.append(f"stratum {stratum.stratum_id}: control {key.instant} breaks matching")
            t = to_epoch(key.instant)
            near = times.get(key.intersection)
            if near is not None and near.size:
                lo = np.searchsorted(near, t - window, side="left")
                hi = np.searchsorted(near, t + window, side="right")
                if hi > lo:
                    problems.append(
                        f"stratum {stratum.stratum_id}: control {key.instant} within "
                        f"{settings.exclusion_window:g} h of a crash"
                    )
    return problems


# -- Wide dataset files --


def strata_frame(strata: Sequence[Stratum]) -> pd.DataFrame:
    """One row per event: metadata columns, then one column per variable."""
    if not strata:
        return pd.DataFrame(columns=META_COLUMNS)
    first = strata[0]
    if first.crash_key is not None:
        canonical = event_variables(first.crash_key.location_class)
        names = [n for n in canonical if n in first.crash.names]
        names += sorted(first.crash.names - set(names))
    else:
        names = sorted(first.crash.names)
    rows = []
    for stratum in strata:
        keys = (stratum.crash_key, *stratum.control_keys) if stratum.crash_key else ()
        for j, vector in enumerate(stratum.vectors):
            key = keys[j] if keys else None
            rows.append(
                {
                    "stratum_id": stratum.stratum_id,
                    "event_id": stratum.stratum_id if j == 0 else f"{stratum.stratum_id}-c{j}",
                    "role": str(EventRole.crash if j == 0 else EventRole.control),
                    "label": 1 if j == 0 else 0,
                    "intersection": key.intersection if key else "",
                    "instant": to_epoch(key.instant) if key else np.nan,
                    "location_class": str(key.location_class) if key else "",
                    "at_fault_bearing": str(key.at_fault_bearing) if key else "",
                    **{n: vector.values[n] for n in names},
                }
            )
    df = pd.DataFrame(rows, columns=[*META_COLUMNS, *names])
    if df["instant"].notna().all():
        df["instant"] = format_timestamps(df["instant"].to_numpy(dtype=np.int64))
    return df


def variable_columns(df: pd.DataFrame) -> list[str]:
    return [c for c in df.columns if c not in META_COLUMNS]


def read_dataset(path: Path) -> pd.DataFrame:
    """Load a wide dataset CSV and check its stratum layout."""
    df = pd.read_csv(path, dtype={"stratum_id": str, "event_id": str})
    missing = [c for c in ("stratum_id", "label") if c not in df.columns]
    if missing:
        msg = f"{path.name} is missing columns: {', '.join(missing)}"
        raise InvalidInputError(msg)
    if df.empty:
        msg = f"{path.name} contains no events"
        raise InvalidInputError(msg)
    sizes = df.groupby("stratum_id", sort=False).size()
    if sizes.nunique() != 1:
        msg = f"{path.name}: strata have differing sizes {sorted(sizes.unique())}"
        raise InvalidInputError(msg)
    crashes = df.groupby("stratum_id", sort=False)["label"].sum()
    if (crashes != 1).any():
        msg = f"{path.name}: every stratum needs exactly one crash row"
        raise InvalidInputError(msg)
    return df


def strata_from_frame(df: pd.DataFrame, names: Sequence[str] | None = None) -> list[Stratum]:
    """Rebuild strata from a wide dataset frame (crash row first in each)."""
    names = list(names) if names is not None else variable_columns(df)
    unknown = [n for n in names if n not in df.columns]
    if unknown:
        msg = f"variables not in dataset: {', '.join(unknown)}"
        raise InvalidInputError(msg)
    has_keys = "instant" in df.columns and df["instant"].notna().all()
    strata = []
    for stratum_id, group in df.groupby("stratum_id", sort=False):
        group = group.sort_values("label", ascending=False, kind="stable")
        values = group[names].to_numpy(dtype=float)
        vectors = [FeatureVector(values=dict(zip(names, row.tolist(), strict=True))) for row in values]
        keys: list[EventKey] = []
        if has_keys:
            instants = parse_timestamps(group["instant"].astype(str))
            for (_, row), instant in zip(group.iterrows(), instants, strict=True):
                keys.append(
                    EventKey(
                        intersection=str(row["intersection"]),
                        instant=from_epoch(int(instant)),
                        location_class=LocationClass(row["location_class"]),
                        role=EventRole(row["role"]),
                        stratum_id=str(stratum_id),
                        at_fault_bearing=Bearing(row["at_fault_bearing"]),
                    )
                )
        strata.append(
            Stratum(
                stratum_id=str(stratum_id),
                crash=vectors[0],
                controls=tuple(vectors[1:]),
                crash_key=keys[0] if keys else None,
                control_keys=tuple(keys[1:]),
            )
        )
    return strata


def drop_log_frame(drops: Iterable[DropRecord]) -> pd.DataFrame:
    rows = [dataclasses.asdict(d) for d in drops]
    return pd.DataFrame(rows, columns=DROP_LOG_COLUMNS)


# -- CLI commands --


def _class_table(title: str, counts: Mapping[str, int]) -> Table:
    table = Table(title=title)
    table.add_column("Location class", justify="left", style="cyan")
    table.add_column("Crashes", justify="right", style="green")
    table.add_column("Share", justify="right", style="yellow")
    total = sum(counts.values())
    for name, count in counts.items():
        table.add_row(name, human_readable_number(count), human_readable_percent(count, total))
    table.add_row("Total", human_readable_number(total), "100.0%" if total else "-")
    return table


def prepare(
    streams: Path = typer.Option(..., "--streams", help="Streams directory"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    threshold: float | None = typer.Option(None, "--threshold", help="Influence distance (ft)"),
) -> None:
    """Classify crash locations and keep the crashes eligible for matching."""
    settings = get_matching_settings()
    threshold = threshold if threshold is not None else settings.location_threshold_ft
    try:
        with RunRecorder("prepare") as recorder:
            recorder.add_input(streams)
            stream_set = read_streams(streams)
            records = crash_records(stream_set.crashes)
            eligible, drops = prepare_crashes(records, stream_set.intersections, threshold)
            recorder.write_bytes(out / "crashes_eligible.csv", crash_csv_bytes(crashes_frame(eligible)))
            recorder.write_csv(drop_log_frame(drops), out / "drop_log.csv")
    except CLI_ERRORS as exc:
        raise fail(exc) from exc

    counts = {
        str(c): sum(r.location_class == c for r in eligible)
        for c in (LocationClass.within, LocationClass.entrance)
    }
    console.print(_class_table("Eligible crashes", counts))
    console.print(
        f"[cyan]Dropped:[/cyan] {human_readable_number(len(drops))} of "
        f"{human_readable_number(len(records))} crash records"
    )


def match(
    ctx: typer.Context,
    streams: Path = typer.Option(..., "--streams", help="Streams directory"),
    crashes: Path = typer.Option(..., "--crashes", help="Eligible crashes CSV (from prepare)"),
    seed: int = typer.Option(..., "--seed", help="Random seed for control sampling"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    m: int | None = typer.Option(None, "--m", help="Controls per crash"),
    exclusion_window: float | None = typer.Option(None, "--exclusion-window", help="Hours"),
    candidate_weeks: int | None = typer.Option(None, "--candidate-weeks"),
) -> None:
    """Build the matched within and entrance datasets."""
    num_threads = ctx.obj.get("threads", 1) if ctx.obj else 1
    overrides = {
        "rng_seed": seed,
        "m": m,
        "exclusion_window": exclusion_window,
        "candidate_weeks": candidate_weeks,
    }
    try:
        defaults = get_matching_settings().model_dump()
        settings = MatchingSettings(
            **{**defaults, **{k: v for k, v in overrides.items() if v is not None}}
        )
        with RunRecorder("match", seeds={"rng_seed": seed}) as recorder:
            recorder.add_input(streams)
            recorder.add_input(crashes)
            stream_set = read_streams(streams, require_crashes=False)
            log = stream_set.crashes if not stream_set.crashes.empty else read_crashes(crashes)
            eligible = crash_records(read_crashes(crashes))
            index = StreamIndex(stream_set, get_oafr_settings())
            dataset = build_dataset(
                eligible, index, settings, crash_log=log, num_threads=num_threads
            )
            problems = audit_dataset(dataset.strata, log, settings)
            if problems:
                raise InvalidInputError("dataset audit failed: " + problems[0])
            for location_class in (LocationClass.within, LocationClass.entrance):
                frame = strata_frame(dataset.by_class(location_class))
                recorder.write_csv(frame, out / f"{location_class}.csv")
            recorder.write_csv(drop_log_frame(dataset.drops), out / "drop_log.csv")
    except CLI_ERRORS as exc:
        raise fail(exc) from exc

    counts = {str(c): len(dataset.by_class(c)) for c in (LocationClass.within, LocationClass.entrance)}
    console.print(_class_table(f"Matched strata (1:{settings.m})", counts))
    console.print(f"[cyan]Dropped crashes:[/cyan] {human_readable_number(len(dataset.drops))}")
