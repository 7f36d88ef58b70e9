"""Approach nomenclature, variable vocabulary and stratum validation."""

from __future__ import annotations

import dataclasses
import re
from datetime import datetime, timedelta
from typing import TYPE_CHECKING

from .exceptions import InvalidInputError
from .schemas import ApproachMap, Bearing, EventKey, IntersectionConfig, Role

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from .schemas import Stratum

EPOCH = datetime(1970, 1, 1)
SLICE_SECONDS = 300
N_SLICES = 4

SLICE_WINDOWS: dict[int, str] = {1: "0_5", 2: "5_10", 3: "10_15", 4: "15_20"}

# Per-approach measures, in table order.
APPROACH_MEASURES: tuple[str, ...] = (
    "Vol_LT",
    "Vol_Th",
    "OAFR",
    "LT_GreenRatio",
    "LT_Avg_Green",
    "LT_Std_Green",
    "LT_Avg_Queue",
    "LT_Avg_Wait",
    "TH_GreenRatio",
    "TH_Avg_Green",
    "TH_Std_Green",
    "TH_Avg_Queue",
    "TH_Avg_Wait",
)
SPEED_MEASURES: tuple[str, ...] = ("Avg_speed", "Std_speed")
WEATHER_MEASURES: tuple[str, ...] = ("WeatherType", "Visibility", "HourlyPrecip")

_NAME_RE = re.compile(r"^(?:(?P<role>[ABCD])_)?(?P<measure>.+?)(?:_(?P<window>0_5|5_10|10_15|15_20))?$")
_WINDOW_SLICE = {w: s for s, w in SLICE_WINDOWS.items()}


# -- Time helpers --


def to_epoch(ts: datetime) -> int:
    """Seconds since 1970-01-01 for a naive local timestamp."""
    return int((ts - EPOCH).total_seconds())


def from_epoch(seconds: int) -> datetime:
    return EPOCH + timedelta(seconds=int(seconds))


def weekday_of(seconds: int) -> int:
    """Monday=0 weekday of an epoch-seconds instant."""
    return (seconds // 86400 + 3) % 7


def clock_of(seconds: int) -> int:
    """Seconds since local midnight."""
    return seconds % 86400


# -- Intersection geometry --


def validate_intersection(config: IntersectionConfig) -> None:
    """Check the four-leg invariants of an intersection layout."""
    bearings = config.bearings
    if len(bearings) != 4 or set(bearings) != set(Bearing):
        msg = f"intersection {config.id} must have exactly the 4 bearings NB/EB/SB/WB"
        raise InvalidInputError(msg)
    if not config.major_bearings:
        msg = f"intersection {config.id} has no major approach"
        raise InvalidInputError(msg)
    for entry in config.approaches:
        if entry.through_lanes < 1 or entry.left_turn_lanes < 0:
            msg = f"invalid lane counts on {config.id} {entry.bearing}"
            raise InvalidInputError(msg)
        if not entry.upstream_segment_length > 0:
            msg = f"upstream segment length must be positive on {config.id} {entry.bearing}"
            raise InvalidInputError(msg)


def assign_approach_roles(at_fault_bearing: Bearing, config: IntersectionConfig) -> ApproachMap:
    """Rename the four approaches relative to the at-fault vehicle.

    A is the at-fault approach and C opposes it. With right-hand traffic the
    stream entering from the at-fault driver's left (bearing A + 90 degrees) is
    the first one crossed, so it is B (near side); the other crossing
    approach is D (far side).
    """
    if at_fault_bearing not in config.bearings:
        msg = f"bearing {at_fault_bearing} is not an approach of intersection {config.id}"
        raise InvalidInputError(msg)
    base = Bearing(at_fault_bearing).degrees
    roles = {
        Bearing.from_degrees(base): Role.A,
        Bearing.from_degrees(base + 90): Role.B,
        Bearing.from_degrees(base + 180): Role.C,
        Bearing.from_degrees(base + 270): Role.D,
    }
    return ApproachMap(role_of_bearing=roles)


# -- Variable naming --


def slice_window(slice_index: int) -> str:
    try:
        return SLICE_WINDOWS[slice_index]
    except KeyError:
        msg = f"slice must be one of 1..4, got {slice_index}"
        raise InvalidInputError(msg) from None


def variable_name(role: Role | str | None, measure: str, slice_index: int | None) -> str:
    """Build a model variable name such as ``D_OAFR_5_10`` or ``Avg_speed_0_5``.

    Approach measures need a role and a slice, speed measures a slice only and
    weather measures neither (weather is identical across slices).
    """
    if measure in APPROACH_MEASURES:
        if role is None or slice_index is None:
            msg = f"measure {measure} needs an approach role and a slice"
            raise InvalidInputError(msg)
        try:
            role = Role(role)
        except ValueError:
            msg = f"unknown approach role {role!r}"
            raise InvalidInputError(msg) from None
        return f"{role}_{measure}_{slice_window(slice_index)}"
    if measure in SPEED_MEASURES:
        if slice_index is None:
            msg = f"measure {measure} needs a slice"
            raise InvalidInputError(msg)
        return f"{measure}_{slice_window(slice_index)}"
    if measure in WEATHER_MEASURES:
        return measure
    msg = f"unknown measure {measure!r}"
    raise InvalidInputError(msg)


@dataclasses.dataclass(frozen=True, slots=True)
class ParsedName:
    role: Role | None
    measure: str
    slice_index: int | None

    @property
    def base(self) -> str:
        """Name without the slice suffix, e.g. ``B_Vol_LT``."""
        return f"{self.role}_{self.measure}" if self.role else self.measure


def parse_variable_name(name: str) -> ParsedName:
    """Inverse of ``variable_name``; also accepts slice-less approach/speed names."""
    match = _NAME_RE.match(name)
    if match is None:
        msg = f"unparseable variable name {name!r}"
        raise InvalidInputError(msg)
    role = match.group("role")
    measure = match.group("measure")
    window = match.group("window")
    if role is None and measure not in SPEED_MEASURES + WEATHER_MEASURES:
        msg = f"unknown variable {name!r}"
        raise InvalidInputError(msg)
    if role is not None and measure not in APPROACH_MEASURES:
        msg = f"unknown measure in {name!r}"
        raise InvalidInputError(msg)
    if measure in WEATHER_MEASURES and window is not None:
        msg = f"weather variable {name!r} carries no slice"
        raise InvalidInputError(msg)
    return ParsedName(
        role=Role(role) if role else None,
        measure=measure,
        slice_index=_WINDOW_SLICE[window] if window else None,
    )


def event_variables(location_class: str, roles: Iterable[Role] | None = None) -> list[str]:
    """Full, ordered variable set for an event of the given location class.

    Within-intersection events carry all four approaches; entrance events only A.
    """
    if roles is None:
        roles = (Role.A, Role.B, Role.C, Role.D) if location_class == "within" else (Role.A,)
    names: list[str] = []
    for slice_index in SLICE_WINDOWS:
        names.extend(variable_name(r, m, slice_index) for r in roles for m in APPROACH_MEASURES)
        names.extend(variable_name(None, m, slice_index) for m in SPEED_MEASURES)
    names.extend(WEATHER_MEASURES)
    return names


def slice_variables(names: Iterable[str], slice_index: int) -> list[str]:
    """Names belonging to one slice, plus the untagged weather variables."""
    selected = []
    for name in names:
        parsed = parse_variable_name(name)
        if parsed.slice_index in (slice_index, None):
            selected.append(name)
    return selected


# -- Stratum validation --


def matching_factors(key: EventKey) -> tuple[str, str, int, int]:
    seconds = to_epoch(key.instant)
    return (key.intersection, str(key.location_class), weekday_of(seconds), clock_of(seconds))


def validate_strata(strata: Sequence[Stratum]) -> None:
    """Check constant m, identical variable sets and shared matching factors."""
    if not strata:
        return
    m = strata[0].m
    names = strata[0].crash.names
    for stratum in strata:
        if stratum.m != m:
            msg = f"stratum {stratum.stratum_id} has {stratum.m} controls, expected {m}"
            raise InvalidInputError(msg)
        for vector in stratum.vectors:
            if vector.names != names:
                msg = f"stratum {stratum.stratum_id} has a different variable set"
                raise InvalidInputError(msg)
        if stratum.crash_key is not None:
            factors = matching_factors(stratum.crash_key)
            for key in stratum.control_keys:
                if matching_factors(key) != factors:
                    msg = f"stratum {stratum.stratum_id} control {key.instant} breaks matching"
                    raise InvalidInputError(msg)
