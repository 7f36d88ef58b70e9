"""Core data structures shared by every pipeline stage.

All values are immutable. Timestamps are naive local ``datetime`` objects at
one-second resolution.
"""

from __future__ import annotations

import dataclasses
import enum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Mapping
    from datetime import datetime


class Bearing(enum.StrEnum):
    """Travel direction of an approach's entering traffic."""

    NB = "NB"
    EB = "EB"
    SB = "SB"
    WB = "WB"

    @property
    def degrees(self) -> int:
        return _BEARING_DEGREES[self]

    @classmethod
    def from_degrees(cls, degrees: int) -> Bearing:
        return _DEGREES_BEARING[degrees % 360]


_BEARING_DEGREES = {Bearing.NB: 0, Bearing.EB: 90, Bearing.SB: 180, Bearing.WB: 270}
_DEGREES_BEARING = {v: k for k, v in _BEARING_DEGREES.items()}


class Role(enum.StrEnum):
    """Approach role relative to the at-fault vehicle."""

    A = "A"
    B = "B"
    C = "C"
    D = "D"


class Movement(enum.StrEnum):
    through = "through"
    left = "left"


class LocationClass(enum.StrEnum):
    """Crash location relative to the intersection box."""

    within = "within"
    entrance = "entrance"
    exit = "exit"


class Position(enum.StrEnum):
    """Raw crash position along the at-fault approach."""

    box = "box"
    upstream = "upstream"
    downstream = "downstream"


class EventRole(enum.StrEnum):
    crash = "crash"
    control = "control"


@dataclasses.dataclass(frozen=True, slots=True)
class ApproachConfig:
    """Static lane layout of one intersection approach."""

    bearing: Bearing
    is_major: bool
    through_lanes: int
    left_turn_lanes: int
    upstream_segment_length: float


@dataclasses.dataclass(frozen=True, slots=True)
class IntersectionConfig:
    """Geometry and lane layout of a signalized four-leg intersection."""

    id: str
    approaches: tuple[ApproachConfig, ...]

    def approach(self, bearing: Bearing) -> ApproachConfig:
        for entry in self.approaches:
            if entry.bearing == bearing:
                return entry
        msg = f"bearing {bearing} not configured at intersection {self.id}"
        raise KeyError(msg)

    @property
    def bearings(self) -> tuple[Bearing, ...]:
        return tuple(a.bearing for a in self.approaches)

    @property
    def major_bearings(self) -> tuple[Bearing, ...]:
        return tuple(a.bearing for a in self.approaches if a.is_major)


@dataclasses.dataclass(frozen=True, slots=True)
class ApproachMap:
    """Bijection from compass bearings to approach roles A/B/C/D."""

    role_of_bearing: Mapping[Bearing, Role]

    def bearing_of(self, role: Role) -> Bearing:
        for bearing, r in self.role_of_bearing.items():
            if r == role:
                return bearing
        msg = f"role {role} not mapped"
        raise KeyError(msg)

    def inverse(self) -> dict[Role, Bearing]:
        return {role: bearing for bearing, role in self.role_of_bearing.items()}


@dataclasses.dataclass(frozen=True, slots=True)
class VolumeRecord:
    """Lane-specific vehicle count for one 15-minute window."""

    intersection: str
    bearing: Bearing
    lane_index: int
    movement: Movement
    window_start: datetime
    count: int


@dataclasses.dataclass(frozen=True, slots=True)
class PhaseEvent:
    """One green interval of a movement, with queue state at green onset."""

    intersection: str
    bearing: Bearing
    movement: Movement
    green_start: datetime
    green_end: datetime
    queue_at_green: float
    max_wait_at_green: float


@dataclasses.dataclass(frozen=True, slots=True)
class SpeedObservation:
    """Space-mean speed of one vehicle on the segment upstream of an approach."""

    intersection: str
    bearing: Bearing
    timestamp: datetime
    space_mean_speed: float


@dataclasses.dataclass(frozen=True, slots=True)
class WeatherRecord:
    timestamp: datetime
    weather_type: int
    visibility: float
    hourly_precip: float


@dataclasses.dataclass(frozen=True, slots=True)
class CrashRecord:
    """A reported crash.

    ``location_class`` is None until the record has been classified from
    ``position`` and ``distance_ft``.
    """

    id: str
    intersection: str
    occurred_at: datetime
    at_fault_bearing: Bearing
    location_class: LocationClass | None
    single_vehicle: bool
    impaired: bool
    position: Position | None = None
    distance_ft: float | None = None


@dataclasses.dataclass(frozen=True, slots=True)
class EventKey:
    """Identifies one crash or control event of a stratum."""

    intersection: str
    instant: datetime
    location_class: LocationClass
    role: EventRole
    stratum_id: str
    at_fault_bearing: Bearing


@dataclasses.dataclass(frozen=True, slots=True)
class FeatureVector:
    """Named covariates of one event, keyed by ``domain.variable_name``."""

    values: Mapping[str, float]

    @property
    def names(self) -> frozenset[str]:
        return frozenset(self.values)


@dataclasses.dataclass(frozen=True, slots=True)
class Stratum:
    """One crash (index 0) plus its m matched controls."""

    stratum_id: str
    crash: FeatureVector
    controls: tuple[FeatureVector, ...]
    crash_key: EventKey | None = None
    control_keys: tuple[EventKey, ...] = ()

    @property
    def m(self) -> int:
        return len(self.controls)

    @property
    def vectors(self) -> tuple[FeatureVector, ...]:
        return (self.crash, *self.controls)
