from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .constants import (
    BDS_B1I,
    GALILEO_E1,
    GLONASS_L1OC,
    GPS_L1,
    SATELLITE_RADIUS_RANGE,
    STATION_RADIUS_RANGE,
)


class GeometryError(ValueError):
    """Degenerate or rank-deficient satellite/station geometry."""


class ConvergenceError(RuntimeError):
    """Iterative baseline solution did not settle."""


class Constellation(Enum):
    GPS = "GPS"
    BDS = "BDS"
    GLONASS = "GLONASS"
    GALILEO = "Galileo"

    @property
    def carrier_freq(self) -> float:
        return _CARRIERS[self]

    @property
    def prefix(self) -> str:
        return _PREFIXES[self]


_CARRIERS = {
    Constellation.GPS: GPS_L1,
    Constellation.BDS: BDS_B1I,
    Constellation.GLONASS: GLONASS_L1OC,
    Constellation.GALILEO: GALILEO_E1,
}
_PREFIXES = {
    Constellation.GPS: "G",
    Constellation.BDS: "C",
    Constellation.GLONASS: "R",
    Constellation.GALILEO: "E",
}


class StationRole(Enum):
    REFERENCE = "reference"
    MONITORING = "monitoring"


@dataclass(frozen=True)
class EcefPosition:
    """Earth-centred Earth-fixed position in metres."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite ECEF position {self!r}")

    @classmethod
    def from_array(cls, xyz) -> EcefPosition:
        x, y, z = (float(v) for v in xyz)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def radius(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class EnuDisplacement:
    """Local east/north/up offset in millimetres."""

    east: float
    north: float
    up: float

    def __post_init__(self) -> None:
        for name in ("east", "north", "up"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(math.isfinite(v) for v in (self.east, self.north, self.up)):
            raise ValueError(f"non-finite displacement {self!r}")

    @property
    def horizontal(self) -> float:
        return math.hypot(self.east, self.north)

    def as_array(self) -> np.ndarray:
        return np.array([self.east, self.north, self.up])


def _check_radius(position: EcefPosition, bounds: tuple[float, float], what: str) -> None:
    lo, hi = bounds
    if not lo <= position.radius <= hi:
        raise ValueError(f"{what} radius {position.radius:.1f} m outside [{lo:g}, {hi:g}]")


@dataclass(frozen=True)
class SatelliteEpochState:
    sat_id: str
    constellation: Constellation
    position: EcefPosition
    clock_error: float = 0.0  # seconds

    def __post_init__(self) -> None:
        _check_radius(self.position, SATELLITE_RADIUS_RANGE, f"satellite {self.sat_id}")

    @property
    def carrier_freq(self) -> float:
        return self.constellation.carrier_freq


@dataclass(frozen=True)
class StationState:
    station_id: str
    role: StationRole
    position: EcefPosition
    clock_error: float = 0.0  # seconds

    def __post_init__(self) -> None:
        _check_radius(self.position, STATION_RADIUS_RANGE, f"station {self.station_id}")


@dataclass(frozen=True)
class CarrierPhaseObservation:
    station_id: str
    sat_id: str
    epoch: int  # ms
    phase: float  # cycles
    carrier_freq: float  # Hz
    ambiguity: int  # cycles
    tropo_delay: float = 0.0  # s
    iono_delay: float = 0.0  # s
    noise_sigma: float = 0.0  # cycles

    def __post_init__(self) -> None:
        if not self.carrier_freq > 0:
            raise ValueError("carrier_freq must be positive")
        if not math.isfinite(self.phase):
            raise ValueError("phase must be finite")


@dataclass(frozen=True)
class DopReport:
    n_sats: int
    gdop: float
    pdop: float
    hdop: float
    vdop: float
    tdop: float
