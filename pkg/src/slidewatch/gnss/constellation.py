"""Deterministic pseudo-almanac: circular Walker-like orbits per constellation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .constants import EARTH_GM, EARTH_ROTATION_RATE
from .types import Constellation, EcefPosition, SatelliteEpochState


@dataclass(frozen=True)
class ShellSpec:
    planes: int
    per_plane: int
    radius: float  # m
    inclination_deg: float


SHELLS = {
    Constellation.GPS: ShellSpec(6, 4, 26_559_700.0, 55.0),
    Constellation.GLONASS: ShellSpec(3, 8, 25_508_200.0, 64.8),
    Constellation.GALILEO: ShellSpec(3, 8, 29_599_800.0, 56.0),
    Constellation.BDS: ShellSpec(3, 8, 27_906_100.0, 55.0),
}

GPS_ONLY = (Constellation.GPS,)
GNSS_COMBINED = (Constellation.GPS, Constellation.BDS, Constellation.GLONASS, Constellation.GALILEO)


class PseudoAlmanac:
    """Seeded orbit elements; positions are a pure function of (seed, epoch).

    Epochs are milliseconds since the almanac origin.  Satellite clock
    errors are an offset plus a drift, both drawn from the seed.
    """

    def __init__(self, seed: int = 0, constellations: Iterable[Constellation] = GNSS_COMBINED):
        rng = np.random.default_rng(seed)
        ids, systems, raan, arg0, incl, radius, clk0, drift = [], [], [], [], [], [], [], []
        for system in constellations:
            shell = SHELLS[system]
            raan_offset = rng.uniform(0.0, 2 * math.pi)
            phase_offset = rng.uniform(0.0, 2 * math.pi)
            for p in range(shell.planes):
                for s in range(shell.per_plane):
                    ids.append(f"{system.prefix}{p * shell.per_plane + s + 1:02d}")
                    systems.append(system)
                    raan.append(raan_offset + 2 * math.pi * p / shell.planes)
                    arg0.append(
                        phase_offset
                        + 2 * math.pi * s / shell.per_plane
                        + math.pi * p / (shell.planes * shell.per_plane)
                        + rng.normal(0.0, 0.02)
                    )
                    incl.append(math.radians(shell.inclination_deg))
                    radius.append(shell.radius)
                    clk0.append(rng.uniform(-5e-4, 5e-4))
                    drift.append(rng.normal(0.0, 1e-11))
        self.sat_ids = tuple(ids)
        self.systems = tuple(systems)
        self._raan = np.array(raan)
        self._arg0 = np.array(arg0)
        self._incl = np.array(incl)
        self._radius = np.array(radius)
        self._mean_motion = np.sqrt(EARTH_GM / self._radius**3)
        self._clk0 = np.array(clk0)
        self._drift = np.array(drift)

    def __len__(self) -> int:
        return len(self.sat_ids)

    def positions(self, epoch_ms: int) -> np.ndarray:
        """ECEF positions (n, 3) in metres."""
        t = epoch_ms / 1000.0
        u = self._arg0 + self._mean_motion * t
        node = self._raan - EARTH_ROTATION_RATE * t
        cu, su = np.cos(u), np.sin(u)
        cn, sn = np.cos(node), np.sin(node)
        ci, si = np.cos(self._incl), np.sin(self._incl)
        return self._radius[:, None] * np.column_stack(
            [cu * cn - su * ci * sn, cu * sn + su * ci * cn, su * si]
        )

    def clock_errors(self, epoch_ms: int) -> np.ndarray:
        return self._clk0 + self._drift * (epoch_ms / 1000.0)

    def states(self, epoch_ms: int) -> list[SatelliteEpochState]:
        pos = self.positions(epoch_ms)
        clk = self.clock_errors(epoch_ms)
        return [
            SatelliteEpochState(sid, system, EcefPosition.from_array(p), float(c))
            for sid, system, p, c in zip(self.sat_ids, self.systems, pos, clk)
        ]
