"""RTK epoch simulation: two stations, one pseudo-almanac, known ambiguities.

:class:`RtkSimulator` synthesises phases at a reference and a monitoring
station for a whole block of epochs at once and solves every epoch's
baseline with a vectorised weighted least squares.  :meth:`RtkSimulator.step`
runs a single epoch through the object-level path
(:func:`form_double_differences` / :func:`solve_baseline`), which the test
suite uses to cross-check the vectorised solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .baseline import BaselineGeometry, BaselineSolution, solve_baseline
from .constants import DEFAULT_ELEVATION_MASK_DEG, SPEED_OF_LIGHT
from .constellation import GNSS_COMBINED, PseudoAlmanac
from .geodesy import enu_rotation
from .observation import form_double_differences, phase_cycles
from .types import (
    CarrierPhaseObservation,
    Constellation,
    ConvergenceError,
    EcefPosition,
    GeometryError,
    StationRole,
    StationState,
)

ZENITH_TROPO_S = 2.3 / SPEED_OF_LIGHT
ZENITH_IONO_S = 4.0 / SPEED_OF_LIGHT
REFERENCE_ID = "REF"
MONITOR_ID = "MON"
MAX_ITERATIONS = 10
STEP_TOLERANCE_M = 1e-10


@dataclass
class EpochBlock:
    """Phases and geometry for E epochs over all S almanac satellites."""

    epochs: np.ndarray  # (E,) ms
    sat_xyz: np.ndarray  # (E, S, 3)
    elevation: np.ndarray  # (E, S) rad at the reference station
    visible: np.ndarray  # (E, S) bool: above mask and in the selected constellations
    phase_ref: np.ndarray  # (E, S) cycles
    phase_mon: np.ndarray  # (E, S) cycles


@dataclass
class BlockSolution:
    displacement_mm: np.ndarray  # (E, 3) ENU at the nominal monitor position
    sigma_mm: np.ndarray  # (E, 3)
    n_double_differences: np.ndarray  # (E,)
    ok: np.ndarray  # (E,) bool; False where geometry was insufficient


class RtkSimulator:
    def __init__(
        self,
        almanac: PseudoAlmanac,
        reference_xyz,
        monitor_xyz,
        phase_sigma: float = 0.0,
        elevation_mask_deg: float = DEFAULT_ELEVATION_MASK_DEG,
        seed: int = 0,
        constellations: Iterable[Constellation] = GNSS_COMBINED,
    ):
        self.almanac = almanac
        self.reference_xyz = np.asarray(reference_xyz, dtype=float)
        self.monitor_xyz = np.asarray(monitor_xyz, dtype=float)
        self.phase_sigma = float(phase_sigma)
        self.elevation_mask_deg = float(elevation_mask_deg)
        self.constellations = tuple(constellations)
        self._rng = np.random.default_rng(seed)
        self._rot_ref = enu_rotation(self.reference_xyz)
        self._rot_mon = enu_rotation(self.monitor_xyz)
        self._freq = np.array([s.carrier_freq for s in almanac.systems])
        self._selected = np.array([s in self.constellations for s in almanac.systems])

        clock = self._rng.uniform(-1e-4, 1e-4, 2)
        drift = self._rng.normal(0.0, 1e-9, 2)
        self._clock = {REFERENCE_ID: (clock[0], drift[0]), MONITOR_ID: (clock[1], drift[1])}
        # Integer ambiguities absorb the bulk of the range at the almanac origin,
        # keeping phase magnitudes (and their float64 rounding) small.
        pos0 = almanac.positions(0)
        self._ambiguity = {}
        for station_id, xyz in ((REFERENCE_ID, self.reference_xyz), (MONITOR_ID, self.monitor_xyz)):
            cycles = np.linalg.norm(pos0 - xyz, axis=1) * self._freq / SPEED_OF_LIGHT
            offsets = self._rng.integers(-40, 41, len(almanac))
            self._ambiguity[station_id] = np.round(cycles) + offsets

        order = sorted(range(len(almanac)), key=lambda i: almanac.sat_ids[i])
        self._groups = []
        for freq in sorted(set(self._freq[self._selected])):
            members = [i for i in order if self._selected[i] and self._freq[i] == freq]
            self._groups.append(np.array(members))

    @property
    def ambiguities(self) -> dict[tuple[str, str], int]:
        return {
            (station, sat): int(n)
            for station, values in self._ambiguity.items()
            for sat, n in zip(self.almanac.sat_ids, values)
        }

    def clock_error(self, station_id: str, epoch_ms) -> np.ndarray:
        bias, drift = self._clock[station_id]
        return bias + drift * np.asarray(epoch_ms, dtype=float) / 1000.0

    def station_state(self, station_id: str, xyz, epoch_ms: int) -> StationState:
        role = StationRole.REFERENCE if station_id == REFERENCE_ID else StationRole.MONITORING
        return StationState(station_id, role, EcefPosition.from_array(xyz), float(self.clock_error(station_id, epoch_ms)))

    def observe(self, epochs_ms: Sequence[int], monitor_true_xyz) -> EpochBlock:
        """Phases at both stations; ``monitor_true_xyz`` is (3,) or (E, 3)."""
        epochs = np.asarray(epochs_ms, dtype=np.int64).reshape(-1)
        n_ep, n_sat = len(epochs), len(self.almanac)
        mon = np.broadcast_to(np.asarray(monitor_true_xyz, dtype=float), (n_ep, 3))
        sat_xyz = np.stack([self.almanac.positions(int(t)) for t in epochs])
        sat_clk = np.stack([self.almanac.clock_errors(int(t)) for t in epochs])
        enu = (sat_xyz - self.reference_xyz) @ self._rot_ref.T
        elevation = np.arctan2(enu[..., 2], np.hypot(enu[..., 0], enu[..., 1]))
        visible = self._selected[None, :] & (elevation >= math.radians(self.elevation_mask_deg))
        mapping = 1.0 / np.sin(np.clip(elevation, math.radians(1.0), None))
        tropo = ZENITH_TROPO_S * mapping
        iono = ZENITH_IONO_S * mapping
        freq = np.broadcast_to(self._freq, (n_ep, n_sat))

        phases = {}
        for station_id, xyz in ((REFERENCE_ID, np.broadcast_to(self.reference_xyz, (n_ep, 3))), (MONITOR_ID, mon)):
            noise = (
                self._rng.normal(0.0, self.phase_sigma, (n_ep, n_sat)) if self.phase_sigma > 0 else np.zeros((n_ep, n_sat))
            )
            clock = np.repeat(self.clock_error(station_id, epochs), n_sat)
            rcv = np.repeat(xyz, n_sat, axis=0)
            phases[station_id] = phase_cycles(
                rcv,
                clock,
                sat_xyz.reshape(-1, 3),
                sat_clk.reshape(-1),
                freq.reshape(-1),
                np.broadcast_to(self._ambiguity[station_id], (n_ep, n_sat)).reshape(-1),
                tropo.reshape(-1),
                iono.reshape(-1),
                noise.reshape(-1),
            ).reshape(n_ep, n_sat)
        return EpochBlock(epochs, sat_xyz, elevation, visible, phases[REFERENCE_ID], phases[MONITOR_ID])

    def solve_block(self, block: EpochBlock) -> BlockSolution:
        """Vectorised double-difference least squares for every epoch of ``block``.

        All phases share one noise sigma, so each frequency group's
        double-difference covariance is proportional to (I + 11^T) and its
        inverse has the closed form I - 11^T / (n + 1).
        """
        n_ep = len(block.epochs)
        u = block.sat_xyz - self.reference_xyz  # (E, S, 3)
        rho1 = np.linalg.norm(u, axis=2)
        sd_obs = block.phase_mon - block.phase_ref
        sd_amb = self._ambiguity[MONITOR_ID] - self._ambiguity[REFERENCE_ID]
        rows = np.arange(n_ep)

        refs, masks, n_dd = [], [], np.zeros(n_ep, dtype=int)
        for group in self._groups:
            vis = block.visible[:, group]
            elev = np.where(vis, block.elevation[:, group], -np.inf)
            j = np.argmax(elev, axis=1)
            mask = vis.copy()
            mask[rows, j] = False
            mask &= vis.sum(axis=1, keepdims=True) >= 2
            refs.append(j)
            masks.append(mask)
            n_dd += mask.sum(axis=1)

        ok = n_dd >= 3
        b = np.broadcast_to(self.monitor_xyz - self.reference_xyz, (n_ep, 3)).copy()
        normal = np.tile(np.eye(3), (n_ep, 1, 1))
        converged = np.zeros(n_ep, dtype=bool)
        for _ in range(MAX_ITERATIONS):
            to_sat = u - b[:, None, :]
            rho2 = np.linalg.norm(to_sat, axis=2)
            sd_range = (np.einsum("ei,ei->e", b, b)[:, None] - 2.0 * np.einsum("esi,ei->es", u, b)) / (rho1 + rho2)
            los = to_sat / rho2[..., None]
            normal = np.zeros((n_ep, 3, 3))
            rhs = np.zeros((n_ep, 3))
            for group, j, mask in zip(self._groups, refs, masks):
                wn = self._freq[group[0]] / SPEED_OF_LIGHT
                m = mask.astype(float)
                count = m.sum(axis=1)
                los_g, sd_g = los[:, group], sd_range[:, group]
                obs_g = sd_obs[:, group] + sd_amb[group]
                a = -wn * (los_g - los_g[rows, j][:, None, :]) * m[..., None]
                r = (
                    (obs_g - obs_g[rows, j][:, None]) - wn * (sd_g - sd_g[rows, j][:, None])
                ) * m
                s = a.sum(axis=1)
                scale = 1.0 / (count + 1.0)
                normal += np.einsum("eki,ekj->eij", a, a) - scale[:, None, None] * np.einsum("ei,ej->eij", s, s)
                rhs += np.einsum("eki,ek->ei", a, r) - scale[:, None] * s * r.sum(axis=1)[:, None]
            normal[~ok] = np.eye(3)
            rhs[~ok] = 0.0
            step = np.linalg.solve(normal, rhs[..., None])[..., 0]
            b += step
            converged = np.linalg.norm(step, axis=1) < STEP_TOLERANCE_M
            if np.all(converged | ~ok):
                break
        else:
            raise ConvergenceError(f"no convergence after {MAX_ITERATIONS} iterations")

        cov = np.linalg.inv(normal) * (2.0 * self.phase_sigma**2)
        disp = ((self.reference_xyz + b) - self.monitor_xyz) @ self._rot_mon.T * 1000.0
        cov_enu = self._rot_mon @ cov @ self._rot_mon.T
        sigma = np.sqrt(np.clip(np.diagonal(cov_enu, axis1=1, axis2=2), 0.0, None)) * 1000.0
        disp[~ok] = np.nan
        sigma[~ok] = np.nan
        return BlockSolution(disp, sigma, n_dd, ok)

    def epoch_observations(self, block: EpochBlock, index: int):
        """Object-level observations for one epoch of ``block``."""
        epoch = int(block.epochs[index])
        obs: dict[str, dict[str, CarrierPhaseObservation]] = {REFERENCE_ID: {}, MONITOR_ID: {}}
        elevations, positions = {}, {}
        for s in np.flatnonzero(block.visible[index]):
            sat_id = self.almanac.sat_ids[s]
            elevations[sat_id] = float(block.elevation[index, s])
            positions[sat_id] = EcefPosition.from_array(block.sat_xyz[index, s])
            for station_id, phases in ((REFERENCE_ID, block.phase_ref), (MONITOR_ID, block.phase_mon)):
                obs[station_id][sat_id] = CarrierPhaseObservation(
                    station_id,
                    sat_id,
                    epoch,
                    float(phases[index, s]),
                    float(self._freq[s]),
                    int(self._ambiguity[station_id][s]),
                    noise_sigma=self.phase_sigma,
                )
        return obs, elevations, positions

    def step(self, epoch_ms: int, monitor_true_xyz) -> BaselineSolution:
        """Single epoch through the object-level differencing and solver."""
        block = self.observe([epoch_ms], monitor_true_xyz)
        obs, elevations, positions = self.epoch_observations(block, 0)
        dds = form_double_differences(obs[REFERENCE_ID], obs[MONITOR_ID], elevations)
        geometry = BaselineGeometry(
            satellites=positions,
            reference=self.station_state(REFERENCE_ID, self.reference_xyz, epoch_ms),
            monitor=self.station_state(MONITOR_ID, self.monitor_xyz, epoch_ms),
        )
        return solve_baseline(dds, geometry, self.ambiguities)


def system_mask(almanac: PseudoAlmanac, constellations: Iterable[Constellation]) -> np.ndarray:
    wanted = set(constellations)
    return np.array([s in wanted for s in almanac.systems])
