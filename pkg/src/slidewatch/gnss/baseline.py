"""Least-squares baseline from double-differenced carrier phase with known ambiguities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .geodesy import enu_rotation
from .observation import DoubleDifference
from .types import (
    ConvergenceError,
    EcefPosition,
    EnuDisplacement,
    GeometryError,
    StationState,
)

MAX_ITERATIONS = 10
STEP_TOLERANCE_M = 1e-10


@dataclass(frozen=True)
class BaselineGeometry:
    satellites: Mapping[str, EcefPosition]
    reference: StationState
    monitor: StationState  # position is the a-priori (nominal) monitor position


@dataclass(frozen=True)
class BaselineSolution:
    baseline_enu: EnuDisplacement  # mm, monitor minus reference, reference-station frame
    displacement: EnuDisplacement  # mm, solved minus a-priori monitor, monitor frame
    sigma_enu: tuple[float, float, float]  # mm, formal 1-sigma of the displacement
    monitor_position: EcefPosition
    iterations: int
    residual_rms: float  # cycles


def _dd_covariance(dd_set: Sequence[DoubleDifference]) -> np.ndarray:
    n = len(dd_set)
    q = np.zeros((n, n))
    for a, da in enumerate(dd_set):
        q[a, a] = da.var_k + da.var_j
        for b in range(a + 1, n):
            if dd_set[b].sat_j == da.sat_j:
                q[a, b] = q[b, a] = da.var_j
    return q


def _unit_covariance(dd_set: Sequence[DoubleDifference]) -> np.ndarray:
    n = len(dd_set)
    q = 2.0 * np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            if dd_set[a].sat_j == dd_set[b].sat_j:
                q[a, b] = q[b, a] = 1.0
    return q


def solve_baseline(
    dd_set: Sequence[DoubleDifference],
    geometry: BaselineGeometry,
    known_ambiguities: Mapping[tuple[str, str], int],
) -> BaselineSolution:
    """Gauss-Newton solve for the monitoring station position.

    ``known_ambiguities`` maps (station_id, sat_id) to the integer
    ambiguity used when the phases were generated.  Modelled single-
    difference ranges use the differential form
    (|u - b|^2 - |u|^2) / (rho_1 + rho_2), u = sat - reference,
    which keeps the computed double differences accurate far below the
    float64 resolution of absolute ranges.
    """
    if len(dd_set) < 3:
        raise GeometryError(f"{len(dd_set)} double differences; at least 3 required")

    ref_id = geometry.reference.station_id
    mon_id = geometry.monitor.station_id
    r1 = geometry.reference.position.as_array()
    sats = sorted({d.sat_k for d in dd_set} | {d.sat_j for d in dd_set})
    index = {s: i for i, s in enumerate(sats)}
    u = np.array([geometry.satellites[s].as_array() for s in sats]) - r1
    rho1 = np.linalg.norm(u, axis=1)

    k_idx = np.array([index[d.sat_k] for d in dd_set])
    j_idx = np.array([index[d.sat_j] for d in dd_set])
    wavenumber = np.array([d.carrier_freq for d in dd_set]) / SPEED_OF_LIGHT

    def amb(station: str, sat: str) -> int:
        try:
            return int(known_ambiguities[(station, sat)])
        except KeyError:
            raise GeometryError(f"missing ambiguity for {station}/{sat}") from None

    dd_amb = np.array(
        [
            (amb(mon_id, d.sat_k) - amb(ref_id, d.sat_k)) - (amb(mon_id, d.sat_j) - amb(ref_id, d.sat_j))
            for d in dd_set
        ],
        dtype=float,
    )
    observed = np.array([d.value for d in dd_set]) + dd_amb

    q = _dd_covariance(dd_set)
    noisy = np.all(np.diag(q) > 0)
    weight = np.linalg.inv(q if noisy else _unit_covariance(dd_set))

    b = geometry.monitor.position.as_array() - r1
    for iteration in range(1, MAX_ITERATIONS + 1):
        to_sat = u - b
        rho2 = np.linalg.norm(to_sat, axis=1)
        sd_range = (b @ b - 2.0 * (u @ b)) / (rho1 + rho2)
        computed = wavenumber * (sd_range[k_idx] - sd_range[j_idx])
        los = to_sat / rho2[:, None]
        design = -wavenumber[:, None] * (los[k_idx] - los[j_idx])
        if np.linalg.matrix_rank(design) < 3:
            raise GeometryError("double-difference geometry is rank deficient")
        normal = design.T @ weight @ design
        if np.linalg.cond(normal) > 1e12:
            raise GeometryError("normal matrix is ill-conditioned")
        residual = observed - computed
        step = np.linalg.solve(normal, design.T @ weight @ residual)
        b = b + step
        if np.linalg.norm(step) < STEP_TOLERANCE_M:
            break
    else:
        raise ConvergenceError(f"no convergence after {MAX_ITERATIONS} iterations")

    to_sat = u - b
    rho2 = np.linalg.norm(to_sat, axis=1)
    sd_range = (b @ b - 2.0 * (u @ b)) / (rho1 + rho2)
    residual = observed - wavenumber * (sd_range[k_idx] - sd_range[j_idx])

    gain = np.linalg.solve(normal, design.T @ weight)
    cov_ecef = gain @ q @ gain.T
    monitor = r1 + b
    a_priori = geometry.monitor.position.as_array()
    rot_mon = enu_rotation(a_priori)
    cov_enu = rot_mon @ cov_ecef @ rot_mon.T
    base_enu = enu_rotation(r1) @ b * 1000.0
    disp_enu = rot_mon @ (monitor - a_priori) * 1000.0
    return BaselineSolution(
        baseline_enu=EnuDisplacement(*base_enu),
        displacement=EnuDisplacement(*disp_enu),
        sigma_enu=tuple(float(v) for v in np.sqrt(np.clip(np.diag(cov_enu), 0.0, None)) * 1000.0),
        monitor_position=EcefPosition.from_array(monitor),
        iterations=iteration,
        residual_rms=float(np.sqrt(np.mean(residual**2))),
    )
