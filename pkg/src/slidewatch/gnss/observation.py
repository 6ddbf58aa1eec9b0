"""Carrier-phase synthesis and between-station / between-satellite differencing.

Phase model (cycles) for station i and satellite j::

    phase = (f/c)*rho + f*(dt_i - dt^j) - N + f*(tropo + iono) + noise

with the tropospheric and ionospheric delays given in seconds of signal
delay.  Double differences subtract the reference satellite j from
satellite k, for single differences formed monitoring minus reference.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import ddarith as dd
from .constants import SPEED_OF_LIGHT
from .types import (
    CarrierPhaseObservation,
    GeometryError,
    SatelliteEpochState,
    StationState,
)


class DifferencingError(ValueError):
    """Observations that cannot be differenced against each other."""


def phase_cycles(
    station_xyz,
    station_clock: float,
    sat_xyz,
    sat_clock,
    carrier_freq,
    ambiguity,
    tropo_delay=0.0,
    iono_delay=0.0,
    noise=0.0,
) -> np.ndarray:
    """Vectorised phase model; one entry per satellite row of ``sat_xyz``."""
    sat_xyz = np.atleast_2d(np.asarray(sat_xyz, dtype=float))
    n = sat_xyz.shape[0]

    def col(v):
        return np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()

    freq = col(carrier_freq)
    if np.any(freq <= 0):
        raise ValueError("carrier_freq must be positive")
    rho = dd.dd_range(sat_xyz, np.asarray(station_xyz, dtype=float))
    if np.any(rho[0] == 0.0):
        raise GeometryError("station and satellite positions coincide")

    geometric = dd.dd_mul(dd.dd_div_float(freq, SPEED_OF_LIGHT), rho)
    clocks = dd.dd_mul(dd.dd_from(freq), dd.two_sum(col(station_clock), -col(sat_clock)))
    delays = dd.dd_mul(dd.dd_from(freq), dd.two_sum(col(tropo_delay), col(iono_delay)))
    total = dd.dd_add(dd.dd_add(geometric, clocks), delays)
    total = dd.dd_add(total, dd.dd_neg(dd.dd_from(col(ambiguity))))
    return dd.dd_to_float(total) + col(noise)


def synthesize_observation(
    station: StationState,
    sat: SatelliteEpochState,
    epoch: int,
    ambiguity: int,
    delays: tuple[float, float] = (0.0, 0.0),
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    carrier_freq: float | None = None,
) -> CarrierPhaseObservation:
    """One carrier-phase observation of ``sat`` from ``station``.

    ``delays`` is (tropospheric, ionospheric) in seconds.  Noise is drawn
    from ``rng`` only when ``noise_sigma > 0``.
    """
    freq = sat.carrier_freq if carrier_freq is None else carrier_freq
    tropo, iono = delays
    noise = 0.0
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("rng required for noisy synthesis")
        noise = float(rng.normal(0.0, noise_sigma))
    phase = phase_cycles(
        station.position.as_array(),
        station.clock_error,
        sat.position.as_array(),
        sat.clock_error,
        freq,
        ambiguity,
        tropo,
        iono,
        noise,
    )[0]
    return CarrierPhaseObservation(
        station_id=station.station_id,
        sat_id=sat.sat_id,
        epoch=epoch,
        phase=float(phase),
        carrier_freq=freq,
        ambiguity=int(ambiguity),
        tropo_delay=tropo,
        iono_delay=iono,
        noise_sigma=noise_sigma,
    )


def single_difference(
    obs_station2: CarrierPhaseObservation, obs_station1: CarrierPhaseObservation
) -> float:
    """Between-station difference (station 2 minus station 1) in cycles."""
    if obs_station2.sat_id != obs_station1.sat_id:
        raise DifferencingError(f"satellites differ: {obs_station2.sat_id} vs {obs_station1.sat_id}")
    if obs_station2.epoch != obs_station1.epoch:
        raise DifferencingError(f"epochs differ: {obs_station2.epoch} vs {obs_station1.epoch}")
    if obs_station2.carrier_freq != obs_station1.carrier_freq:
        raise DifferencingError("carrier frequencies differ")
    return obs_station2.phase - obs_station1.phase


def double_difference(
    sd_sat_k: float, sd_sat_j: float, *, sat_k: str | None = None, sat_j: str | None = None
) -> float:
    """Between-satellite difference of single differences, reference ``j`` subtracted."""
    if sat_k is not None and sat_k == sat_j:
        raise DifferencingError(f"satellite {sat_k} cannot be its own reference")
    return sd_sat_k - sd_sat_j


def reference_satellite(sat_ids: Sequence[str], elevations: Mapping[str, float]) -> str:
    """Highest elevation wins; ties go to the lowest sat_id."""
    if not sat_ids:
        raise DifferencingError("no satellites to choose a reference from")
    return min(sat_ids, key=lambda s: (-elevations[s], s))


@dataclass(frozen=True)
class DoubleDifference:
    epoch: int
    sat_k: str
    sat_j: str
    carrier_freq: float
    value: float  # cycles
    var_k: float = 0.0  # variance of the single difference of k, cycles^2
    var_j: float = 0.0


def form_double_differences(
    reference_obs: Mapping[str, CarrierPhaseObservation],
    monitor_obs: Mapping[str, CarrierPhaseObservation],
    elevations: Mapping[str, float],
) -> list[DoubleDifference]:
    """Double differences for every satellite seen by both stations.

    Satellites are grouped by carrier frequency so that the receiver clock
    term cancels exactly; each group gets its own reference satellite.
    """
    common = sorted(set(reference_obs) & set(monitor_obs))
    groups: dict[float, list[str]] = defaultdict(list)
    for sat in common:
        groups[monitor_obs[sat].carrier_freq].append(sat)

    out: list[DoubleDifference] = []
    for freq in sorted(groups):
        sats = groups[freq]
        if len(sats) < 2:
            continue
        ref = reference_satellite(sats, elevations)
        sd = {s: single_difference(monitor_obs[s], reference_obs[s]) for s in sats}
        var = {
            s: monitor_obs[s].noise_sigma ** 2 + reference_obs[s].noise_sigma ** 2 for s in sats
        }
        for k in sats:
            if k == ref:
                continue
            out.append(
                DoubleDifference(
                    epoch=monitor_obs[k].epoch,
                    sat_k=k,
                    sat_j=ref,
                    carrier_freq=freq,
                    value=double_difference(sd[k], sd[ref], sat_k=k, sat_j=ref),
                    var_k=var[k],
                    var_j=var[ref],
                )
            )
    return out
