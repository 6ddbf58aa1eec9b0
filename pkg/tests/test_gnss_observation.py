import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slidewatch.gnss import (
    SPEED_OF_LIGHT,
    CarrierPhaseObservation,
    Constellation,
    DifferencingError,
    EcefPosition,
    GeometryError,
    SatelliteEpochState,
    StationRole,
    StationState,
    double_difference,
    form_double_differences,
    phase_cycles,
    reference_satellite,
    single_difference,
    synthesize_observation,
)
from slidewatch.gnss.geodesy import enu_rotation, geodetic_to_ecef

mpmath.mp.dps = 50

STATION = geodetic_to_ecef(30.5, 114.3, 40.0)


def sat_above(station, east, north, up):
    return station + enu_rotation(station).T @ np.array([east, north, up])


def make_station(xyz, clock=0.0, sid="REF", role=StationRole.REFERENCE):
    return StationState(sid, role, EcefPosition.from_array(xyz), clock)


def make_sat(xyz, clock=0.0, sat_id="G01", system=Constellation.GPS):
    return SatelliteEpochState(sat_id, system, EcefPosition.from_array(xyz), clock)


def oracle_phase(station, station_clock, sat, sat_clock, freq, amb, tropo, iono):
    """Straight-line evaluation of the phase equation at 50 digits."""
    rho = mpmath.sqrt(sum((mpmath.mpf(float(a)) - mpmath.mpf(float(b))) ** 2 for a, b in zip(sat, station)))
    f = mpmath.mpf(freq)
    return (
        f / mpmath.mpf(SPEED_OF_LIGHT) * rho
        + f * (mpmath.mpf(station_clock) - mpmath.mpf(sat_clock))
        - amb
        + f * (mpmath.mpf(tropo) + mpmath.mpf(iono))
    )


def test_speed_of_light_constant():
    assert SPEED_OF_LIGHT == 299_792_458.0


def test_phase_is_ten_cycles_at_ten_wavelengths():
    f = Constellation.GPS.carrier_freq
    rho = 10 * SPEED_OF_LIGHT / f
    # the vectorised model has no radius checks, so an exact geometry can be used
    origin, sat = np.zeros(3), np.array([rho, 0.0, 0.0])
    assert phase_cycles(origin, 0.0, sat, 0.0, f, 0) == pytest.approx([10.0], abs=1e-12)
    assert phase_cycles(origin, 0.0, sat, 0.0, f, 3) == pytest.approx([7.0], abs=1e-12)


def test_coincident_positions_raise():
    with pytest.raises(GeometryError):
        phase_cycles(STATION, 0.0, STATION, 0.0, 1.5e9, 0)


@given(
    st.floats(-2e7, 2e7),
    st.floats(-2e7, 2e7),
    st.floats(1e5, 2.2e7),
    st.floats(-1e-3, 1e-3),
    st.floats(-1e-3, 1e-3),
    st.integers(-(10**9), 10**9),
    st.floats(0, 1e-7),
    st.floats(0, 1e-7),
    st.sampled_from(list(Constellation)),
)
def test_phase_matches_high_precision_oracle(e, n, u, clk_i, clk_j, amb, tropo, iono, system):
    sat = sat_above(STATION, e, n, u)
    f = system.carrier_freq
    got = phase_cycles(STATION, clk_i, sat, clk_j, f, amb, tropo, iono)[0]
    want = oracle_phase(STATION, clk_i, sat, clk_j, f, amb, tropo, iono)
    assert abs(got - float(want)) <= 1e-12 * max(1.0, abs(float(want)))


def test_synthesize_observation_fields_and_noise(rng):
    sat = make_sat(sat_above(STATION, 1e6, 2e6, 2e7), clock=1e-5)
    station = make_station(STATION, clock=2e-5)
    obs = synthesize_observation(station, sat, epoch=1000, ambiguity=12, delays=(1e-8, 2e-8))
    want = oracle_phase(STATION, 2e-5, sat.position.as_array(), 1e-5, sat.carrier_freq, 12, 1e-8, 2e-8)
    assert obs.phase == pytest.approx(float(want), rel=1e-15)
    assert (obs.sat_id, obs.epoch, obs.ambiguity, obs.carrier_freq) == ("G01", 1000, 12, sat.carrier_freq)

    noisy = [
        synthesize_observation(station, sat, 1000, 12, noise_sigma=0.01, rng=rng).phase - obs.phase for _ in range(2000)
    ]
    assert np.std(noisy) == pytest.approx(0.01, rel=0.1)
    with pytest.raises(ValueError):
        synthesize_observation(station, sat, 1000, 12, noise_sigma=0.01)


def test_observation_validation():
    with pytest.raises(ValueError):
        CarrierPhaseObservation("A", "G01", 0, 1.0, 0.0, 0)
    with pytest.raises(ValueError):
        CarrierPhaseObservation("A", "G01", 0, math.nan, 1.5e9, 0)


def _obs(phase, sat="G01", epoch=0, freq=1.5e9, station="A"):
    return CarrierPhaseObservation(station, sat, epoch, phase, freq, 0)


def test_single_difference_examples():
    assert single_difference(_obs(1234567.250), _obs(1234560.125)) == 7.125
    assert single_difference(_obs(5.5), _obs(5.5)) == 0.0
    with pytest.raises(DifferencingError):
        single_difference(_obs(1.0, sat="G02"), _obs(1.0))
    with pytest.raises(DifferencingError):
        single_difference(_obs(1.0, epoch=200), _obs(1.0))
    with pytest.raises(DifferencingError):
        single_difference(_obs(1.0, freq=1.6e9), _obs(1.0))


def test_double_difference_examples():
    assert double_difference(7.000, 7.125) == -0.125
    assert double_difference(3.5, 3.5) == 0.0
    with pytest.raises(DifferencingError):
        double_difference(1.0, 2.0, sat_k="G05", sat_j="G05")


def test_single_difference_cancels_satellite_clock():
    sat_xyz = sat_above(STATION, 3e6, -1e6, 2e7)
    mon_xyz = sat_above(STATION, 0.8, 0.0, 0.0)
    ref, mon = make_station(STATION, 1e-4), make_station(mon_xyz, -3e-5, "MON", StationRole.MONITORING)
    sds = []
    for clock in (5e-4, 0.0):
        sat = make_sat(sat_xyz, clock)
        # ambiguities chosen to absorb the range so phases stay small
        n_ref = round(float(phase_cycles(STATION, 0, sat_xyz, 0, sat.carrier_freq, 0)[0]))
        n_mon = round(float(phase_cycles(mon_xyz, 0, sat_xyz, 0, sat.carrier_freq, 0)[0]))
        sds.append(
            single_difference(synthesize_observation(mon, sat, 0, n_mon), synthesize_observation(ref, sat, 0, n_ref))
        )
    assert abs(sds[0] - sds[1]) <= 1e-12 * 1e6  # phases here are ~1e6 cycles (clock terms)
    # and the result equals the expansion of the single-difference equation
    f = Constellation.GPS.carrier_freq
    rho = lambda x: mpmath.sqrt(sum((mpmath.mpf(float(a)) - mpmath.mpf(float(b))) ** 2 for a, b in zip(sat_xyz, x)))  # noqa: E731
    n_ref = round(float(phase_cycles(STATION, 0, sat_xyz, 0, f, 0)[0]))
    n_mon = round(float(phase_cycles(mon_xyz, 0, sat_xyz, 0, f, 0)[0]))
    want = f / SPEED_OF_LIGHT * (rho(mon_xyz) - rho(STATION)) + f * (mpmath.mpf(-3e-5) - mpmath.mpf(1e-4)) - (n_mon - n_ref)
    assert sds[1] == pytest.approx(float(want), abs=1e-9)


def test_reference_satellite_rule():
    elev = {"G03": 0.9, "G01": 0.9, "G02": 0.5}
    assert reference_satellite(["G02", "G03", "G01"], elev) == "G01"
    assert reference_satellite(["G02"], elev) == "G02"
    with pytest.raises(DifferencingError):
        reference_satellite([], elev)


def test_form_double_differences_groups_by_frequency():
    obs_ref, obs_mon = {}, {}
    specs = {"G01": 1575.42e6, "G02": 1575.42e6, "G03": 1575.42e6, "R01": 1600.995e6, "R02": 1600.995e6, "C01": 1561.098e6}
    for i, (sat, f) in enumerate(specs.items()):
        obs_ref[sat] = CarrierPhaseObservation("REF", sat, 0, 10.0 * i, f, 0, noise_sigma=0.01)
        obs_mon[sat] = CarrierPhaseObservation("MON", sat, 0, 11.5 * i, f, 0, noise_sigma=0.01)
    elev = {"G01": 0.3, "G02": 1.0, "G03": 0.5, "R01": 0.2, "R02": 0.4, "C01": 1.2}
    dds = form_double_differences(obs_ref, obs_mon, elev)
    # lone BDS satellite has no partner and is dropped
    assert [(d.sat_k, d.sat_j) for d in dds] == [("G01", "G02"), ("G03", "G02"), ("R01", "R02")]
    for d in dds:
        k, j = list(specs).index(d.sat_k), list(specs).index(d.sat_j)
        assert d.value == pytest.approx(1.5 * k - 1.5 * j)
        assert d.var_k == pytest.approx(2e-4) and d.var_j == pytest.approx(2e-4)
