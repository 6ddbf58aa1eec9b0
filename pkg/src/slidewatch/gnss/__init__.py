"""Synthetic GNSS-RTK observations, differencing, baseline solution and DOP."""

from .baseline import BaselineGeometry, BaselineSolution, solve_baseline
from .constants import SPEED_OF_LIGHT
from .constellation import GNSS_COMBINED, GPS_ONLY, PseudoAlmanac
from .dop import compute_dop, dop_batch, dop_from_positions
from .observation import (
    DifferencingError,
    DoubleDifference,
    double_difference,
    form_double_differences,
    phase_cycles,
    reference_satellite,
    single_difference,
    synthesize_observation,
)
from .types import (
    CarrierPhaseObservation,
    Constellation,
    ConvergenceError,
    DopReport,
    EcefPosition,
    EnuDisplacement,
    GeometryError,
    SatelliteEpochState,
    StationRole,
    StationState,
)

__all__ = [
    "BaselineGeometry",
    "BaselineSolution",
    "CarrierPhaseObservation",
    "Constellation",
    "ConvergenceError",
    "DifferencingError",
    "DopReport",
    "DoubleDifference",
    "EcefPosition",
    "EnuDisplacement",
    "GNSS_COMBINED",
    "GPS_ONLY",
    "GeometryError",
    "PseudoAlmanac",
    "SPEED_OF_LIGHT",
    "SatelliteEpochState",
    "StationRole",
    "StationState",
    "compute_dop",
    "dop_batch",
    "dop_from_positions",
    "double_difference",
    "form_double_differences",
    "phase_cycles",
    "reference_satellite",
    "single_difference",
    "solve_baseline",
    "synthesize_observation",
]
