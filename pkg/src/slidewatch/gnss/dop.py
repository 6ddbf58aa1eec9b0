"""Dilution of precision from receiver-satellite line-of-sight geometry."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .constants import DEFAULT_ELEVATION_MASK_DEG
from .geodesy import elevation_azimuth, enu_rotation
from .types import DopReport, EcefPosition, GeometryError, SatelliteEpochState


def dop_from_positions(sat_xyz, receiver_xyz, elevation_mask_deg: float = DEFAULT_ELEVATION_MASK_DEG) -> DopReport:
    receiver = np.asarray(receiver_xyz, dtype=float)
    sats = np.atleast_2d(np.asarray(sat_xyz, dtype=float))
    if sats.size:
        elev, _ = elevation_azimuth(receiver, sats)
        sats = sats[elev >= math.radians(elevation_mask_deg)]
    n = sats.shape[0]
    if n < 4:
        raise GeometryError(f"{n} satellites above the mask; at least 4 required")
    los = sats - receiver
    los /= np.linalg.norm(los, axis=1)[:, None]
    g = np.column_stack([-los, np.ones(n)])
    normal = g.T @ g
    if np.linalg.cond(normal) > 1e12:
        raise GeometryError("singular DOP normal matrix")
    cov = np.linalg.inv(normal)
    rot = enu_rotation(receiver)
    enu = rot @ cov[:3, :3] @ rot.T
    return DopReport(
        n_sats=n,
        gdop=math.sqrt(np.trace(cov)),
        pdop=math.sqrt(np.trace(cov[:3, :3])),
        hdop=math.sqrt(enu[0, 0] + enu[1, 1]),
        vdop=math.sqrt(enu[2, 2]),
        tdop=math.sqrt(cov[3, 3]),
    )


def compute_dop(
    sat_states: Sequence[SatelliteEpochState],
    receiver: EcefPosition,
    elevation_mask_deg: float = DEFAULT_ELEVATION_MASK_DEG,
) -> DopReport:
    """GDOP/PDOP/HDOP/VDOP for the satellites above ``elevation_mask_deg``."""
    xyz = np.array([s.position.as_array() for s in sat_states]).reshape(-1, 3)
    return dop_from_positions(xyz, receiver.as_array(), elevation_mask_deg)


def dop_batch(sat_xyz, receiver_xyz, use) -> dict[str, np.ndarray]:
    """DOP series for E epochs; ``sat_xyz`` is (E, S, 3), ``use`` an (E, S) mask.

    Epochs with fewer than four usable satellites get NaN.
    """
    receiver = np.asarray(receiver_xyz, dtype=float)
    los = np.asarray(sat_xyz, dtype=float) - receiver
    los /= np.linalg.norm(los, axis=2)[..., None]
    w = np.asarray(use, dtype=float)
    g = np.concatenate([-los, np.ones(los.shape[:2] + (1,))], axis=2) * w[..., None]
    normal = np.einsum("esi,esj->eij", g, g)
    n = w.sum(axis=1).astype(int)
    bad = n < 4
    normal[bad] = np.eye(4)
    cov = np.linalg.inv(normal)
    rot = enu_rotation(receiver)
    enu = rot @ cov[:, :3, :3] @ rot.T
    out = {
        "n_sats": n,
        "gdop": np.sqrt(np.trace(cov, axis1=1, axis2=2)),
        "pdop": np.sqrt(np.trace(cov[:, :3, :3], axis1=1, axis2=2)),
        "hdop": np.sqrt(enu[:, 0, 0] + enu[:, 1, 1]),
        "vdop": np.sqrt(enu[:, 2, 2]),
        "tdop": np.sqrt(cov[:, 3, 3]),
    }
    for key in ("gdop", "pdop", "hdop", "vdop", "tdop"):
        out[key][bad] = np.nan
    return out
