"""WGS-84 coordinate conversions and local-level geometry."""

from __future__ import annotations

import math

import numpy as np

from .constants import WGS84_A, WGS84_E2


def geodetic_to_ecef(lat_deg: float, lon_deg: float, height_m: float) -> np.ndarray:
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return np.array(
        [
            (n + height_m) * math.cos(lat) * math.cos(lon),
            (n + height_m) * math.cos(lat) * math.sin(lon),
            (n * (1.0 - WGS84_E2) + height_m) * sin_lat,
        ]
    )


def ecef_to_geodetic(xyz) -> tuple[float, float, float]:
    """Return (lat_deg, lon_deg, height_m); iterates the latitude to 1e-14 rad."""
    x, y, z = (float(v) for v in xyz)
    lon = math.atan2(y, x)
    p = math.hypot(x, y)
    lat = math.atan2(z, p * (1.0 - WGS84_E2))
    for _ in range(20):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        new_lat = math.atan2(z + WGS84_E2 * n * sin_lat, p)
        converged = abs(new_lat - lat) < 1e-14
        lat = new_lat
        if converged:
            break
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    # well conditioned at every latitude, unlike p / cos(lat) - N
    height = p * cos_lat + z * sin_lat - WGS84_A * math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return math.degrees(lat), math.degrees(lon), height


def enu_rotation(xyz) -> np.ndarray:
    """Rows are the east, north and up unit vectors at ``xyz``."""
    lat_deg, lon_deg, _ = ecef_to_geodetic(xyz)
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


def ecef_delta_to_enu(delta, origin) -> np.ndarray:
    return enu_rotation(origin) @ np.asarray(delta, dtype=float)


def enu_to_ecef_delta(enu, origin) -> np.ndarray:
    return enu_rotation(origin).T @ np.asarray(enu, dtype=float)


def elevation_azimuth(receiver, satellites) -> tuple[np.ndarray, np.ndarray]:
    """Elevation and azimuth (radians) of each satellite row seen from ``receiver``."""
    receiver = np.asarray(receiver, dtype=float)
    sats = np.atleast_2d(np.asarray(satellites, dtype=float))
    enu = (sats - receiver) @ enu_rotation(receiver).T
    horiz = np.hypot(enu[:, 0], enu[:, 1])
    return np.arctan2(enu[:, 2], horiz), np.mod(np.arctan2(enu[:, 0], enu[:, 1]), 2 * np.pi)
