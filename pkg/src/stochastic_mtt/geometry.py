import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)

(
    " geometry.py WGS84 conversions between geodetic coordinates,"
    " earth-centred earth-fixed Cartesian and the scene-local"
    " north/east/up frame used by the scenarios."
)

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_EP2 = WGS84_E2 / (1.0 - WGS84_E2)


@dataclass(frozen=True)
class GeodeticPoint:
    lat: float
    lon: float
    alt: float = 0.0


def geodetic_to_ecef(lat, lon, alt) -> np.ndarray:
    """Degrees and metres to ECEF metres; broadcasts over arrays."""
    phi = np.radians(np.asarray(lat, dtype=float))
    lam = np.radians(np.asarray(lon, dtype=float))
    h = np.asarray(alt, dtype=float)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(phi) ** 2)
    x = (n + h) * np.cos(phi) * np.cos(lam)
    y = (n + h) * np.cos(phi) * np.sin(lam)
    z = (n * (1.0 - WGS84_E2) + h) * np.sin(phi)
    return np.stack([x, y, z], axis=-1)


def ecef_to_geodetic(ecef) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    ECEF metres to (lat deg, lon deg, alt m).

    Bowring's parametric-latitude iteration, run until the latitude
    change is below 1e-15 rad (a handful of passes).
    """
    ecef = np.asarray(ecef, dtype=float)
    x, y, z = ecef[..., 0], ecef[..., 1], ecef[..., 2]
    p = np.hypot(x, y)
    lam = np.arctan2(y, x)

    beta = np.arctan2(z, (1.0 - WGS84_F) * p)
    phi = np.arctan2(
        z + WGS84_EP2 * WGS84_B * np.sin(beta) ** 3,
        p - WGS84_E2 * WGS84_A * np.cos(beta) ** 3,
    )
    for _ in range(10):
        beta = np.arctan2((1.0 - WGS84_F) * np.sin(phi), np.cos(phi))
        updated = np.arctan2(
            z + WGS84_EP2 * WGS84_B * np.sin(beta) ** 3,
            p - WGS84_E2 * WGS84_A * np.cos(beta) ** 3,
        )
        done = np.all(np.abs(updated - phi) < 1e-15)
        phi = updated
        if done:
            break

    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(phi) ** 2)
    sin_phi = np.sin(phi)
    cos_phi = np.cos(phi)
    # p / cos(phi) loses precision near the poles, the z form near the equator
    alt = np.where(
        np.abs(cos_phi) > 1e-3,
        p / np.where(np.abs(cos_phi) > 1e-3, cos_phi, 1.0) - n,
        z / np.where(np.abs(sin_phi) > 0, sin_phi, 1.0) - n * (1.0 - WGS84_E2),
    )
    return np.degrees(phi), np.degrees(lam), alt


def _rotation(origin: GeodeticPoint) -> np.ndarray:
    """Rows are the north, east and up unit vectors at ``origin`` in ECEF."""
    phi = np.radians(origin.lat)
    lam = np.radians(origin.lon)
    sp, cp = np.sin(phi), np.cos(phi)
    sl, cl = np.sin(lam), np.cos(lam)
    return np.array(
        [
            [-sp * cl, -sp * sl, cp],
            [-sl, cl, 0.0],
            [cp * cl, cp * sl, sp],
        ]
    )


def ecef_to_local(ecef, origin: GeodeticPoint) -> np.ndarray:
    ref = geodetic_to_ecef(origin.lat, origin.lon, origin.alt)
    return (np.asarray(ecef, dtype=float) - ref) @ _rotation(origin).T


def local_to_ecef(local, origin: GeodeticPoint) -> np.ndarray:
    ref = geodetic_to_ecef(origin.lat, origin.lon, origin.alt)
    return np.asarray(local, dtype=float) @ _rotation(origin) + ref


def geodetic_to_local(lat, lon, alt, origin: GeodeticPoint) -> np.ndarray:
    """Geodetic to scene-local [north, east, up] metres."""
    return ecef_to_local(geodetic_to_ecef(lat, lon, alt), origin)


def local_to_geodetic(local, origin: GeodeticPoint):
    return ecef_to_geodetic(local_to_ecef(local, origin))


def midpoint(a: GeodeticPoint, b: GeodeticPoint) -> GeodeticPoint:
    """Point halfway along the ECEF chord, projected back to the ellipsoid."""
    ecef = 0.5 * (
        geodetic_to_ecef(a.lat, a.lon, a.alt) + geodetic_to_ecef(b.lat, b.lon, b.alt)
    )
    lat, lon, _ = ecef_to_geodetic(ecef)
    return GeodeticPoint(float(lat), float(lon), 0.5 * (a.alt + b.alt))
