"""UTM projection on the WGS-84 ellipsoid (Krueger series, 6th order in n)."""
from __future__ import annotations

import math

import numpy as np

from .types import GpsFix, UtmCoord

A_WGS84 = 6378137.0
F_WGS84 = 1.0 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500_000.0
FALSE_NORTHING_SOUTH = 10_000_000.0
MAX_ABS_LAT = 84.0


class OutOfDomainError(ValueError):
    pass


def _series():
    n = F_WGS84 / (2.0 - F_WGS84)
    n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
    rect = A_WGS84 / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0)
    alpha = np.array([
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    ])
    beta = np.array([
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    ])
    return rect, alpha, beta


RECTIFYING_RADIUS, _ALPHA, _BETA = _series()
_E2 = F_WGS84 * (2.0 - F_WGS84)
_E = math.sqrt(_E2)
_J2 = 2.0 * np.arange(1, 7)


def zone_for_longitude(lon_deg: float) -> int:
    return min(int(math.floor((lon_deg + 180.0) / 6.0)) + 1, 60)


def central_meridian(zone: int) -> float:
    return 6.0 * zone - 183.0


def _conformal_tau(tau):
    sig = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1.0 + tau**2)))
    return tau * np.sqrt(1.0 + sig**2) - sig * np.sqrt(1.0 + tau**2)


def project(lat_deg, lon_deg, zone: int, north: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised forward projection into a given zone. Returns (easting, northing)."""
    lat = np.radians(np.asarray(lat_deg, dtype=float))
    dlon = np.radians(np.asarray(lon_deg, dtype=float) - central_meridian(zone))
    dlon = (dlon + np.pi) % (2 * np.pi) - np.pi
    tau_p = _conformal_tau(np.tan(lat))
    xi_p = np.arctan2(tau_p, np.cos(dlon))
    eta_p = np.arcsinh(np.sin(dlon) / np.hypot(tau_p, np.cos(dlon)))
    xi = xi_p + np.sum(_ALPHA * np.sin(np.multiply.outer(xi_p, _J2)) * np.cosh(np.multiply.outer(eta_p, _J2)), axis=-1)
    eta = eta_p + np.sum(_ALPHA * np.cos(np.multiply.outer(xi_p, _J2)) * np.sinh(np.multiply.outer(eta_p, _J2)), axis=-1)
    easting = FALSE_EASTING + K0 * RECTIFYING_RADIUS * eta
    northing = K0 * RECTIFYING_RADIUS * xi
    if not north:
        northing = northing + FALSE_NORTHING_SOUTH
    return easting, northing


def unproject(easting, northing, zone: int, north: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised inverse projection. Returns (lat_deg, lon_deg)."""
    y = np.asarray(northing, dtype=float) - (0.0 if north else FALSE_NORTHING_SOUTH)
    xi = y / (K0 * RECTIFYING_RADIUS)
    eta = (np.asarray(easting, dtype=float) - FALSE_EASTING) / (K0 * RECTIFYING_RADIUS)
    xi_p = xi - np.sum(_BETA * np.sin(np.multiply.outer(xi, _J2)) * np.cosh(np.multiply.outer(eta, _J2)), axis=-1)
    eta_p = eta - np.sum(_BETA * np.cos(np.multiply.outer(xi, _J2)) * np.sinh(np.multiply.outer(eta, _J2)), axis=-1)
    tau_p = np.sin(xi_p) / np.hypot(np.sinh(eta_p), np.cos(xi_p))
    dlon = np.arctan2(np.sinh(eta_p), np.cos(xi_p))
    tau = np.array(tau_p, dtype=float, copy=True)
    for _ in range(5):
        tp = _conformal_tau(tau)
        step = (tau_p - tp) * (1.0 + (1.0 - _E2) * tau**2) / (
            (1.0 - _E2) * np.sqrt(1.0 + tp**2) * np.sqrt(1.0 + tau**2))
        tau = tau + step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(tau))):
            break
    return np.degrees(np.arctan(tau)), np.degrees(dlon) + central_meridian(zone)


def latlon_to_utm(fix: GpsFix, zone: int | None = None, hemisphere: str | None = None) -> UtmCoord:
    """Project a fix; ``zone``/``hemisphere`` force a frame shared by a whole run."""
    if abs(fix.latitude_deg) > MAX_ABS_LAT:
        raise OutOfDomainError(f"latitude {fix.latitude_deg} outside UTM domain (|lat| <= 84)")
    zone = zone_for_longitude(fix.longitude_deg) if zone is None else zone
    hemisphere = hemisphere or ("north" if fix.latitude_deg >= 0 else "south")
    e, n = project(fix.latitude_deg, fix.longitude_deg, zone, hemisphere == "north")
    return UtmCoord(float(e), float(n), zone, hemisphere)


def utm_to_latlon(coord: UtmCoord, t: float = 0.0) -> GpsFix:
    lat, lon = unproject(coord.easting_m, coord.northing_m, coord.zone, coord.hemisphere == "north")
    return GpsFix(t, float(lat), float(lon))


def project_fixes(t, lat, lon) -> tuple[np.ndarray, UtmCoord]:
    """Project a GPS stream into the zone of its first fix.

    Returns (N, 2) easting/northing relative to the first fix, and that fix's
    UTM coordinate.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if len(lat) == 0:
        return np.empty((0, 2)), None
    if np.any(np.abs(lat) > MAX_ABS_LAT):
        raise OutOfDomainError("GPS stream has fixes outside the UTM domain (|lat| <= 84)")
    origin = latlon_to_utm(GpsFix(float(t[0]), float(lat[0]), float(lon[0])))
    e, n = project(lat, lon, origin.zone, origin.hemisphere == "north")
    return np.column_stack([e - origin.easting_m, n - origin.northing_m]), origin
