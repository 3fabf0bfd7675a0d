"""Transverse Mercator projection between latitude/longitude and UTM.

Standard UTM parameters on the GRS80 ellipsoid (the NAD83 reference
surface): scale factor 0.9996 at the central meridian, 500 000 m false
easting, 6-degree zones numbered 1..60 eastward from 180 W.  The forward
and inverse series are the usual Snyder/Krueger expansions; round trips
agree to well under half a meter anywhere in the projection's |lat| <= 84
operating band.  Southern-hemisphere false northing is out of scope here:
northing is always meters north of the equator.
"""

from __future__ import annotations

import math

from .grid import GeoPoint, GridRangeError, UtmCoord

# GRS80 ellipsoid
A = 6378137.0
FLATTENING = 1.0 / 298.257222101
E2 = FLATTENING * (2.0 - FLATTENING)       # first eccentricity squared
EP2 = E2 / (1.0 - E2)                      # second eccentricity squared

K0 = 0.9996
FALSE_EASTING = 500_000.0
MAX_LAT = 84.0

# Meridian-arc series coefficients.
_M1 = 1 - E2 / 4 - 3 * E2**2 / 64 - 5 * E2**3 / 256
_M2 = 3 * E2 / 8 + 3 * E2**2 / 32 + 45 * E2**3 / 1024
_M3 = 15 * E2**2 / 256 + 45 * E2**3 / 1024
_M4 = 35 * E2**3 / 3072

# Inverse (footpoint latitude) series coefficients.
_SQRT1ME2 = math.sqrt(1 - E2)
_E1 = (1 - _SQRT1ME2) / (1 + _SQRT1ME2)
_P2 = 3 * _E1 / 2 - 27 * _E1**3 / 32
_P3 = 21 * _E1**2 / 16 - 55 * _E1**4 / 32
_P4 = 151 * _E1**3 / 96
_P5 = 1097 * _E1**4 / 512


class ProjectionError(ValueError):
    """Latitude outside the Transverse Mercator operating band."""


def zone_of(lon: float) -> int:
    """UTM zone containing a longitude (zone 1 starts at 180 W)."""
    zone = int(math.floor((lon + 180.0) / 6.0)) + 1
    return min(max(zone, 1), 60)


def central_meridian(zone: int) -> float:
    return (zone - 1) * 6.0 - 180.0 + 3.0


def _meridian_arc(lat_rad: float) -> float:
    return A * (
        _M1 * lat_rad
        - _M2 * math.sin(2 * lat_rad)
        + _M3 * math.sin(4 * lat_rad)
        - _M4 * math.sin(6 * lat_rad)
    )


def geo_to_utm(p: GeoPoint, zone: int | None = None) -> UtmCoord:
    """Project a point into UTM; the zone defaults to the one containing it.

    Raises ProjectionError beyond |lat| = 84 degrees, where the series (and
    the UTM system itself) stops being meaningful.  Negative latitudes are
    accepted by the math but the resulting coordinate must stay in the
    northern-hemisphere northing band enforced by UtmCoord.
    """
    if abs(p.lat) > MAX_LAT:
        raise ProjectionError(f"latitude {p.lat} outside +/-{MAX_LAT}")
    if zone is None:
        zone = zone_of(p.lon)

    lat = math.radians(p.lat)
    dlon = math.radians(p.lon - central_meridian(zone))

    sin_lat = math.sin(lat)
    cos_lat = math.cos(lat)
    tan_lat = sin_lat / cos_lat if cos_lat != 0.0 else 0.0

    n = A / math.sqrt(1 - E2 * sin_lat**2)
    t = tan_lat**2
    c = EP2 * cos_lat**2
    a_ = dlon * cos_lat

    easting = FALSE_EASTING + K0 * n * (
        a_
        + (1 - t + c) * a_**3 / 6
        + (5 - 18 * t + t**2 + 72 * c - 58 * EP2) * a_**5 / 120
    )
    northing = K0 * (
        _meridian_arc(lat)
        + n
        * tan_lat
        * (
            a_**2 / 2
            + (5 - t + 9 * c + 4 * c**2) * a_**4 / 24
            + (61 - 58 * t + t**2 + 600 * c - 330 * EP2) * a_**6 / 720
        )
    )
    return UtmCoord(zone=zone, easting=easting, northing=northing)


def utm_to_geo(c: UtmCoord) -> GeoPoint:
    """Inverse projection; within 0.5 m of the forward transform's input."""
    x = c.easting - FALSE_EASTING
    mu = c.northing / K0 / (A * _M1)

    # Footpoint latitude.
    phi1 = (
        mu
        + _P2 * math.sin(2 * mu)
        + _P3 * math.sin(4 * mu)
        + _P4 * math.sin(6 * mu)
        + _P5 * math.sin(8 * mu)
    )

    sin1 = math.sin(phi1)
    cos1 = math.cos(phi1)
    tan1 = sin1 / cos1 if cos1 != 0.0 else 0.0

    c1 = EP2 * cos1**2
    t1 = tan1**2
    n1 = A / math.sqrt(1 - E2 * sin1**2)
    r1 = n1 * (1 - E2) / (1 - E2 * sin1**2)
    d = x / (n1 * K0)

    lat = phi1 - (n1 * tan1 / r1) * (
        d**2 / 2
        - (5 + 3 * t1 + 10 * c1 - 4 * c1**2 - 9 * EP2) * d**4 / 24
        + (61 + 90 * t1 + 298 * c1 + 45 * t1**2 - 252 * EP2 - 3 * c1**2) * d**6 / 720
    )
    dlon = (
        d
        - (1 + 2 * t1 + c1) * d**3 / 6
        + (5 - 2 * c1 + 28 * t1 - 3 * c1**2 + 8 * EP2 + 24 * t1**2) * d**5 / 120
    ) / cos1

    lat_deg = math.degrees(lat)
    lon_deg = central_meridian(c.zone) + math.degrees(dlon)
    if abs(lat_deg) > MAX_LAT + 0.5:
        raise GridRangeError(f"coordinates decode outside the projection band: lat {lat_deg}")
    return GeoPoint(lat=lat_deg, lon=lon_deg)
