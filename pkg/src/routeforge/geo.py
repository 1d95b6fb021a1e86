"""Spherical geometry primitives shared by the clustering and routing layers."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Mean Earth radius in meters.  Every conversion between a metric radius and an
# angular one goes through this constant; it is deliberately not configurable so
# that clustering radii and reported distances stay on the same sphere.
METERS_PER_RADIAN = 6_371_008.8


class NegativeRadiusError(ValueError):
    """Raised when a metric radius below zero is converted to an angle."""


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate pair in decimal degrees."""

    lat: float
    lon: float


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in meters.

    Uses the haversine formulation on a sphere of radius METERS_PER_RADIAN,
    which is numerically stable for the short hops typical of urban routing.
    """
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * METERS_PER_RADIAN * math.asin(math.sqrt(h))


def meters_to_radians(radius_meters: float) -> float:
    """Convert a metric search radius to the angular radius used by clustering."""
    if radius_meters < 0:
        raise NegativeRadiusError(f"radius must be non-negative, got {radius_meters}")
    return radius_meters / METERS_PER_RADIAN
