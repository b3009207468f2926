"""Planar geometry primitives shared by the whole pipeline.

All distances are meters in a local equirectangular frame. Every function
here is pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from typing import Iterable, NamedTuple

METERS_PER_DEG_LAT = 111_320.0

PERPENDICULAR = "perpendicular"
ENDPOINT = "endpoint"


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class PlanePoint(NamedTuple):
    x: float
    y: float


class Projection(NamedTuple):
    """Local equirectangular projection centered on a data bounding box."""

    origin: GeoPoint
    meters_per_deg_lat: float
    meters_per_deg_lon: float


def make_projection(points: Iterable[GeoPoint]) -> Projection:
    """Build a projection centered on the bounding-box centroid of ``points``."""
    pts = list(points)
    if not pts:
        raise ValueError("no points")
    lats = [p.lat for p in pts]
    lons = [p.lon for p in pts]
    origin = GeoPoint((min(lats) + max(lats)) / 2.0, (min(lons) + max(lons)) / 2.0)
    m_lat = METERS_PER_DEG_LAT
    m_lon = m_lat * math.cos(math.radians(origin.lat))
    return Projection(origin, m_lat, m_lon)


def project(p: GeoPoint, proj: Projection) -> PlanePoint:
    return PlanePoint(
        (p.lon - proj.origin.lon) * proj.meters_per_deg_lon,
        (p.lat - proj.origin.lat) * proj.meters_per_deg_lat,
    )


def unproject(p: PlanePoint, proj: Projection) -> GeoPoint:
    return GeoPoint(
        proj.origin.lat + p.y / proj.meters_per_deg_lat,
        proj.origin.lon + p.x / proj.meters_per_deg_lon,
    )


def dist(a: PlanePoint, b: PlanePoint) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _check_segment(a: PlanePoint, b: PlanePoint) -> None:
    if a[0] == b[0] and a[1] == b[1]:
        raise ValueError("degenerate segment")


def dist_point_segment(
    p: PlanePoint, a: PlanePoint, b: PlanePoint
) -> tuple[float, PlanePoint, str]:
    """Distance from ``p`` to segment ``ab``.

    Returns ``(distance, foot, kind)`` where ``foot`` is the closest point on
    the segment and ``kind`` says whether the perpendicular projection fell
    inside the segment or the nearest endpoint was used.
    """
    _check_segment(a, b)
    abx, aby = b[0] - a[0], b[1] - a[1]
    t = ((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / (abx * abx + aby * aby)
    if t < 0.0:
        return math.hypot(p[0] - a[0], p[1] - a[1]), PlanePoint(a[0], a[1]), ENDPOINT
    if t > 1.0:
        return math.hypot(p[0] - b[0], p[1] - b[1]), PlanePoint(b[0], b[1]), ENDPOINT
    foot = PlanePoint(a[0] + t * abx, a[1] + t * aby)
    return math.hypot(p[0] - foot[0], p[1] - foot[1]), foot, PERPENDICULAR


def dist_point_line(p: PlanePoint, a: PlanePoint, b: PlanePoint) -> float:
    """Unbounded perpendicular distance from ``p`` to the line through ``ab``."""
    _check_segment(a, b)
    abx, aby = b[0] - a[0], b[1] - a[1]
    return abs((p[0] - a[0]) * aby - (p[1] - a[1]) * abx) / math.hypot(abx, aby)


def dist_point_midpoint(p: PlanePoint, a: PlanePoint, b: PlanePoint) -> float:
    _check_segment(a, b)
    return math.hypot(p[0] - (a[0] + b[0]) / 2.0, p[1] - (a[1] + b[1]) / 2.0)


def cos_between(u: tuple[float, float], v: tuple[float, float]) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    nu = math.hypot(u[0], u[1])
    nv = math.hypot(v[0], v[1])
    if nu == 0.0 or nv == 0.0:
        raise ValueError("undefined heading")
    c = (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    return max(-1.0, min(1.0, c))
