"""Geodesic primitives on WGS84 coordinates.

Distances use a spherical earth model (R = 6,371,000 m); at the tens-of-meters
tolerances used for snapping, the spherical error is immaterial. Segment
projection for point-to-line distance runs in a local equirectangular plane
centered on the query point, which is adequate at sub-kilometer distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CoordinateOutOfRange, InvalidGeometry, InvalidRing

EARTH_RADIUS_M = 6_371_000.0
M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0
M_PER_FOOT = 0.3048


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 point. lat in [-90, 90], lon in [-180, 180], both finite."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise CoordinateOutOfRange(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise CoordinateOutOfRange(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise CoordinateOutOfRange(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Polyline:
    """An ordered open chain of at least two vertices.

    Consecutive vertices must be distinct; zero-length segments are rejected
    at construction.
    """

    vertices: tuple[GeoPoint, ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 2:
            raise InvalidGeometry("polyline needs at least 2 vertices")
        for a, b in zip(self.vertices, self.vertices[1:]):
            if a == b:
                raise InvalidGeometry(f"consecutive identical vertices at ({a.lat}, {a.lon})")


@dataclass(frozen=True)
class Polygon:
    """A closed exterior ring (first vertex = last) with optional holes."""

    exterior: tuple[GeoPoint, ...]
    holes: tuple[tuple[GeoPoint, ...], ...] = ()

    def __post_init__(self) -> None:
        for ring in (self.exterior, *self.holes):
            if len(ring) < 4:
                raise InvalidRing("ring needs at least 4 vertices including closure")
            if ring[0] != ring[-1]:
                raise InvalidRing("ring is not closed (first vertex != last)")


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlambda = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlambda / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def polyline_length_m(line: Polyline) -> float:
    """Sum of haversine segment lengths over the vertex chain."""
    return sum(haversine_m(a, b) for a, b in zip(line.vertices, line.vertices[1:]))


def point_to_polyline_m(p: GeoPoint, line: Polyline) -> tuple[float, float]:
    """Minimum distance from p to the line, in meters.

    Returns (distance_m, fraction) where fraction in [0, 1] locates the
    nearest point along the cumulative length of the line. When two segments
    are equidistant the earliest segment wins, so the result is deterministic.
    """
    cos_lat = math.cos(math.radians(p.lat))
    seg_lengths = [haversine_m(a, b) for a, b in zip(line.vertices, line.vertices[1:])]
    total = sum(seg_lengths)

    best_dist = math.inf
    best_along = 0.0
    cum = 0.0
    for i, (a, b) in enumerate(zip(line.vertices, line.vertices[1:])):
        # Local plane centered on p: x east, y north, meters.
        ax = (a.lon - p.lon) * M_PER_DEG_LAT * cos_lat
        ay = (a.lat - p.lat) * M_PER_DEG_LAT
        bx = (b.lon - p.lon) * M_PER_DEG_LAT * cos_lat
        by = (b.lat - p.lat) * M_PER_DEG_LAT
        dx = bx - ax
        dy = by - ay
        denom = dx * dx + dy * dy
        t = 0.0 if denom == 0.0 else -(ax * dx + ay * dy) / denom
        t = min(1.0, max(0.0, t))
        nearest = GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
        d = haversine_m(p, nearest)
        if d < best_dist:
            best_dist = d
            best_along = cum + t * seg_lengths[i]
        cum += seg_lengths[i]

    return best_dist, best_along / total


def point_in_polygon(p: GeoPoint, poly: Polygon) -> bool:
    """Ray-casting containment test in the lon/lat plane.

    Points on any ring boundary count as inside. A point inside a hole is
    outside unless it lies exactly on the hole boundary.
    """
    for ring in (poly.exterior, *poly.holes):
        if _on_ring(p, ring):
            return True
    if not _ray_cast(p, poly.exterior):
        return False
    for hole in poly.holes:
        if _ray_cast(p, hole):
            return False
    return True


def _on_ring(p: GeoPoint, ring: tuple[GeoPoint, ...], eps: float = 1e-12) -> bool:
    x, y = p.lon, p.lat
    for a, b in zip(ring, ring[1:]):
        x1, y1, x2, y2 = a.lon, a.lat, b.lon, b.lat
        cross = (y - y1) * (x2 - x1) - (x - x1) * (y2 - y1)
        if abs(cross) > eps:
            continue
        if min(x1, x2) - eps <= x <= max(x1, x2) + eps and min(y1, y2) - eps <= y <= max(y1, y2) + eps:
            return True
    return False


def _ray_cast(p: GeoPoint, ring: tuple[GeoPoint, ...]) -> bool:
    # Even-odd rule, ray cast toward +lon. Half-open comparison on lat makes
    # vertex crossings count exactly once.
    x, y = p.lon, p.lat
    inside = False
    for a, b in zip(ring, ring[1:]):
        y1, y2 = a.lat, b.lat
        if (y1 > y) != (y2 > y):
            x_cross = a.lon + (y - y1) * (b.lon - a.lon) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside
