"""Score a reconstructed network against incidents and metro polygons."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geo import GeoPoint, haversine_m
from .infer import InferredNetwork
from .ingest import IncidentRecord, RegionPolygon, locate_region
from .network import RailNetwork, nearest_link

DEFAULT_ALIGNMENT_RADIUS_M = 25_000.0
METRO_SAMPLE_SPACING_M = 500.0


@dataclass(frozen=True)
class AlignmentReport:
    """How many incidents sit within radius_m of the reconstructed network.

    missed aggregates unaligned incidents by (city, state) with a count, the
    way repeated incidents in one city share a single geocoded point.
    """

    total_incidents: int
    aligned: int
    missed: tuple[tuple[str, str, int], ...]
    fraction_aligned: float
    radius_m: float


@dataclass(frozen=True)
class CoverageReport:
    metros_traversed: int
    metros_total: int
    traversed_ids: tuple[str, ...]


def incident_alignment(
    net: RailNetwork,
    inferred: InferredNetwork,
    incidents: list[IncidentRecord],
    radius_m: float = DEFAULT_ALIGNMENT_RADIUS_M,
) -> AlignmentReport:
    """An incident is aligned iff some labeled link is within radius_m of it.

    With no incidents the fraction is vacuously 1.0.
    """
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    link_ids = set(inferred.links)
    aligned = 0
    missed_counts: dict[tuple[str, str], int] = {}
    for rec in incidents:
        hit = None
        if link_ids:
            hit = nearest_link(net, rec.location, radius_m, within=link_ids)
        if hit is not None:
            aligned += 1
        else:
            key = (rec.city, rec.state)
            missed_counts[key] = missed_counts.get(key, 0) + 1
    missed = tuple(
        (city, state, missed_counts[(city, state)])
        for state, city in sorted((s, c) for c, s in missed_counts)
    )
    total = len(incidents)
    fraction = aligned / total if total else 1.0
    return AlignmentReport(total, aligned, missed, fraction, radius_m)


def _sample_points(a: GeoPoint, b: GeoPoint, spacing_m: float):
    yield a
    length = haversine_m(a, b)
    if length > spacing_m:
        steps = math.ceil(length / spacing_m)
        for i in range(1, steps):
            t = i / steps
            yield GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
    yield b


def metro_coverage(
    net: RailNetwork,
    inferred: InferredNetwork,
    metros: list[RegionPolygon],
) -> CoverageReport:
    """Metros traversed by any labeled link.

    A metro counts as traversed when a link vertex, or a point sampled along
    a segment at <= 500 m spacing, falls inside one of its polygon parts.
    """
    if not metros:
        raise ValueError("metros list is empty")
    parts_by_id: dict[str, list[RegionPolygon]] = {}
    for region in metros:
        parts_by_id.setdefault(region.region_id, []).append(region)

    bbox_by_id: dict[str, tuple[float, float, float, float]] = {}
    for region_id, parts in parts_by_id.items():
        lats = [v.lat for r in parts for v in r.polygon.exterior]
        lons = [v.lon for r in parts for v in r.polygon.exterior]
        bbox_by_id[region_id] = (min(lats), max(lats), min(lons), max(lons))

    traversed: list[str] = []
    for region_id in sorted(parts_by_id):
        min_lat, max_lat, min_lon, max_lon = bbox_by_id[region_id]
        parts = parts_by_id[region_id]
        hit = False
        for link_id in sorted(inferred.links):
            vertices = net.link(link_id).geometry.vertices
            if (
                max(v.lat for v in vertices) < min_lat
                or min(v.lat for v in vertices) > max_lat
                or max(v.lon for v in vertices) < min_lon
                or min(v.lon for v in vertices) > max_lon
            ):
                continue
            for a, b in zip(vertices, vertices[1:]):
                for p in _sample_points(a, b, METRO_SAMPLE_SPACING_M):
                    if locate_region(p, parts) is not None:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                break
        if hit:
            traversed.append(region_id)
    return CoverageReport(len(traversed), len(parts_by_id), tuple(traversed))


def alignment_to_dict(report: AlignmentReport) -> dict:
    return {
        "total_incidents": report.total_incidents,
        "aligned": report.aligned,
        "fraction_aligned": report.fraction_aligned,
        "radius_m": report.radius_m,
        "missed": [
            {"city": city, "state": state, "count": count}
            for city, state, count in report.missed
        ],
    }


def coverage_to_dict(report: CoverageReport) -> dict:
    return {
        "metros_traversed": report.metros_traversed,
        "metros_total": report.metros_total,
        "traversed_ids": list(report.traversed_ids),
    }
