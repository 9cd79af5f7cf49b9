"""Input-file parsing and validation.

File formats (CSV files are UTF-8, comma-separated, RFC-4180 quoting, one
header row):

    observations.csv  id,lat,lon,timestamp,kind[,terminal_role]
    incidents.csv     date,city,state,lat,lon,phase
    od_matrix.csv     5x5 volume table with a `padd` header row and column
    regions GeoJSON   Polygon/MultiPolygon features with a `region_id` property

Incidents arrive pre-geocoded (city-centroid lat/lon columns); no geocoder is
bundled. Every parser validates rows eagerly and reports the offending line.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from datetime import date, datetime, timezone

from .errors import (
    CoordinateOutOfRange,
    DuplicateRegionId,
    InvalidRing,
    MalformedRow,
    MissingTimestamp,
    NegativeVolume,
    ParseError,
    WrongShape,
)
from .geo import GeoPoint, Polygon, point_in_polygon

EARLIEST_OBSERVATION = date(2008, 1, 1)

# Contiguous US: 48 states plus DC.
CONTIGUOUS_STATES = frozenset(
    """AL AR AZ CA CO CT DC DE FL GA IA ID IL IN KS KY LA MA MD ME MI MN MO MS
    MT NC ND NE NH NJ NM NV NY OH OK OR PA RI SC SD TN TX UT VA VT WA WI WV
    WY""".split()
)


class ObservationKind(enum.Enum):
    PHOTO = "photo"
    TERMINAL = "terminal"


class TerminalRole(enum.Enum):
    LOADING = "loading"
    UNLOADING = "unloading"
    BOTH = "both"


class IncidentPhase(enum.Enum):
    IN_TRANSIT = "in_transit"
    STORAGE = "storage"
    OTHER = "other"


@dataclass(frozen=True)
class Observation:
    """A geotagged sighting: a photo of a crude train, or a rail terminal."""

    id: str
    location: GeoPoint
    timestamp: datetime | None
    kind: ObservationKind
    terminal_role: TerminalRole | None = None


@dataclass(frozen=True)
class IncidentRecord:
    date: date
    city: str
    state: str
    location: GeoPoint
    phase: IncidentPhase


@dataclass(frozen=True)
class OdMatrix:
    """Annual crude volumes (thousand barrels) between the five PADDs.

    volumes[i][j] is the flow from PADD i+1 to PADD j+1.
    """

    volumes: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.volumes) != 5 or any(len(row) != 5 for row in self.volumes):
            raise WrongShape("OD matrix must be 5x5")
        for row in self.volumes:
            for v in row:
                if v < 0:
                    raise NegativeVolume(f"negative OD volume {v}")

    def volume(self, origin: int, dest: int) -> float:
        """Flow from origin PADD to dest PADD, ids 1..5."""
        return self.volumes[origin - 1][dest - 1]


@dataclass(frozen=True)
class RegionPolygon:
    region_id: str
    polygon: Polygon


def _parse_point(lat_s: str, lon_s: str, line_no: int) -> GeoPoint:
    try:
        lat, lon = float(lat_s), float(lon_s)
    except ValueError:
        raise MalformedRow(line_no, f"bad coordinates ({lat_s!r}, {lon_s!r})") from None
    try:
        return GeoPoint(lat, lon)
    except CoordinateOutOfRange as e:
        raise CoordinateOutOfRange(f"line {line_no}: {e}") from None


def _parse_timestamp(text: str, line_no: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise MalformedRow(line_no, f"bad timestamp {text!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_observations(path, harvest_date: date | None = None) -> list[Observation]:
    """Parse photo and terminal sightings from one CSV file.

    Photo rows must carry a timestamp between 2008-01-01 and harvest_date
    (default: today). Terminal rows may leave the timestamp empty and may add
    a terminal_role column (loading/unloading/both).
    """
    upper = harvest_date or datetime.now(timezone.utc).date()
    out: list[Observation] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:5]] != ["id", "lat", "lon", "timestamp", "kind"]:
            raise MalformedRow(1, "expected header id,lat,lon,timestamp,kind[,terminal_role]")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 5:
                raise MalformedRow(line_no, f"expected at least 5 fields, got {len(row)}")
            obs_id = row[0].strip()
            if not obs_id:
                raise MalformedRow(line_no, "empty observation id")
            location = _parse_point(row[1], row[2], line_no)
            kind_s = row[4].strip().lower()
            try:
                kind = ObservationKind(kind_s)
            except ValueError:
                raise MalformedRow(line_no, f"unknown kind {row[4]!r}") from None
            ts_s = row[3].strip()
            timestamp = _parse_timestamp(ts_s, line_no) if ts_s else None
            if kind is ObservationKind.PHOTO:
                if timestamp is None:
                    raise MissingTimestamp(line_no, f"photo {obs_id!r} has no timestamp")
                if not EARLIEST_OBSERVATION <= timestamp.date() <= upper:
                    raise MalformedRow(
                        line_no,
                        f"photo {obs_id!r} timestamp {timestamp.date()} outside "
                        f"[{EARLIEST_OBSERVATION}, {upper}]",
                    )
            role: TerminalRole | None = None
            if len(row) > 5 and row[5].strip():
                if kind is not ObservationKind.TERMINAL:
                    raise MalformedRow(line_no, "terminal_role given on a non-terminal row")
                try:
                    role = TerminalRole(row[5].strip().lower())
                except ValueError:
                    raise MalformedRow(line_no, f"unknown terminal_role {row[5]!r}") from None
            out.append(Observation(obs_id, location, timestamp, kind, role))
    return out


def write_observations(path, observations: list[Observation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "lat", "lon", "timestamp", "kind", "terminal_role"])
        for o in observations:
            ts = o.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ") if o.timestamp else ""
            role = o.terminal_role.value if o.terminal_role else ""
            writer.writerow([o.id, f"{o.location.lat:.6f}", f"{o.location.lon:.6f}", ts, o.kind.value, role])


_PHASE_MAP = {
    "in transit": IncidentPhase.IN_TRANSIT,
    "in_transit": IncidentPhase.IN_TRANSIT,
    "storage": IncidentPhase.STORAGE,
}


def parse_incidents(path) -> list[IncidentRecord]:
    """Parse incident records; duplicate (date, city, state) rows are kept."""
    out: list[IncidentRecord] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:6]] != ["date", "city", "state", "lat", "lon", "phase"]:
            raise MalformedRow(1, "expected header date,city,state,lat,lon,phase")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 6:
                raise MalformedRow(line_no, f"expected 6 fields, got {len(row)}")
            try:
                when = date.fromisoformat(row[0].strip())
            except ValueError:
                raise MalformedRow(line_no, f"bad date {row[0]!r}") from None
            city = row[1].strip()
            if not city:
                raise MalformedRow(line_no, "empty city")
            state = row[2].strip().upper()
            if state not in CONTIGUOUS_STATES:
                raise MalformedRow(line_no, f"state {row[2]!r} not in the contiguous US")
            location = _parse_point(row[3], row[4], line_no)
            phase = _PHASE_MAP.get(row[5].strip().lower(), IncidentPhase.OTHER)
            out.append(IncidentRecord(when, city, state, location, phase))
    return out


def write_incidents(path, incidents: list[IncidentRecord]) -> None:
    phase_text = {
        IncidentPhase.IN_TRANSIT: "IN TRANSIT",
        IncidentPhase.STORAGE: "STORAGE",
        IncidentPhase.OTHER: "OTHER",
    }
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["date", "city", "state", "lat", "lon", "phase"])
        for r in incidents:
            writer.writerow(
                [r.date.isoformat(), r.city, r.state, f"{r.location.lat:.6f}", f"{r.location.lon:.6f}", phase_text[r.phase]]
            )


def parse_od_matrix(path) -> OdMatrix:
    """Parse the 5x5 PADD-to-PADD volume table.

    Header row and column must both read padd,1,2,3,4,5 (rows are origins).
    Digit-grouping commas inside quoted cells are accepted.
    """
    with open(path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) != 6:
        raise WrongShape(f"expected 6 rows (header + 5), got {len(rows)}")
    header = [h.strip().lower() for h in rows[0]]
    if header != ["padd", "1", "2", "3", "4", "5"]:
        raise WrongShape(f"bad header row {rows[0]!r}")
    volumes = []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != 6:
            raise WrongShape(f"row {i} has {len(row)} fields, expected 6")
        if row[0].strip() != str(i):
            raise WrongShape(f"row {i} is labelled {row[0]!r}")
        values = []
        for cell in row[1:]:
            try:
                values.append(float(cell.replace(",", "")))
            except ValueError:
                raise WrongShape(f"row {i}: non-numeric volume {cell!r}") from None
        volumes.append(tuple(values))
    return OdMatrix(tuple(volumes))


def write_od_matrix(path, od: OdMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["padd", "1", "2", "3", "4", "5"])
        for i, row in enumerate(od.volumes, start=1):
            writer.writerow([str(i)] + [f"{v:.6f}" for v in row])


def _ring_from_coords(coords, what: str) -> tuple[GeoPoint, ...]:
    pts: list[GeoPoint] = []
    for lon, lat in coords:
        pt = GeoPoint(lat, lon)
        if not pts or pts[-1] != pt:
            pts.append(pt)
    if len(pts) < 4:
        raise InvalidRing(f"{what}: ring has too few vertices")
    if pts[0] != pts[-1]:
        raise InvalidRing(f"{what}: ring is not closed")
    return tuple(pts)


def _segments_cross(a1, a2, b1, b2) -> bool:
    # Proper or improper intersection of segments a1-a2 and b1-b2 in the
    # lon/lat plane.
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    def on_seg(p, q, r):
        return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])

    o1, o2 = orient(a1, a2, b1), orient(a1, a2, b2)
    o3, o4 = orient(b1, b2, a1), orient(b1, b2, a2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(a1, a2, b1):
        return True
    if o2 == 0 and on_seg(a1, a2, b2):
        return True
    if o3 == 0 and on_seg(b1, b2, a1):
        return True
    if o4 == 0 and on_seg(b1, b2, a2):
        return True
    return False


def _check_simple_ring(ring: tuple[GeoPoint, ...], what: str) -> None:
    """Reject self-intersecting rings: any contact between non-adjacent segments."""
    n = len(ring) - 1
    segs = [((ring[i].lon, ring[i].lat), (ring[i + 1].lon, ring[i + 1].lat)) for i in range(n)]
    order = sorted(range(n), key=lambda i: min(segs[i][0][0], segs[i][1][0]))
    for pos, i in enumerate(order):
        max_x = max(segs[i][0][0], segs[i][1][0])
        for j in order[pos + 1:]:
            if min(segs[j][0][0], segs[j][1][0]) > max_x:
                break
            lo, hi = min(i, j), max(i, j)
            if hi - lo == 1 or (lo == 0 and hi == n - 1):
                continue  # adjacent segments legitimately share a vertex
            if _segments_cross(segs[i][0], segs[i][1], segs[j][0], segs[j][1]):
                raise InvalidRing(f"{what}: ring self-intersects")


def parse_regions(path) -> list[RegionPolygon]:
    """Parse region polygons from GeoJSON.

    A MultiPolygon feature yields one RegionPolygon per part, all sharing the
    feature's region_id; membership queries treat them as one region. Two
    features may not reuse a region_id.
    """
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("type") != "FeatureCollection":
        raise ParseError("regions file is not a GeoJSON FeatureCollection")
    out: list[RegionPolygon] = []
    seen_ids: set[str] = set()
    for idx, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        region_id = props.get("region_id")
        if not isinstance(region_id, str) or not region_id:
            raise ParseError(f"feature {idx}: missing string property 'region_id'")
        if region_id in seen_ids:
            raise DuplicateRegionId(f"region_id {region_id!r} appears twice")
        seen_ids.add(region_id)
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = [geom.get("coordinates", [])]
        elif gtype == "MultiPolygon":
            parts = geom.get("coordinates", [])
        else:
            raise ParseError(f"feature {idx} ({region_id}): geometry {gtype!r} is not a polygon")
        for part in parts:
            if not part:
                raise InvalidRing(f"{region_id}: empty polygon part")
            rings = [_ring_from_coords(r, region_id) for r in part]
            for ring in rings:
                _check_simple_ring(ring, region_id)
            out.append(RegionPolygon(region_id, Polygon(rings[0], tuple(rings[1:]))))
    return out


def write_regions(path, regions: list[RegionPolygon]) -> None:
    """Serialize regions, regrouping parts that share a region_id."""
    by_id: dict[str, list[Polygon]] = {}
    for r in regions:
        by_id.setdefault(r.region_id, []).append(r.polygon)
    features = []
    for region_id in sorted(by_id):
        parts = [
            [[[v.lon, v.lat] for v in ring] for ring in (poly.exterior, *poly.holes)]
            for poly in by_id[region_id]
        ]
        if len(parts) == 1:
            geometry = {"type": "Polygon", "coordinates": parts[0]}
        else:
            geometry = {"type": "MultiPolygon", "coordinates": parts}
        features.append({"type": "Feature", "geometry": geometry, "properties": {"region_id": region_id}})
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"type": "FeatureCollection", "features": features}, f)


def locate_region(p: GeoPoint, regions: list[RegionPolygon]) -> str | None:
    """Region id containing p, or None. Overlaps resolve to the smallest id."""
    hits = sorted(r.region_id for r in regions if point_in_polygon(p, r.polygon))
    return hits[0] if hits else None
