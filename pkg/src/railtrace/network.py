"""Rail graph construction and queries.

Links arrive as bare geometry; topology is realized by welding link endpoints
into shared nodes with a union-find pass over endpoint clusters (endpoints
within the weld tolerance join the same node). The welded graph is immutable;
every query is read-only.

Nearest-link lookups run against a uniform lon/lat grid. Exactness is kept by
searching the 3x3 cell neighborhood around the query point and then expanding
rings until the ring's minimum possible distance exceeds the best hit so far.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

from .errors import (
    DuplicateLinkId,
    EmptyNetwork,
    NodeNotOnLink,
    ParseError,
    SelfLoopLink,
    UnknownLink,
)
from .geo import (
    M_PER_DEG_LAT,
    GeoPoint,
    Polyline,
    haversine_m,
    point_to_polyline_m,
    polyline_length_m,
)

DEFAULT_WELD_TOLERANCE_M = 10.0
DEFAULT_GRID_CELL_DEG = 0.05


class NetClass(enum.Enum):
    MAIN_LINE = "MainLine"
    SIDING = "Siding"
    BRANCH = "Branch"
    YARD = "Yard"
    OTHER = "Other"


# Single-letter track-class codes as used by the national rail network
# dataset. Anything outside the table maps to OTHER, never to MAIN_LINE.
DEFAULT_NET_CLASS_MAP = {
    "M": NetClass.MAIN_LINE,
    "S": NetClass.SIDING,
    "B": NetClass.BRANCH,
    "Y": NetClass.YARD,
}
_NET_CLASS_CODE = {
    NetClass.MAIN_LINE: "M",
    NetClass.SIDING: "S",
    NetClass.BRANCH: "B",
    NetClass.YARD: "Y",
    NetClass.OTHER: "O",
}


def normalize_carrier(code: str) -> str:
    """Trim and uppercase a reporting mark; reject empty strings."""
    mark = code.strip().upper()
    if not mark:
        raise ValueError("carrier code is empty")
    return mark


@dataclass(frozen=True)
class RailLink:
    """One rail link: geometry plus ownership and track-class attributes."""

    id: str
    geometry: Polyline
    owners: frozenset[str]
    trackage_rights: frozenset[str] = frozenset()
    net_class: NetClass = NetClass.OTHER
    length_m: float = field(default=0.0)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("link id is empty")
        if not self.owners:
            raise ValueError(f"link {self.id!r} has no owners")
        object.__setattr__(self, "owners", frozenset(normalize_carrier(c) for c in self.owners))
        object.__setattr__(
            self, "trackage_rights", frozenset(normalize_carrier(c) for c in self.trackage_rights)
        )
        computed = polyline_length_m(self.geometry)
        if self.length_m == 0.0:
            object.__setattr__(self, "length_m", computed)
        elif not computed > 0.0 or abs(self.length_m - computed) > 0.001 * computed:
            raise ValueError(
                f"link {self.id!r} length {self.length_m} differs from geometry length {computed}"
            )

    @property
    def carriers(self) -> frozenset[str]:
        return self.owners | self.trackage_rights

    @property
    def endpoints(self) -> tuple[GeoPoint, GeoPoint]:
        return self.geometry.vertices[0], self.geometry.vertices[-1]


@dataclass(frozen=True)
class Node:
    """A welded junction: centroid location plus incident link ids."""

    id: int
    location: GeoPoint
    incident_links: frozenset[str]


class RailNetwork:
    """Immutable welded rail graph with a spatial index over link geometry.

    Build through :func:`build_topology`; do not mutate after construction.
    """

    def __init__(
        self,
        links: dict[str, RailLink],
        nodes: dict[int, Node],
        link_ends: dict[str, tuple[int, int]],
        weld_tolerance_m: float,
        grid_cell_deg: float,
    ):
        self.links = links
        self.nodes = nodes
        self._link_ends = link_ends
        self.weld_tolerance_m = weld_tolerance_m
        self.grid_cell_deg = grid_cell_deg
        self._grid: dict[tuple[int, int], list[str]] | None = None
        self._grid_extent: tuple[int, int, int, int] | None = None
        self._adjacency: dict[int, tuple[tuple[str, int, float], ...]] | None = None

    def link(self, link_id: str) -> RailLink:
        try:
            return self.links[link_id]
        except KeyError:
            raise UnknownLink(f"no link {link_id!r} in network") from None

    def link_nodes(self, link_id: str) -> tuple[int, int]:
        """Node ids at the (first-vertex, last-vertex) ends of a link."""
        self.link(link_id)
        return self._link_ends[link_id]

    def degree(self, node_id: int) -> int:
        return len(self.nodes[node_id].incident_links)

    def adjacency(self) -> dict[int, tuple[tuple[str, int, float], ...]]:
        """node id -> tuple of (link_id, other_node, length_m), sorted by link id."""
        if self._adjacency is None:
            adj: dict[int, list[tuple[str, int, float]]] = {n: [] for n in self.nodes}
            for link_id in sorted(self.links):
                a, b = self._link_ends[link_id]
                w = self.links[link_id].length_m
                adj[a].append((link_id, b, w))
                adj[b].append((link_id, a, w))
            self._adjacency = {n: tuple(edges) for n, edges in adj.items()}
        return self._adjacency

    # -- spatial grid ------------------------------------------------------

    def _cell(self, p: GeoPoint) -> tuple[int, int]:
        c = self.grid_cell_deg
        return math.floor(p.lon / c), math.floor(p.lat / c)

    def _ensure_grid(self) -> dict[tuple[int, int], list[str]]:
        if self._grid is not None:
            return self._grid
        c = self.grid_cell_deg
        grid: dict[tuple[int, int], set[str]] = {}
        for link_id in sorted(self.links):
            for a, b in zip(self.links[link_id].geometry.vertices, self.links[link_id].geometry.vertices[1:]):
                ix0 = math.floor(min(a.lon, b.lon) / c)
                ix1 = math.floor(max(a.lon, b.lon) / c)
                iy0 = math.floor(min(a.lat, b.lat) / c)
                iy1 = math.floor(max(a.lat, b.lat) / c)
                for ix in range(ix0, ix1 + 1):
                    for iy in range(iy0, iy1 + 1):
                        grid.setdefault((ix, iy), set()).add(link_id)
        self._grid = {cell: sorted(ids) for cell, ids in grid.items()}
        xs = [ix for ix, _ in self._grid]
        ys = [iy for _, iy in self._grid]
        self._grid_extent = (min(xs), max(xs), min(ys), max(ys))
        return self._grid


def build_topology(
    links: list[RailLink],
    weld_tolerance_m: float = DEFAULT_WELD_TOLERANCE_M,
    *,
    grid_cell_deg: float = DEFAULT_GRID_CELL_DEG,
) -> RailNetwork:
    """Weld link endpoints into nodes and assemble the graph.

    Endpoints within weld_tolerance_m of each other share a node (transitively,
    via union-find). Node locations are the centroid of the welded endpoints;
    node ids are assigned by sorting clusters on (lat, lon, smallest link id),
    so rebuilding from the same links always yields the same ids.

    Raises DuplicateLinkId, SelfLoopLink (a link whose two endpoints weld to
    one node), or EmptyNetwork.
    """
    if weld_tolerance_m <= 0:
        raise ValueError("weld_tolerance_m must be positive")
    if not links:
        raise EmptyNetwork("no links given")
    seen: set[str] = set()
    for link in links:
        if link.id in seen:
            raise DuplicateLinkId(f"duplicate link id {link.id!r}")
        seen.add(link.id)

    ordered = sorted(links, key=lambda l: l.id)
    # endpoints[i] = (point, link_id, end) with end 0 = first vertex, 1 = last
    endpoints: list[tuple[GeoPoint, str, int]] = []
    for link in ordered:
        first, last = link.endpoints
        endpoints.append((first, link.id, 0))
        endpoints.append((last, link.id, 1))

    parent = list(range(len(endpoints)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    # Bucket endpoints so only nearby pairs are compared. Cell sizes are
    # conservative for the data's latitude range, so no in-tolerance pair can
    # sit more than one cell apart.
    cell_lat = weld_tolerance_m / M_PER_DEG_LAT
    max_abs_lat = max(abs(p.lat) for p, _, _ in endpoints)
    cos_min = max(math.cos(math.radians(min(89.9, max_abs_lat + 2 * cell_lat))), 1e-6)
    cell_lon = cell_lat / cos_min
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, (p, _, _) in enumerate(endpoints):
        key = (math.floor(p.lon / cell_lon), math.floor(p.lat / cell_lat))
        buckets.setdefault(key, []).append(i)
    for i, (p, _, _) in enumerate(endpoints):
        ix, iy = math.floor(p.lon / cell_lon), math.floor(p.lat / cell_lat)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in buckets.get((ix + dx, iy + dy), ()):
                    if j > i and haversine_m(p, endpoints[j][0]) <= weld_tolerance_m:
                        union(i, j)

    clusters: dict[int, list[int]] = {}
    for i in range(len(endpoints)):
        clusters.setdefault(find(i), []).append(i)

    end_index = {(lid, end): i for i, (_, lid, end) in enumerate(endpoints)}
    for link in ordered:
        if find(end_index[(link.id, 0)]) == find(end_index[(link.id, 1)]):
            raise SelfLoopLink(link.id)

    cluster_info = []
    for root, members in clusters.items():
        pts = [endpoints[i][0] for i in sorted(members)]
        lat = sum(p.lat for p in pts) / len(pts)
        lon = sum(p.lon for p in pts) / len(pts)
        first_link = min(endpoints[i][1] for i in members)
        cluster_info.append((lat, lon, first_link, root, members))
    cluster_info.sort(key=lambda c: (c[0], c[1], c[2]))

    nodes: dict[int, Node] = {}
    root_to_node: dict[int, int] = {}
    for node_id, (lat, lon, _, root, members) in enumerate(cluster_info):
        incident = frozenset(endpoints[i][1] for i in members)
        nodes[node_id] = Node(node_id, GeoPoint(lat, lon), incident)
        root_to_node[root] = node_id

    link_ends = {
        link.id: (
            root_to_node[find(end_index[(link.id, 0)])],
            root_to_node[find(end_index[(link.id, 1)])],
        )
        for link in ordered
    }
    links_by_id = {link.id: link for link in ordered}
    return RailNetwork(links_by_id, nodes, link_ends, weld_tolerance_m, grid_cell_deg)


def neighbors_via(net: RailNetwork, link_id: str, node_id: int) -> set[str]:
    """Links incident to node_id other than link_id itself.

    Raises NodeNotOnLink if the node is not an endpoint of the link.
    """
    if node_id not in net.link_nodes(link_id):
        raise NodeNotOnLink(f"node {node_id} is not an endpoint of link {link_id!r}")
    return set(net.nodes[node_id].incident_links) - {link_id}


def _rebuild(net: RailNetwork, link_ids: set[str], why: str) -> RailNetwork:
    if not link_ids:
        raise EmptyNetwork(why)
    kept = [net.links[i] for i in sorted(link_ids)]
    return build_topology(kept, net.weld_tolerance_m, grid_cell_deg=net.grid_cell_deg)


def mainline_subnet(net: RailNetwork) -> RailNetwork:
    """Network restricted to MainLine links, topology rebuilt."""
    ids = {i for i, l in net.links.items() if l.net_class is NetClass.MAIN_LINE}
    return _rebuild(net, ids, "no main-line links in network")


def accessible_subnet(net: RailNetwork, carriers: set[str]) -> RailNetwork:
    """Network restricted to links the given carriers own or may run on."""
    if not carriers:
        raise ValueError("carriers set is empty")
    marks = {normalize_carrier(c) for c in carriers}
    ids = {i for i, l in net.links.items() if l.owners & marks or l.trackage_rights & marks}
    return _rebuild(net, ids, f"no links accessible to carriers {sorted(marks)}")


def nearest_link(
    net: RailNetwork,
    p: GeoPoint,
    max_dist_m: float,
    *,
    within: set[str] | None = None,
) -> tuple[str, float] | None:
    """Closest link to p within max_dist_m, or None.

    Ties break toward the smaller link id. `within`, when given, restricts
    candidates to that id set without touching the index.
    """
    if max_dist_m <= 0:
        raise ValueError("max_dist_m must be positive")
    grid = net._ensure_grid()
    min_ix, max_ix, min_iy, max_iy = net._grid_extent  # type: ignore[misc]
    ci, cj = net._cell(p)
    cell = net.grid_cell_deg

    best: tuple[float, str] | None = None
    evaluated: set[str] = set()

    def ring_lower_bound_m(k: int) -> float:
        if k <= 1:
            return 0.0
        band = min(89.9, abs(p.lat) + (k + 1) * cell)
        cos_band = math.cos(math.radians(band))
        # Shaved slightly so the flat-plane bound never exceeds the true
        # great-circle distance.
        return (k - 1) * cell * M_PER_DEG_LAT * cos_band * (1.0 - 1e-6)

    k = 0
    while True:
        limit = max_dist_m if best is None else min(max_dist_m, best[0])
        if ring_lower_bound_m(k) > limit:
            break
        if k > 0 and ci - k < min_ix and ci + k > max_ix and cj - k < min_iy and cj + k > max_iy:
            break
        for ix, iy in _ring_cells(ci, cj, k):
            for link_id in grid.get((ix, iy), ()):
                if link_id in evaluated or (within is not None and link_id not in within):
                    continue
                evaluated.add(link_id)
                d, _ = point_to_polyline_m(p, net.links[link_id].geometry)
                if d <= max_dist_m and (best is None or (d, link_id) < best):
                    best = (d, link_id)
        k += 1

    if best is None:
        return None
    return best[1], best[0]


def _ring_cells(ci: int, cj: int, k: int):
    if k == 0:
        yield ci, cj
        return
    for ix in range(ci - k, ci + k + 1):
        yield ix, cj - k
        yield ix, cj + k
    for iy in range(cj - k + 1, cj + k):
        yield ci - k, iy
        yield ci + k, iy


# -- GeoJSON interface -----------------------------------------------------


def links_from_geojson(
    doc: dict,
    net_class_map: dict[str, NetClass] | None = None,
) -> list[RailLink]:
    """Read RailLinks from a GeoJSON FeatureCollection of LineStrings.

    Feature properties: `id` (string), `owners` (array of strings),
    `trackage_rights` (optional array), `net` (string mapped through
    net_class_map; unmapped codes become OTHER). Coordinates are [lon, lat].
    Exact consecutive duplicate coordinates are dropped.
    """
    mapping = DEFAULT_NET_CLASS_MAP if net_class_map is None else net_class_map
    if doc.get("type") != "FeatureCollection":
        raise ParseError("network file is not a GeoJSON FeatureCollection")
    links = []
    for idx, feature in enumerate(doc.get("features", [])):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "LineString":
            raise ParseError(f"feature {idx}: geometry type {geom.get('type')!r} is not LineString")
        props = feature.get("properties") or {}
        link_id = props.get("id")
        if not isinstance(link_id, str) or not link_id:
            raise ParseError(f"feature {idx}: missing string property 'id'")
        owners = props.get("owners")
        if not isinstance(owners, list) or not owners:
            raise ParseError(f"feature {idx} ({link_id}): 'owners' must be a non-empty array")
        rights = props.get("trackage_rights", [])
        if not isinstance(rights, list):
            raise ParseError(f"feature {idx} ({link_id}): 'trackage_rights' must be an array")
        net_code = props.get("net", "")
        vertices: list[GeoPoint] = []
        for lon, lat in geom.get("coordinates", []):
            pt = GeoPoint(lat, lon)
            if not vertices or vertices[-1] != pt:
                vertices.append(pt)
        if len(vertices) < 2:
            raise ParseError(f"feature {idx} ({link_id}): fewer than 2 distinct coordinates")
        links.append(
            RailLink(
                id=link_id,
                geometry=Polyline(tuple(vertices)),
                owners=frozenset(owners),
                trackage_rights=frozenset(rights),
                net_class=mapping.get(net_code, NetClass.OTHER),
            )
        )
    return links


def read_network_geojson(path, net_class_map: dict[str, NetClass] | None = None) -> list[RailLink]:
    with open(path, encoding="utf-8") as f:
        return links_from_geojson(json.load(f), net_class_map)


def network_to_geojson(net: RailNetwork) -> dict:
    """Serialize links back to the GeoJSON input schema, sorted by id."""
    features = []
    for link_id in sorted(net.links):
        link = net.links[link_id]
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[v.lon, v.lat] for v in link.geometry.vertices],
                },
                "properties": {
                    "id": link.id,
                    "owners": sorted(link.owners),
                    "trackage_rights": sorted(link.trackage_rights),
                    "net": _NET_CLASS_CODE[link.net_class],
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}
