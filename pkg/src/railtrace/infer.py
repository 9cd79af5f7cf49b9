"""Connect broken confirmed routes with carrier-constrained shortest paths.

Broken confirmed components (and snapped terminals) are merged greedily:
every round considers the shortest feasible connector between any two
entities, where feasible means (1) the path runs only over main-line links
that the endpoint carriers own or have trackage rights on, and (2) the
connector's endpoints sit in PADD regions with recorded crude flow between
them. The globally shortest candidate is accepted, its path links are marked
inferred, and the two entities merge; rounds repeat until nothing feasible
remains.

Shortest paths tie-break on the lexicographically smallest link-id sequence,
so the whole procedure is deterministic for fixed inputs.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, replace

from .confirm import RouteComponent
from .errors import PointOutsideAllPadds, UnsnappedTerminal
from .geo import M_PER_DEG_LAT, GeoPoint
from .ingest import OdMatrix, RegionPolygon, locate_region
from .network import RailNetwork, normalize_carrier

_EPS_M = 1e-6


@dataclass(frozen=True)
class TerminalTarget:
    """A loading/unloading terminal reduced to its snapped link."""

    terminal_id: str
    link_id: str | None


@dataclass(frozen=True)
class GapCandidate:
    """A candidate connector between two entities.

    path is the ordered link-id sequence (empty when the entities already
    share a node); carriers_used is the carrier set the search was restricted
    to.
    """

    from_id: str
    to_id: str
    path: tuple[str, ...]
    length_m: float
    carriers_used: frozenset[str]
    from_node: int
    to_node: int
    from_point: GeoPoint
    to_point: GeoPoint


class LinkStatus(enum.Enum):
    CONFIRMED = "confirmed"
    INFERRED = "inferred"


@dataclass(frozen=True)
class InferredNetwork:
    """Final labeled link set: every link confirmed or inferred, never both."""

    links: dict[str, LinkStatus]
    provenance: dict[str, tuple[str, ...]]


@dataclass(frozen=True)
class AcceptedGap:
    gap_id: str
    from_id: str
    to_id: str
    path: tuple[str, ...]
    length_m: float
    carriers_used: frozenset[str]
    from_node: int
    to_node: int


@dataclass(frozen=True)
class InferenceResult:
    network: InferredNetwork
    accepted: tuple[AcceptedGap, ...]
    remaining: tuple[str, ...]


def _links_of(endpoint: RouteComponent | TerminalTarget) -> set[str]:
    if isinstance(endpoint, TerminalTarget):
        if endpoint.link_id is None:
            raise UnsnappedTerminal(f"terminal {endpoint.terminal_id!r} has no snapped link")
        return {endpoint.link_id}
    return set(endpoint.links)


def carrier_set(
    a: RouteComponent | TerminalTarget,
    b: RouteComponent | TerminalTarget,
    net: RailNetwork,
) -> frozenset[str]:
    """All carriers that own or have trackage rights on either endpoint."""
    if a is b:
        raise ValueError("carrier_set endpoints must differ")
    marks: set[str] = set()
    for link_id in _links_of(a) | _links_of(b):
        marks |= net.link(link_id).carriers
    return frozenset(marks)


def shortest_gap(
    net: RailNetwork,
    carriers: frozenset[str] | set[str],
    from_nodes: set[int],
    to_nodes: set[int],
) -> GapCandidate | None:
    """Shortest carrier-accessible path between two node sets, or None.

    Runs over the subset of net's links whose owners or trackage rights
    intersect carriers. If the node sets already share a node the result is a
    zero-length candidate with an empty path. Among equal-length paths the
    lexicographically smallest link-id sequence wins.
    """
    if not carriers:
        raise ValueError("carriers set is empty")
    if not from_nodes or not to_nodes:
        raise ValueError("node sets must be non-empty")
    for n in from_nodes | to_nodes:
        if n not in net.nodes:
            raise ValueError(f"node {n} not in network")
    marks = {normalize_carrier(c) for c in carriers}
    allowed = {
        lid for lid, l in net.links.items() if l.owners & marks or l.trackage_rights & marks
    }

    shared = from_nodes & to_nodes
    if shared:
        node = min(shared)
        loc = net.nodes[node].location
        return GapCandidate("", "", (), 0.0, frozenset(marks), node, node, loc, loc)

    adjacency = net.adjacency()

    def dijkstra(
        sources: set[int],
        stop_at: set[int] | None = None,
        limit: float | None = None,
    ) -> tuple[dict[int, float], float | None]:
        """Multi-source Dijkstra over the allowed links.

        With stop_at, returns as soon as a stop node is settled (its distance
        is then exact and minimal over the set). With limit, abandons nodes
        farther than limit; every node with true distance <= limit is settled
        exactly before returning.
        """
        dist = {s: 0.0 for s in sources}
        heap = [(0.0, s) for s in sorted(sources)]
        heapq.heapify(heap)
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, float("inf")):
                continue
            if stop_at is not None and u in stop_at:
                return dist, d
            if limit is not None and d > limit:
                return dist, None
            for link_id, v, w in adjacency[u]:
                if link_id not in allowed:
                    continue
                nd = d + w
                if nd < dist.get(v, float("inf")):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist, None

    _, d_star = dijkstra(from_nodes, stop_at=to_nodes)
    if d_star is None:
        return None
    dist_t, _ = dijkstra(to_nodes, limit=d_star + _EPS_M)

    # Walk the shortest-path DAG picking the smallest link id at every step;
    # the epsilon absorbs float summation-order noise between the two
    # distance fields.
    def step_options(u: int, acc: float):
        for link_id, v, w in adjacency[u]:
            if link_id in allowed and v in dist_t and acc + w + dist_t[v] <= d_star + _EPS_M:
                yield link_id, v, w

    start_options = []
    for u in sorted(from_nodes):
        for link_id, v, w in step_options(u, 0.0):
            start_options.append((link_id, v, u, w))
    link_id, u, start, w = min(start_options)
    path = [link_id]
    acc = w
    guard = len(net.links) + 1
    while u not in to_nodes:
        link_id, v, w = min(step_options(u, acc))
        path.append(link_id)
        acc += w
        u = v
        guard -= 1
        if guard < 0:
            raise RuntimeError("shortest-path reconstruction did not terminate")

    return GapCandidate(
        "",
        "",
        tuple(path),
        acc,
        frozenset(marks),
        start,
        u,
        net.nodes[start].location,
        net.nodes[u].location,
    )


def _padd_index(region_id: str) -> int:
    try:
        idx = int(region_id)
    except ValueError:
        raise ValueError(f"PADD region id {region_id!r} is not 1..5") from None
    if not 1 <= idx <= 5:
        raise ValueError(f"PADD region id {region_id!r} is not 1..5")
    return idx


def direction_consistent(gap: GapCandidate, od: OdMatrix, padds: list[RegionPolygon]) -> bool:
    """True when recorded crude flow supports the gap's PADD pair.

    The gap is undirected, so flow in either orientation counts. For a gap
    inside a single PADD the diagonal entry decides; when the diagonal is
    zero the PADD still passes if it originates any rail flow at all
    (intra-region positioning moves happen where shipments start).
    """
    p = locate_region(gap.from_point, padds)
    q = locate_region(gap.to_point, padds)
    if p is None:
        raise PointOutsideAllPadds(f"gap endpoint {gap.from_point} is outside every PADD")
    if q is None:
        raise PointOutsideAllPadds(f"gap endpoint {gap.to_point} is outside every PADD")
    pi, qi = _padd_index(p), _padd_index(q)
    if pi != qi:
        return od.volume(pi, qi) > 0 or od.volume(qi, pi) > 0
    if od.volume(pi, pi) > 0:
        return True
    return any(od.volume(pi, j) > 0 for j in range(1, 6))


@dataclass
class _Entity:
    key: str
    display_id: str
    is_terminal: bool
    links: set[str]
    nodes: set[int]
    carriers: frozenset[str] = frozenset()
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # min/max lat, min/max lon


def _entity_bbox(net: RailNetwork, nodes: set[int]) -> tuple[float, float, float, float]:
    lats = [net.nodes[n].location.lat for n in nodes]
    lons = [net.nodes[n].location.lon for n in nodes]
    return min(lats), max(lats), min(lons), max(lons)


def _bbox_gap_lower_bound_m(
    a: tuple[float, float, float, float], b: tuple[float, float, float, float]
) -> float:
    """Conservative lower bound on any path length between the two boxes.

    The latitude leg is exact (R * dphi); the longitude leg is shrunk by
    cos(max |lat|) and 2/pi so the chord bound never exceeds the true
    great-circle distance.
    """
    dlat = max(0.0, max(a[0], b[0]) - min(a[1], b[1]))
    dlon = max(0.0, max(a[2], b[2]) - min(a[3], b[3]))
    if dlon > 180.0:
        dlon = max(0.0, 360.0 - dlon)
    max_abs_lat = min(89.9, max(abs(a[0]), abs(a[1]), abs(b[0]), abs(b[1])))
    lat_m = dlat * M_PER_DEG_LAT
    lon_m = dlon * M_PER_DEG_LAT * math.cos(math.radians(max_abs_lat)) * (2.0 / math.pi)
    return max(lat_m, lon_m) * (1.0 - 1e-9)


def infer_routes(
    net: RailNetwork,
    components: list[RouteComponent],
    terminals: list[TerminalTarget],
    od: OdMatrix,
    padds: list[RegionPolygon],
    max_rounds: int | None = None,
    origins: dict[str, set[str]] | None = None,
) -> InferenceResult:
    """Greedy globally-shortest-first merging of components and terminals.

    Each round computes the shortest carrier-accessible connector for every
    component/component and component/terminal pair, drops candidates whose
    PADD pair has no recorded flow (zero-length connectors are exempt; the
    entities already touch), accepts the shortest survivor, and merges. Stops
    when nothing feasible remains or max_rounds is hit. Unmergeable entities
    stay isolated and are reported in the result.

    origins, when given, supplies per-link observation ids for provenance.
    """
    if not components and not terminals:
        raise ValueError("need at least one component or terminal")
    if max_rounds is None:
        max_rounds = len(components) + len(terminals)

    entities: dict[str, _Entity] = {}
    counter = 0

    def add_entity(display_id: str, is_terminal: bool, links: set[str], nodes: set[int]) -> None:
        nonlocal counter
        key = f"e{counter}"
        counter += 1
        carriers = frozenset().union(*(net.link(l).carriers for l in links))
        entities[key] = _Entity(
            key, display_id, is_terminal, links, nodes, carriers, _entity_bbox(net, nodes)
        )

    for comp in sorted(components, key=lambda c: c.component_id):
        for link_id in comp.links:
            net.link(link_id)
        add_entity(comp.component_id, False, set(comp.links), set(comp.nodes))
    for term in sorted(terminals, key=lambda t: t.terminal_id):
        if term.link_id is None:
            raise UnsnappedTerminal(f"terminal {term.terminal_id!r} has no snapped link")
        net.link(term.link_id)
        a, b = net.link_nodes(term.link_id)
        add_entity(term.terminal_id, True, {term.link_id}, {a, b})

    confirmed_links: set[str] = set()
    link_origins: dict[str, set[str]] = {}
    for e in entities.values():
        confirmed_links |= e.links
        if e.is_terminal:
            link_origins.setdefault(next(iter(e.links)), set()).add(e.display_id)
    if origins:
        for link_id, obs_ids in origins.items():
            link_origins.setdefault(link_id, set()).update(obs_ids)

    def pair_carriers(a: _Entity, b: _Entity) -> frozenset[str]:
        return a.carriers | b.carriers

    # candidate cache: (keyA, keyB) -> feasible GapCandidate or None (None =
    # unreachable or direction-blocked); entries drop when an endpoint merges.
    cache: dict[tuple[str, str], GapCandidate | None] = {}

    def compute(pair: tuple[str, str]) -> GapCandidate | None:
        a, b = entities[pair[0]], entities[pair[1]]
        gap = shortest_gap(net, pair_carriers(a, b), a.nodes, b.nodes)
        if gap is not None:
            gap = replace(gap, from_id=a.display_id, to_id=b.display_id)
            if gap.length_m > 0.0 and not direction_consistent(gap, od, padds):
                gap = None
        cache[pair] = gap
        return gap

    accepted: list[AcceptedGap] = []
    inferred_links: dict[str, set[str]] = {}

    for _ in range(max_rounds):
        keys = sorted(entities)
        best: tuple[float, tuple[str, ...], str, str, GapCandidate] | None = None
        # Cached feasible candidates compete as-is; uncached pairs are tried
        # in order of a geometric lower bound on their length, and once that
        # bound exceeds the best feasible length the rest cannot win.
        pending: list[tuple[float, str, str]] = []
        for i, ka in enumerate(keys):
            for kb in keys[i + 1:]:
                if entities[ka].is_terminal and entities[kb].is_terminal:
                    continue
                pair = (ka, kb)
                if pair in cache:
                    gap = cache[pair]
                    if gap is not None:
                        ranked = (gap.length_m, gap.path, ka, kb, gap)
                        if best is None or ranked[:4] < best[:4]:
                            best = ranked
                else:
                    lb = _bbox_gap_lower_bound_m(entities[ka].bbox, entities[kb].bbox)
                    pending.append((lb, ka, kb))
        pending.sort()
        for lb, ka, kb in pending:
            if best is not None and lb > best[0]:
                break
            gap = compute((ka, kb))
            if gap is None:
                continue
            ranked = (gap.length_m, gap.path, ka, kb, gap)
            if best is None or ranked[:4] < best[:4]:
                best = ranked
        if best is None:
            break

        _, _, ka, kb, gap = best
        a, b = entities[ka], entities[kb]
        gap_id = f"gap-{len(accepted):03d}"
        accepted.append(
            AcceptedGap(
                gap_id, a.display_id, b.display_id, gap.path, gap.length_m,
                gap.carriers_used, gap.from_node, gap.to_node,
            )
        )
        path_nodes: set[int] = set()
        for link_id in gap.path:
            inferred_links.setdefault(link_id, set()).add(gap_id)
            path_nodes.update(net.link_nodes(link_id))
        merged_links = a.links | b.links | set(gap.path)
        merged_nodes = a.nodes | b.nodes | path_nodes
        del entities[ka], entities[kb]
        cache = {p: g for p, g in cache.items() if ka not in p and kb not in p}
        add_entity(min(merged_links), False, merged_links, merged_nodes)

    links: dict[str, LinkStatus] = {}
    provenance: dict[str, tuple[str, ...]] = {}
    for link_id in sorted(confirmed_links):
        links[link_id] = LinkStatus.CONFIRMED
        provenance[link_id] = tuple(sorted(link_origins.get(link_id, ())))
    for link_id in sorted(inferred_links):
        if link_id in links:
            continue  # a connector may run over already-confirmed track
        links[link_id] = LinkStatus.INFERRED
        provenance[link_id] = tuple(sorted(inferred_links[link_id]))

    remaining = tuple(sorted(e.display_id for e in entities.values()))
    return InferenceResult(InferredNetwork(links, provenance), tuple(accepted), remaining)


def inferred_to_geojson(net: RailNetwork, inferred: InferredNetwork) -> dict:
    """GeoJSON FeatureCollection of the labeled links, sorted by id."""
    features = []
    for link_id in sorted(inferred.links):
        link = net.link(link_id)
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[v.lon, v.lat] for v in link.geometry.vertices],
                },
                "properties": {
                    "id": link_id,
                    "status": inferred.links[link_id].value,
                    "provenance": list(inferred.provenance.get(link_id, ())),
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def geojson_to_inferred(doc: dict) -> InferredNetwork:
    """Read back the labeled link set written by inferred_to_geojson."""
    links: dict[str, LinkStatus] = {}
    provenance: dict[str, tuple[str, ...]] = {}
    for feature in doc.get("features", []):
        props = feature.get("properties") or {}
        link_id = props["id"]
        links[link_id] = LinkStatus(props["status"])
        provenance[link_id] = tuple(props.get("provenance", ()))
    return InferredNetwork(links, provenance)


def merge_audit(result: InferenceResult) -> dict:
    """Ordered record of accepted gaps plus whatever stayed unmerged."""
    return {
        "accepted_gaps": [
            {
                "gap_id": g.gap_id,
                "from": g.from_id,
                "to": g.to_id,
                "path": list(g.path),
                "length_m": g.length_m,
                "carriers_used": sorted(g.carriers_used),
                "from_node": g.from_node,
                "to_node": g.to_node,
            }
            for g in result.accepted
        ],
        "remaining_components": list(result.remaining),
    }
