"""Snap sightings to the network and grow confirmed route components.

A sighting confirms its nearest link. Confirmed links are then extended
through branch-free connections: while an endpoint node joins exactly two
links, the train had only one way to continue, so the neighbor is confirmed
too. Expansion stops at junctions (degree 3+) and dead ends.
"""

from __future__ import annotations

import csv
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import EmptyNetwork, MalformedRow
from .geo import M_PER_FOOT
from .ingest import Observation, ObservationKind
from .network import RailNetwork, mainline_subnet, nearest_link

DEFAULT_SNAP_THRESHOLD_M = 320 * M_PER_FOOT  # 97.536
STRICT_SNAP_THRESHOLD_M = 160 * M_PER_FOOT  # 48.768
DEFAULT_TERMINAL_THRESHOLD_M = 500.0

EXPANSION_ORIGIN = "expansion"


@dataclass(frozen=True)
class SnapResult:
    observation_id: str
    link_id: str
    distance_m: float


@dataclass
class ConfirmedSet:
    """Confirmed link ids and, per link, the observation ids that confirmed it.

    Links added by expansion carry the marker origin "expansion".
    """

    links: set[str] = field(default_factory=set)
    origin: dict[str, set[str]] = field(default_factory=dict)

    def add(self, link_id: str, origin_id: str) -> None:
        self.links.add(link_id)
        self.origin.setdefault(link_id, set()).add(origin_id)

    def copy(self) -> "ConfirmedSet":
        return ConfirmedSet(set(self.links), {k: set(v) for k, v in self.origin.items()})


@dataclass(frozen=True)
class RouteComponent:
    """A connected set of confirmed links; id is the smallest link id inside."""

    component_id: str
    links: frozenset[str]
    nodes: frozenset[int]


def snap_all(
    net: RailNetwork,
    observations: list[Observation],
    threshold_m: float = DEFAULT_SNAP_THRESHOLD_M,
    terminal_threshold_m: float | None = DEFAULT_TERMINAL_THRESHOLD_M,
    workers: int = 1,
) -> tuple[list[SnapResult], list[str]]:
    """Snap every observation to its nearest link within the threshold.

    Terminals use terminal_threshold_m when given (they are facility
    centroids, not track points). Returns snap results ordered by observation
    id and the ids that were rejected as too far from any link.
    """
    if threshold_m <= 0:
        raise ValueError("threshold_m must be positive")

    ordered = sorted(observations, key=lambda o: o.id)

    def snap_one(obs: Observation) -> tuple[str, tuple[str, float] | None]:
        limit = threshold_m
        if obs.kind is ObservationKind.TERMINAL and terminal_threshold_m is not None:
            limit = terminal_threshold_m
        return obs.id, nearest_link(net, obs.location, limit)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(snap_one, ordered))
    else:
        hits = [snap_one(o) for o in ordered]

    results: list[SnapResult] = []
    rejected: list[str] = []
    for obs_id, hit in hits:
        if hit is None:
            rejected.append(obs_id)
        else:
            results.append(SnapResult(obs_id, hit[0], hit[1]))
    return results, rejected


def confirmed_from_snaps(snaps: list[SnapResult]) -> ConfirmedSet:
    confirmed = ConfirmedSet()
    for s in sorted(snaps, key=lambda s: s.observation_id):
        confirmed.add(s.link_id, s.observation_id)
    return confirmed


@dataclass(frozen=True)
class ProximityStats:
    """Cumulative fraction of observations within each threshold."""

    thresholds_m: tuple[float, ...]
    all_lines: tuple[float, ...]
    main_lines: tuple[float, ...]


def proximity_stats(
    net: RailNetwork,
    observations: list[Observation],
    thresholds_m: list[float],
) -> ProximityStats:
    """Fractions of observations within each threshold of the nearest link.

    Computed against the full network and against its main-line subnetwork.
    Thresholds must be sorted ascending; fractions are monotone in threshold.
    """
    if not thresholds_m or sorted(thresholds_m) != list(thresholds_m):
        raise ValueError("thresholds must be non-empty and sorted ascending")
    if thresholds_m[0] <= 0:
        raise ValueError("thresholds must be positive")
    max_t = thresholds_m[-1]

    try:
        mainline = mainline_subnet(net)
    except EmptyNetwork:
        mainline = None

    def fractions(target: RailNetwork | None) -> tuple[float, ...]:
        if target is None or not observations:
            return tuple(0.0 for _ in thresholds_m)
        dists = []
        for obs in sorted(observations, key=lambda o: o.id):
            hit = nearest_link(target, obs.location, max_t)
            dists.append(hit[1] if hit is not None else None)
        return tuple(
            sum(1 for d in dists if d is not None and d <= t) / len(dists) for t in thresholds_m
        )

    return ProximityStats(tuple(thresholds_m), fractions(net), fractions(mainline))


def expand(net: RailNetwork, confirmed: ConfirmedSet) -> ConfirmedSet:
    """Grow the confirmed set through branch-free (degree-2) nodes to fixpoint.

    Pure: returns a new ConfirmedSet. Terminates on cycles because only
    unconfirmed neighbors are ever enqueued.
    """
    for link_id in confirmed.links:
        net.link(link_id)

    result = confirmed.copy()
    queue = deque(sorted(result.links))
    while queue:
        link_id = queue.popleft()
        for node_id in net.link_nodes(link_id):
            incident = net.nodes[node_id].incident_links
            if len(incident) != 2:
                continue
            (other,) = incident - {link_id}
            if other not in result.links:
                result.add(other, EXPANSION_ORIGIN)
                queue.append(other)
    return result


def components(net: RailNetwork, confirmed: ConfirmedSet) -> list[RouteComponent]:
    """Connected components of the confirmed subgraph.

    Two confirmed links are connected iff they share a node. Components are
    returned sorted by id (the smallest link id they contain).
    """
    for link_id in confirmed.links:
        net.link(link_id)

    node_links: dict[int, list[str]] = {}
    for link_id in sorted(confirmed.links):
        for node_id in net.link_nodes(link_id):
            node_links.setdefault(node_id, []).append(link_id)

    assigned: set[str] = set()
    out: list[RouteComponent] = []
    for start in sorted(confirmed.links):
        if start in assigned:
            continue
        member_links = {start}
        member_nodes: set[int] = set()
        stack = [start]
        while stack:
            current = stack.pop()
            for node_id in net.link_nodes(current):
                member_nodes.add(node_id)
                for neighbor in node_links[node_id]:
                    if neighbor not in member_links:
                        member_links.add(neighbor)
                        stack.append(neighbor)
        assigned |= member_links
        out.append(
            RouteComponent(min(member_links), frozenset(member_links), frozenset(member_nodes))
        )
    return sorted(out, key=lambda c: c.component_id)


def write_snap_results(path, snaps: list[SnapResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["observation_id", "link_id", "distance_m"])
        for s in sorted(snaps, key=lambda s: s.observation_id):
            writer.writerow([s.observation_id, s.link_id, f"{s.distance_m:.6f}"])


def read_snap_results(path) -> list[SnapResult]:
    out: list[SnapResult] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["observation_id", "link_id", "distance_m"]:
            raise MalformedRow(1, "expected header observation_id,link_id,distance_m")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(line_no, f"expected 3 fields, got {len(row)}")
            try:
                dist = float(row[2])
            except ValueError:
                raise MalformedRow(line_no, f"bad distance {row[2]!r}") from None
            out.append(SnapResult(row[0], row[1], dist))
    return out
