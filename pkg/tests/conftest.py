"""Shared fixture builders: small networks with known topology."""

from __future__ import annotations

import random

import pytest

from railtrace.geo import GeoPoint, Polyline
from railtrace.network import NetClass, RailLink, RailNetwork, build_topology


def pline(*pts: tuple[float, float]) -> Polyline:
    return Polyline(tuple(GeoPoint(lat, lon) for lat, lon in pts))


def mk_link(
    link_id: str,
    *pts: tuple[float, float],
    owners=("BNSF",),
    rights=(),
    net_class=NetClass.MAIN_LINE,
) -> RailLink:
    return RailLink(
        id=link_id,
        geometry=pline(*pts),
        owners=frozenset(owners),
        trackage_rights=frozenset(rights),
        net_class=net_class,
    )


def branched_chain_links() -> list[RailLink]:
    """Six links: a 3-4-5-6 chain with branches 1 and 2 at link 3's far end.

    The junction of links 1, 2 and 3 has degree 3; the chain's interior nodes
    have degree 2; everything else dead-ends.
    """
    j = (40.0, -100.0)  # the three-way junction
    return [
        mk_link("1", j, (40.05, -100.1)),
        mk_link("2", j, (39.95, -100.1)),
        mk_link("3", j, (40.0, -99.9)),
        mk_link("4", (40.0, -99.9), (40.0, -99.8)),
        mk_link("5", (40.0, -99.8), (40.0, -99.7)),
        mk_link("6", (40.0, -99.7), (40.0, -99.6)),
    ]


@pytest.fixture
def branched_chain_net() -> RailNetwork:
    return build_topology(branched_chain_links())


def shared_node(net: RailNetwork, link_a: str, link_b: str) -> int:
    common = set(net.link_nodes(link_a)) & set(net.link_nodes(link_b))
    assert len(common) == 1, f"links {link_a} and {link_b} share {len(common)} nodes"
    return common.pop()


def chain_links(n: int, link_ids: list[str] | None = None, **kwargs) -> list[RailLink]:
    """n collinear links along latitude 40, 0.1 degrees each."""
    ids = link_ids or [f"L{i:02d}" for i in range(n)]
    return [
        mk_link(ids[i], (40.0, -100.0 + 0.1 * i), (40.0, -100.0 + 0.1 * (i + 1)), **kwargs)
        for i in range(n)
    ]


CARRIER_POOL = ["AA", "BB", "CC"]


def random_graph_links(rng: random.Random, max_nodes: int = 12, max_links: int = 20):
    """Random small multigraph with random carrier labels.

    Returns (links, coords) where coords[i] is the (lat, lon) of generator
    node i; node spacing is far above the weld tolerance, so build_topology
    reconstructs exactly this graph.
    """
    n = rng.randint(3, max_nodes)
    coords = []
    for i in range(n):
        lat = round(40.0 + (i // 4) * 0.3 + rng.uniform(-0.1, 0.1), 6)
        lon = round(-100.0 + (i % 4) * 0.3 + rng.uniform(-0.1, 0.1), 6)
        coords.append((lat, lon))
    m = rng.randint(max(2, n - 1), max_links)
    links = []
    for k in range(m):
        a, b = rng.sample(range(n), 2)
        owners = rng.sample(CARRIER_POOL, rng.randint(1, 2))
        rights = rng.sample(CARRIER_POOL, rng.randint(0, 1))
        links.append(
            mk_link(f"L{k:02d}", coords[a], coords[b], owners=owners, rights=rights)
        )
    return links, coords


def node_id_at(net: RailNetwork, coord: tuple[float, float]) -> int:
    # weld centroids can differ from the generator coordinate by an ulp
    from railtrace.geo import GeoPoint, haversine_m

    target = GeoPoint(*coord)
    best = min(net.nodes.values(), key=lambda n: haversine_m(n.location, target))
    assert haversine_m(best.location, target) < 1.0, f"no node near {coord}"
    return best.id
