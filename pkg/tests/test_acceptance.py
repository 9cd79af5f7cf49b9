"""Acceptance gate: one test per criterion, each printing a pass/fail line
and enforcing its time budget.

Criterion 7 (full-data reproduction) only runs when RAILTRACE_FULL_DATA
points at a directory with the real datasets; see the README for the layout.
"""

from __future__ import annotations

import os
import random
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

from railtrace.confirm import ConfirmedSet, components, confirmed_from_snaps, expand, proximity_stats, snap_all
from railtrace.geo import GeoPoint
from railtrace.infer import TerminalTarget, infer_routes, shortest_gap
from railtrace.ingest import (
    ObservationKind,
    parse_incidents,
    parse_observations,
    parse_od_matrix,
    parse_regions,
)
from railtrace.network import build_topology, mainline_subnet, read_network_geojson
from railtrace.validate import incident_alignment, metro_coverage

from conftest import chain_links, branched_chain_links, node_id_at, random_graph_links
from test_infer import PADDS, OD_TABLE, brute_shortest, gap_at
from test_validate import incident, labeled

FIXTURES = Path(__file__).parent / "fixtures" / "pipeline"
FULL_DATA = os.environ.get("RAILTRACE_FULL_DATA")


@contextmanager
def criterion(number: int, desc: str, budget_s: float):
    t0 = time.monotonic()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.monotonic() - t0
        in_budget = elapsed <= budget_s
        status = "PASS" if ok and in_budget else "FAIL"
        print(
            f"[acceptance] criterion {number} ({desc}): {status} [{elapsed:.2f}s / {budget_s:.0f}s]",
            file=sys.__stdout__,
        )
        if ok and not in_budget:
            raise AssertionError(f"criterion {number} exceeded {budget_s}s budget: {elapsed:.2f}s")


def confirmed_of(*link_ids: str) -> ConfirmedSet:
    cs = ConfirmedSet()
    for i, link_id in enumerate(sorted(link_ids)):
        cs.add(link_id, f"obs{i}")
    return cs


def test_criterion_1_branched_chain_expansion():
    with criterion(1, "branched-chain expansion fixture", 1.0):
        net = build_topology(branched_chain_links())
        result = expand(net, confirmed_of("4"))
        assert result.links == {"3", "4", "5", "6"}


def test_criterion_2_shortest_path_oracle():
    with criterion(2, "shortest-path oracle equivalence, 100 graphs", 30.0):
        rng = random.Random(424242)
        graphs = 0
        while graphs < 100:
            links, coords = random_graph_links(rng, max_nodes=12, max_links=20)
            net = build_topology(links)
            used = {
                (v.lat, v.lon)
                for l in links
                for v in (l.geometry.vertices[0], l.geometry.vertices[-1])
            }
            node_ids = [node_id_at(net, c) for c in coords if c in used]
            if len(node_ids) < 2:
                continue
            k = rng.randint(1, max(1, len(node_ids) // 2))
            shuffled = node_ids[:]
            rng.shuffle(shuffled)
            from_nodes = set(shuffled[:k])
            to_nodes = set(shuffled[k: 2 * k]) or {shuffled[-1]}
            carriers = set(rng.sample(["AA", "BB", "CC"], rng.randint(1, 3)))

            gap = shortest_gap(net, carriers, from_nodes, to_nodes)
            oracle = brute_shortest(net, carriers, from_nodes, to_nodes)
            if oracle is None:
                assert gap is None
            else:
                assert gap is not None
                assert gap.length_m == oracle[0]  # exact
                for link_id in gap.path:
                    link = net.links[link_id]
                    assert link.owners & carriers or link.trackage_rights & carriers
            graphs += 1
        assert graphs == 100


def test_criterion_3_expansion_properties():
    with criterion(3, "expand idempotent + monotone, 200 fixtures", 30.0):
        rng = random.Random(99887766)
        for _ in range(200):
            links, _ = random_graph_links(rng)
            net = build_topology(links)
            ids = sorted(net.links)
            big = set(rng.sample(ids, rng.randint(1, len(ids))))
            small = set(rng.sample(sorted(big), rng.randint(1, len(big))))

            s1 = expand(net, confirmed_of(*small))
            s2 = expand(net, s1)
            assert s2.links == s1.links and s2.origin == s1.origin  # idempotent
            t1 = expand(net, confirmed_of(*big))
            assert s1.links <= t1.links  # monotone


def test_criterion_4_od_direction_filter():
    with criterion(4, "OD-matrix direction filter", 1.0):
        od_path = FIXTURES / "od_matrix.csv"
        od = parse_od_matrix(od_path)
        assert od.volume(2, 1) == 48140
        from railtrace.infer import direction_consistent

        # PADD bands in the shared fixture run [-105, -95] in 2-degree strips
        assert direction_consistent(gap_at(-102.0, -104.0), od, PADDS) is True
        assert direction_consistent(gap_at(-104.0, -102.0), od, PADDS) is True
        assert direction_consistent(gap_at(-104.5, -103.5), od, PADDS) is False


def test_criterion_5_pipeline_determinism(tmp_path):
    with criterion(5, "byte-identical pipeline reruns", 10.0):
        stages = ["build", "snap", "confirm", "infer", "validate", "stats"]
        outs = [tmp_path / "run1", tmp_path / "run2"]
        for out in outs:
            for stage in stages:
                proc = subprocess.run(
                    [
                        sys.executable,
                        "-m",
                        "railtrace.cli",
                        stage,
                        "--config",
                        str(FIXTURES / "config.toml"),
                        "--out-dir",
                        str(out),
                    ],
                    capture_output=True,
                    text=True,
                )
                assert proc.returncode == 0, f"{stage}: {proc.stderr}"
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == sorted(p.name for p in outs[1].iterdir())
        for name in names:
            a = (outs[0] / name).read_bytes()
            b = (outs[1] / name).read_bytes()
            assert a == b, f"{name} differs between runs"


def test_criterion_6_alignment_metric_properties():
    with criterion(6, "alignment metric properties", 30.0):
        rng = random.Random(31415)
        net = build_topology(chain_links(8))
        full = labeled(net.links)

        on_network = [incident(f"on{i}", "NE", 40.0, -100.0 + 0.1 * i) for i in range(8)]
        assert incident_alignment(net, full, on_network, 1000.0).fraction_aligned == 1.0

        far_away = [incident(f"far{i}", "WA", 47.0 + 0.1 * i, -120.0) for i in range(8)]
        assert incident_alignment(net, full, far_away, 25000.0).fraction_aligned == 0.0

        for _ in range(20):
            incidents = [
                incident(f"c{i}", "NE", 40.0 + rng.uniform(-0.6, 0.6), rng.uniform(-100.3, -99.0))
                for i in range(30)
            ]
            radii = sorted(rng.uniform(500.0, 80000.0) for _ in range(4))
            fractions = [
                incident_alignment(net, full, incidents, r).fraction_aligned for r in radii
            ]
            assert fractions == sorted(fractions)  # monotone in radius

            cut = rng.randint(1, 7)
            subset = labeled({f"L{i:02d}" for i in range(cut)})
            r = rng.uniform(2000.0, 40000.0)
            assert (
                incident_alignment(net, subset, incidents, r).fraction_aligned
                <= incident_alignment(net, full, incidents, r).fraction_aligned
            )  # monotone in network size


@pytest.mark.skipif(
    not FULL_DATA, reason="RAILTRACE_FULL_DATA not set; full-data reproduction is optional"
)
def test_criterion_7_full_data_reproduction():
    data = Path(FULL_DATA)
    t0 = time.monotonic()
    links = read_network_geojson(data / "network.geojson")
    net = build_topology(links)
    mainline = mainline_subnet(net)
    observations = parse_observations(data / "observations.csv")
    photos = [o for o in observations if o.kind is ObservationKind.PHOTO]
    print(
        f"[acceptance] full-data inputs: {len(photos)} photos,"
        f" {len(observations) - len(photos)} terminals",
        file=sys.__stdout__,
    )

    stats = proximity_stats(net, photos, [48.768, 97.536])
    print(
        f"[acceptance] full-data proximity all-lines: {stats.all_lines}",
        file=sys.__stdout__,
    )
    assert abs(stats.all_lines[0] - 0.95) <= 0.02
    assert abs(stats.all_lines[1] - 0.98) <= 0.02

    snaps, _ = snap_all(mainline, observations, 97.536, 500.0)
    confirmed = confirmed_from_snaps(snaps)
    expanded = expand(mainline, confirmed)
    comps = components(mainline, expanded)
    od = parse_od_matrix(data / "od_matrix.csv")
    padds = parse_regions(data / "padd_regions.geojson")
    snap_by_obs = {s.observation_id: s.link_id for s in snaps}
    terminals = [
        TerminalTarget(o.id, snap_by_obs[o.id])
        for o in observations
        if o.kind is ObservationKind.TERMINAL and o.id in snap_by_obs
    ]
    result = infer_routes(mainline, comps, terminals, od, padds, origins=expanded.origin)

    incidents = parse_incidents(data / "incidents.csv")
    print(f"[acceptance] full-data incidents: {len(incidents)}", file=sys.__stdout__)
    report = incident_alignment(net, result.network, incidents, 25000.0)
    print(
        f"[acceptance] full-data alignment: {report.aligned}/{report.total_incidents}"
        f" = {report.fraction_aligned:.4f}",
        file=sys.__stdout__,
    )
    assert report.fraction_aligned >= 0.94

    metro_path = data / "metro_regions.geojson"
    if metro_path.exists():
        coverage = metro_coverage(net, result.network, parse_regions(metro_path))
        # reported, not asserted
        print(
            f"[acceptance] full-data metro coverage: {coverage.metros_traversed}"
            f"/{coverage.metros_total}",
            file=sys.__stdout__,
        )
    print(
        f"[acceptance] criterion 7 (full-data reproduction): PASS"
        f" [{time.monotonic() - t0:.1f}s]",
        file=sys.__stdout__,
    )
