"""Pipeline orchestration: railtrace build|snap|confirm|infer|validate|stats.

Each subcommand reads the artifacts of the stage before it and writes its own
artifacts into the output directory, atomically. Rerunning a stage on
identical inputs produces byte-identical files.

Exit codes: 0 success, 2 input/data error, 3 missing stage input.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import confirm as confirm_mod
from . import infer as infer_mod
from . import validate as validate_mod
from .confirm import (
    DEFAULT_SNAP_THRESHOLD_M,
    DEFAULT_TERMINAL_THRESHOLD_M,
    ConfirmedSet,
    RouteComponent,
    confirmed_from_snaps,
    read_snap_results,
    write_snap_results,
)
from .errors import InvalidConfig, MissingStageInput, RailTraceError
from .ingest import (
    ObservationKind,
    parse_incidents,
    parse_observations,
    parse_od_matrix,
    parse_regions,
)
from .network import (
    DEFAULT_WELD_TOLERANCE_M,
    NetClass,
    build_topology,
    mainline_subnet,
    network_to_geojson,
    read_network_geojson,
)
from .serialize import atomic_write_text, write_json

STAT_THRESHOLDS_M = [48.768, 97.536]

NETWORK_ARTIFACT = "network.geojson"
BUILD_SUMMARY = "build_summary.json"
SNAP_RESULTS = "snap_results.csv"
SNAP_SUMMARY = "snap_summary.json"
CONFIRMED_ARTIFACT = "confirmed.json"
INFERRED_ARTIFACT = "inferred.geojson"
MERGE_AUDIT = "merge_audit.json"
VALIDATION_REPORT = "validation_report.json"
MISSED_INCIDENTS = "missed_incidents.csv"
PROXIMITY_STATS = "proximity_stats.json"


@dataclass
class PipelineConfig:
    network: Path
    observations: Path
    incidents: Path
    od_matrix: Path
    padd_regions: Path
    metro_regions: Path
    out_dir: Path
    snap_threshold_m: float = DEFAULT_SNAP_THRESHOLD_M
    terminal_snap_threshold_m: float = DEFAULT_TERMINAL_THRESHOLD_M
    weld_tolerance_m: float = DEFAULT_WELD_TOLERANCE_M
    alignment_radius_m: float = validate_mod.DEFAULT_ALIGNMENT_RADIUS_M
    max_rounds: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("snap_threshold_m", "terminal_snap_threshold_m", "weld_tolerance_m", "alignment_radius_m"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")


_PATH_KEYS = ("network", "observations", "incidents", "od_matrix", "padd_regions", "metro_regions", "out_dir")


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read the flat TOML config; relative paths resolve against its directory.

    overrides (from CLI flags) win over file values; the RAILTRACE_OUT
    environment variable wins over both for the output directory.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as e:
        raise InvalidConfig(f"{path}: {e}") from None

    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    for key, value in raw.items():
        if key not in known:
            raise InvalidConfig(f"{path}: unknown config key {key!r}")
        if isinstance(value, dict):
            raise InvalidConfig(f"{path}: config must be flat, {key!r} is a table")
        values[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    env_out = os.environ.get("RAILTRACE_OUT")
    if env_out:
        values["out_dir"] = env_out

    missing = [k for k in _PATH_KEYS if k not in values]
    if missing:
        raise InvalidConfig(f"{path}: missing config keys {missing}")
    base = path.parent
    for key in _PATH_KEYS:
        p = Path(values[key])
        values[key] = p if p.is_absolute() else base / p
    return PipelineConfig(**values)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStageInput(f"{path} not found; run `railtrace {stage}` first")
    return path


def _load_networks(cfg: PipelineConfig):
    links = read_network_geojson(_require(cfg.out_dir / NETWORK_ARTIFACT, "build"))
    net = build_topology(links, cfg.weld_tolerance_m)
    return net, mainline_subnet(net)


def cmd_build(cfg: PipelineConfig) -> dict:
    links = read_network_geojson(cfg.network)
    net = build_topology(links, cfg.weld_tolerance_m)
    mainline = sum(1 for l in net.links.values() if l.net_class is NetClass.MAIN_LINE)
    summary = {
        "links": len(net.links),
        "nodes": len(net.nodes),
        "mainline_links": mainline,
        "mainline_share": mainline / len(net.links),
        "summary": f"{len(net.links)} links, {len(net.nodes)} nodes",
    }
    write_json(cfg.out_dir / NETWORK_ARTIFACT, network_to_geojson(net))
    write_json(cfg.out_dir / BUILD_SUMMARY, summary)
    return summary


def cmd_snap(cfg: PipelineConfig) -> dict:
    _, mainline = _load_networks(cfg)
    observations = parse_observations(cfg.observations)
    snaps, rejected = confirm_mod.snap_all(
        mainline,
        observations,
        cfg.snap_threshold_m,
        cfg.terminal_snap_threshold_m,
        workers=cfg.workers,
    )
    tmp = cfg.out_dir / (SNAP_RESULTS + ".tmp")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_snap_results(tmp, snaps)
    os.replace(tmp, cfg.out_dir / SNAP_RESULTS)
    summary = {
        "observations": len(observations),
        "snapped": len(snaps),
        "rejected": sorted(rejected),
        "snap_threshold_m": cfg.snap_threshold_m,
        "terminal_snap_threshold_m": cfg.terminal_snap_threshold_m,
    }
    write_json(cfg.out_dir / SNAP_SUMMARY, summary)
    return summary


def cmd_confirm(cfg: PipelineConfig) -> dict:
    _, mainline = _load_networks(cfg)
    snaps = read_snap_results(_require(cfg.out_dir / SNAP_RESULTS, "snap"))
    confirmed = confirmed_from_snaps(snaps)
    snapped_count = len(confirmed.links)
    expanded = confirm_mod.expand(mainline, confirmed)
    comps = confirm_mod.components(mainline, expanded)
    doc = {
        "links": {
            link_id: sorted(expanded.origin.get(link_id, ()))
            for link_id in sorted(expanded.links)
        },
        "components": [
            {
                "component_id": c.component_id,
                "links": sorted(c.links),
                "nodes": sorted(c.nodes),
            }
            for c in comps
        ],
        "snapped_links": snapped_count,
        "expanded_links": len(expanded.links),
    }
    write_json(cfg.out_dir / CONFIRMED_ARTIFACT, doc)
    return doc


def _read_confirmed(path) -> tuple[ConfirmedSet, list[RouteComponent]]:
    import json as _json

    with open(path, encoding="utf-8") as f:
        doc = _json.load(f)
    confirmed = ConfirmedSet()
    for link_id, origin_ids in doc["links"].items():
        for origin_id in origin_ids:
            confirmed.add(link_id, origin_id)
        confirmed.links.add(link_id)
    comps = [
        RouteComponent(c["component_id"], frozenset(c["links"]), frozenset(c["nodes"]))
        for c in doc["components"]
    ]
    return confirmed, comps


def cmd_infer(cfg: PipelineConfig) -> dict:
    full, mainline = _load_networks(cfg)
    confirmed, comps = _read_confirmed(_require(cfg.out_dir / CONFIRMED_ARTIFACT, "confirm"))
    snaps = read_snap_results(_require(cfg.out_dir / SNAP_RESULTS, "snap"))
    observations = parse_observations(cfg.observations)
    od = parse_od_matrix(cfg.od_matrix)
    padds = parse_regions(cfg.padd_regions)

    snap_by_obs = {s.observation_id: s.link_id for s in snaps}
    terminals = [
        infer_mod.TerminalTarget(o.id, snap_by_obs[o.id])
        for o in sorted(observations, key=lambda o: o.id)
        if o.kind is ObservationKind.TERMINAL and o.id in snap_by_obs
    ]
    result = infer_mod.infer_routes(
        mainline, comps, terminals, od, padds,
        max_rounds=cfg.max_rounds, origins=confirmed.origin,
    )
    write_json(cfg.out_dir / INFERRED_ARTIFACT, infer_mod.inferred_to_geojson(full, result.network))
    write_json(cfg.out_dir / MERGE_AUDIT, infer_mod.merge_audit(result))
    statuses = list(result.network.links.values())
    return {
        "confirmed": sum(1 for s in statuses if s is infer_mod.LinkStatus.CONFIRMED),
        "inferred": sum(1 for s in statuses if s is infer_mod.LinkStatus.INFERRED),
        "accepted_gaps": len(result.accepted),
        "remaining_components": list(result.remaining),
    }


def cmd_validate(cfg: PipelineConfig) -> dict:
    import json as _json

    full, _ = _load_networks(cfg)
    with open(_require(cfg.out_dir / INFERRED_ARTIFACT, "infer"), encoding="utf-8") as f:
        inferred = infer_mod.geojson_to_inferred(_json.load(f))
    incidents = parse_incidents(cfg.incidents)
    metros = parse_regions(cfg.metro_regions)

    alignment = validate_mod.incident_alignment(full, inferred, incidents, cfg.alignment_radius_m)
    coverage = validate_mod.metro_coverage(full, inferred, metros)
    report = {
        "incident_alignment": validate_mod.alignment_to_dict(alignment),
        "metro_coverage": validate_mod.coverage_to_dict(coverage),
    }
    write_json(cfg.out_dir / VALIDATION_REPORT, report)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["city", "state", "count"])
    for city, state, count in alignment.missed:
        writer.writerow([city, state, count])
    atomic_write_text(cfg.out_dir / MISSED_INCIDENTS, buf.getvalue())
    return report


def cmd_stats(cfg: PipelineConfig) -> dict:
    full, _ = _load_networks(cfg)
    observations = parse_observations(cfg.observations)
    photos = [o for o in observations if o.kind is ObservationKind.PHOTO]
    stats = confirm_mod.proximity_stats(full, photos, STAT_THRESHOLDS_M)
    doc = {
        "thresholds_m": list(stats.thresholds_m),
        "all_lines": list(stats.all_lines),
        "main_lines": list(stats.main_lines),
        "photos": len(photos),
    }
    write_json(cfg.out_dir / PROXIMITY_STATS, doc)
    return doc


_COMMANDS = {
    "build": cmd_build,
    "snap": cmd_snap,
    "confirm": cmd_confirm,
    "infer": cmd_infer,
    "validate": cmd_validate,
    "stats": cmd_stats,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="railtrace", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="path to the pipeline config file")
        p.add_argument("--out-dir", help="output directory (overrides config)")
        p.add_argument("--workers", type=int, help="parallelism cap for snapping")
        p.add_argument("--snap-threshold-m", type=float, dest="snap_threshold_m")
        p.add_argument("--terminal-snap-threshold-m", type=float, dest="terminal_snap_threshold_m")
        p.add_argument("--weld-tolerance-m", type=float, dest="weld_tolerance_m")
        p.add_argument("--alignment-radius-m", type=float, dest="alignment_radius_m")
        p.add_argument("--max-rounds", type=int, dest="max_rounds")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    overrides = {
        "out_dir": args.out_dir,
        "workers": args.workers,
        "snap_threshold_m": args.snap_threshold_m,
        "terminal_snap_threshold_m": args.terminal_snap_threshold_m,
        "weld_tolerance_m": args.weld_tolerance_m,
        "alignment_radius_m": args.alignment_radius_m,
        "max_rounds": args.max_rounds,
    }
    try:
        cfg = load_config(args.config, overrides)
        summary = _COMMANDS[args.command](cfg)
    except MissingStageInput as e:
        print(f"railtrace {args.command}: {e}", file=sys.stderr)
        return 3
    except (RailTraceError, OSError, ValueError) as e:
        print(f"railtrace {args.command}: {e}", file=sys.stderr)
        return 2
    if args.command == "build":
        print(summary["summary"])
    else:
        print(f"{args.command}: done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
