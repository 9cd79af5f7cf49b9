"""Pipeline stages end to end on the bundled fixture."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from railtrace.cli import load_config, main
from railtrace.errors import InvalidConfig

FIXTURES = Path(__file__).parent / "fixtures" / "pipeline"
CONFIG = str(FIXTURES / "config.toml")
BRANCHED_CONFIG = str(FIXTURES / "branched_chain.toml")

ALL_STAGES = ["build", "snap", "confirm", "infer", "validate", "stats"]


def run(stage: str, out_dir, config: str = CONFIG, *extra) -> int:
    return main([stage, "--config", config, "--out-dir", str(out_dir), *extra])


def run_pipeline(out_dir, config: str = CONFIG) -> None:
    for stage in ALL_STAGES:
        assert run(stage, out_dir, config) == 0, f"stage {stage} failed"


# -- config -------------------------------------------------------------------


def test_config_paths_resolve_against_config_dir():
    cfg = load_config(CONFIG)
    assert cfg.network == FIXTURES / "network.geojson"
    assert cfg.out_dir == FIXTURES / "out"
    assert cfg.snap_threshold_m == 97.536


def test_config_rejects_unknown_key(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('network = "x"\nwat = 3\n')
    with pytest.raises(InvalidConfig):
        load_config(bad)


def test_config_rejects_nested_table(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[network]\nx = 1\n")
    with pytest.raises(InvalidConfig):
        load_config(bad)


def test_config_missing_keys(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('network = "x"\n')
    with pytest.raises(InvalidConfig):
        load_config(bad)


def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("RAILTRACE_OUT", str(tmp_path / "env_out"))
    cfg = load_config(CONFIG)
    assert cfg.out_dir == tmp_path / "env_out"


# -- single stages ------------------------------------------------------------


def test_build_summary_counts_branched_chain(tmp_path, capsys):
    assert run("build", tmp_path, BRANCHED_CONFIG) == 0
    assert "6 links, 7 nodes" in capsys.readouterr().out
    summary = json.loads((tmp_path / "build_summary.json").read_text())
    assert summary["links"] == 6
    assert summary["nodes"] == 7
    assert summary["summary"] == "6 links, 7 nodes"
    assert (tmp_path / "network.geojson").exists()


def test_build_summary_pipeline_network(tmp_path):
    assert run("build", tmp_path) == 0
    summary = json.loads((tmp_path / "build_summary.json").read_text())
    assert summary["links"] == 11
    assert summary["mainline_links"] == 9


def test_missing_input_file_is_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(
        'network = "nope.geojson"\n'
        f'observations = "{FIXTURES}/observations.csv"\n'
        f'incidents = "{FIXTURES}/incidents.csv"\n'
        f'od_matrix = "{FIXTURES}/od_matrix.csv"\n'
        f'padd_regions = "{FIXTURES}/padd_regions.geojson"\n'
        f'metro_regions = "{FIXTURES}/metro_regions.geojson"\n'
        'out_dir = "out"\n'
    )
    assert main(["build", "--config", str(bad), "--out-dir", str(tmp_path / "out")]) == 2
    assert "nope.geojson" in capsys.readouterr().err


def test_stage_before_dependency_is_exit_3(tmp_path, capsys):
    assert run("build", tmp_path) == 0
    assert run("infer", tmp_path) == 3
    err = capsys.readouterr().err
    assert "snap" in err or "confirm" in err


def test_infer_without_build_is_exit_3(tmp_path):
    assert run("infer", tmp_path) == 3


def test_snap_threshold_flag_overrides_config(tmp_path):
    assert run("build", tmp_path) == 0
    assert run("snap", tmp_path, CONFIG, "--snap-threshold-m", "5") == 0
    summary = json.loads((tmp_path / "snap_summary.json").read_text())
    # only p2 lies exactly on a line; p1/p3 are 11 m and 44 m off
    assert summary["rejected"] == ["p1", "p3", "p4"]
    assert summary["snap_threshold_m"] == 5.0


# -- full pipeline ------------------------------------------------------------


def test_pipeline_end_to_end(tmp_path):
    run_pipeline(tmp_path)
    for name in [
        "network.geojson",
        "build_summary.json",
        "snap_results.csv",
        "snap_summary.json",
        "confirmed.json",
        "inferred.geojson",
        "merge_audit.json",
        "validation_report.json",
        "missed_incidents.csv",
        "proximity_stats.json",
    ]:
        assert (tmp_path / name).exists(), name

    snap_summary = json.loads((tmp_path / "snap_summary.json").read_text())
    assert snap_summary["snapped"] == 4
    assert snap_summary["rejected"] == ["p4"]

    confirmed = json.loads((tmp_path / "confirmed.json").read_text())
    assert set(confirmed["links"]) == {"w1", "w2", "w3", "e1", "e2", "e3"}
    assert [c["component_id"] for c in confirmed["components"]] == ["e1", "w1"]

    inferred = json.loads((tmp_path / "inferred.geojson").read_text())
    status = {f["properties"]["id"]: f["properties"]["status"] for f in inferred["features"]}
    assert status == {
        "w1": "confirmed",
        "w2": "confirmed",
        "w3": "confirmed",
        "e1": "confirmed",
        "e2": "confirmed",
        "e3": "confirmed",
        "g1": "inferred",
        "g2": "inferred",
    }

    audit = json.loads((tmp_path / "merge_audit.json").read_text())
    assert len(audit["accepted_gaps"]) == 2  # terminal absorbed + the gap
    assert audit["remaining_components"] == ["e1"]
    paths = sorted(tuple(g["path"]) for g in audit["accepted_gaps"])
    assert paths == [(), ("g1", "g2")]

    report = json.loads((tmp_path / "validation_report.json").read_text())
    assert report["incident_alignment"]["total_incidents"] == 5
    assert report["incident_alignment"]["aligned"] == 3
    assert report["incident_alignment"]["missed"] == [{"city": "Fargo", "state": "ND", "count": 2}]
    assert report["metro_coverage"]["metros_traversed"] == 2
    assert report["metro_coverage"]["traversed_ids"] == ["metro-east", "metro-west"]

    stats = json.loads((tmp_path / "proximity_stats.json").read_text())
    assert stats["photos"] == 4
    assert stats["all_lines"] == [0.75, 0.75]  # p4 is far from everything
    assert stats["main_lines"] == [0.75, 0.75]


def test_rerun_is_byte_identical(tmp_path):
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    run_pipeline(out1)
    run_pipeline(out2)
    names = sorted(p.name for p in out1.iterdir())
    assert names == sorted(p.name for p in out2.iterdir())
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_downstream_stages_reproduce_after_deletion(tmp_path):
    run_pipeline(tmp_path)
    before = {
        name: (tmp_path / name).read_bytes()
        for name in ["inferred.geojson", "merge_audit.json", "validation_report.json"]
    }
    for name in before:
        (tmp_path / name).unlink()
    assert run("infer", tmp_path) == 0
    assert run("validate", tmp_path) == 0
    for name, blob in before.items():
        assert (tmp_path / name).read_bytes() == blob, name


def test_no_temp_files_left_behind(tmp_path):
    run_pipeline(tmp_path)
    leftovers = [p.name for p in tmp_path.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []


def test_env_out_dir_used_by_stage(tmp_path, monkeypatch):
    monkeypatch.setenv("RAILTRACE_OUT", str(tmp_path / "enviro"))
    assert main(["build", "--config", CONFIG]) == 0
    assert (tmp_path / "enviro" / "build_summary.json").exists()
