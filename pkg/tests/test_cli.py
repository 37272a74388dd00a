"""Tests for the command-line interface."""

import json

import pytest
from click.testing import CliRunner

from hijackvet import __version__
from hijackvet.cli import cli


@pytest.fixture
def runner():
    return CliRunner()


def input_args(mixed20):
    return [
        "--feed", str(mixed20 / "feed.txt"),
        "--irr", str(mixed20 / "ripe.db"),
        "--irr", str(mixed20 / "arin.db"),
        "--ground-truth", str(mixed20 / "ground_truth.txt"),
        "--scanner-fixture", str(mixed20 / "scanner.txt"),
        "--seed", "7",
    ]


def test_version(runner):
    result = runner.invoke(cli, ["version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_assess_structured(runner, mixed20):
    result = runner.invoke(cli, ["assess", *input_args(mixed20), "--self-detect", "--report", "structured"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["total_events"] == 20
    assert report["cumulative_legitimate_distinct"] == 15


def test_assess_table(runner, mixed20):
    result = runner.invoke(cli, ["assess", *input_args(mixed20)])
    assert result.exit_code == 0, result.output
    assert "SSL/TLS" in result.output
    assert "75.00%" in result.output


def test_assess_writes_files(runner, mixed20, tmp_path):
    report_path = tmp_path / "report.json"
    records_path = tmp_path / "assessments.jsonl"
    result = runner.invoke(
        cli,
        [
            "assess", *input_args(mixed20),
            "--alarms", str(mixed20 / "alarms.txt"),
            "-r", "structured",
            "-o", str(report_path),
            "--assessments-out", str(records_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(report_path.read_text())["rejected_alarms"] == 2
    assert len(records_path.read_text().splitlines()) == 3


def test_alarms_and_self_detect_conflict(runner, mixed20):
    result = runner.invoke(
        cli, ["assess", *input_args(mixed20), "--alarms", str(mixed20 / "alarms.txt"), "--self-detect"]
    )
    assert result.exit_code == 2
    assert "mutually exclusive" in result.output


def test_missing_input_exits_1(runner, mixed20, tmp_path):
    result = runner.invoke(cli, ["assess", "--feed", str(tmp_path / "missing.txt")])
    assert result.exit_code == 1
    assert "Error:" in result.output


def test_detect_json(runner, mixed20):
    result = runner.invoke(cli, ["detect", "--feed", str(mixed20 / "feed.txt"), "--json"])
    assert result.exit_code == 0, result.output
    events = [json.loads(line) for line in result.output.splitlines()]
    assert len(events) == 20
    assert events[0]["event_id"] == "65001:10.1.0.0/16>64601:10.1.0.0/24"


def test_detect_table(runner, mixed20):
    result = runner.invoke(cli, ["detect", "--feed", str(mixed20 / "feed.txt")])
    assert result.exit_code == 0
    assert "Strict subMOAS events (20)" in result.output


def test_diff_snapshots(runner, tmp_path):
    old = tmp_path / "old.txt"
    new = tmp_path / "new.txt"
    old.write_text("1 A 10.1.0.0/16 1 1 64500\n", encoding="utf-8")
    new.write_text("2 A 10.1.0.0/16 1 1 64500\n2 A 10.1.0.0/24 1 1 64666\n", encoding="utf-8")
    result = runner.invoke(cli, ["diff-snapshots", str(old), str(new), "--json"])
    assert result.exit_code == 0, result.output
    [event] = [json.loads(line) for line in result.output.splitlines()]
    assert event["attacker_subprefix"] == "10.1.0.0/24"


def test_serve_over_stdin(runner, mixed20):
    result = runner.invoke(
        cli,
        ["serve", "--feed", str(mixed20 / "feed.txt"), "--irr", str(mixed20 / "arin.db")],
        input="65007 10.7.0.0/16 64607 10.7.0.0/24 1438391220\n",
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["cumulative"] == "legitimate"


def test_scenario_run(runner, mixed20):
    result = runner.invoke(cli, ["scenario", "run", str(mixed20 / "scenario.yaml")])
    assert result.exit_code == 0, result.output
    assert "matches its oracle" in result.output


def test_scenario_run_failure(runner, tmp_path):
    (tmp_path / "feed.txt").write_text("1 A 10.1.0.0/16 1 1 64500\n", encoding="utf-8")
    manifest = tmp_path / "scenario.yaml"
    manifest.write_text("name: wrong\nfeed: feed.txt\noracle:\n  report:\n    total_events: 5\n", encoding="utf-8")
    result = runner.invoke(cli, ["scenario", "run", str(manifest)])
    assert result.exit_code == 1
    assert "total_events" in result.output


def test_irr_export(runner, mixed20, tmp_path):
    result = runner.invoke(
        cli, ["irr", "export", "--irr", str(mixed20 / "ripe.db"), "--out", str(tmp_path / "ripe")]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "ripe_nodes.csv").exists()
    assert (tmp_path / "ripe_edges.csv").exists()
    assert "2 references point to unknown objects" in result.output


def test_config_commands(runner):
    assert runner.invoke(cli, ["config", "set", "irr.max_depth", "3"]).exit_code == 0
    shown = runner.invoke(cli, ["config", "show"])
    assert "max_depth: 3" in shown.output
    assert runner.invoke(cli, ["config", "reset"]).exit_code == 0
    assert "max_depth: 4" in runner.invoke(cli, ["config", "show"]).output


def test_config_set_invalid_format(runner):
    result = runner.invoke(cli, ["config", "set", "report.format", "html"])
    assert result.exit_code == 1
