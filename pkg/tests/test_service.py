"""Tests for the line-delimited alarm service."""

import io
import json

import pytest

from hijackvet.core.assessment import AssessmentService, AssessmentSettings, BatchInputs, prepare_stores
from hijackvet.core.service import handle_line, parse_address, serve_stream


@pytest.fixture
def service(mixed20):
    stores, _ = prepare_stores(
        BatchInputs(feed=mixed20 / "feed.txt", irr=[mixed20 / "ripe.db", mixed20 / "arin.db"])
    )
    with AssessmentService(stores) as running:
        yield running


def test_handle_alarm_line(service):
    response = handle_line(service, "65005 10.5.0.0/16 64605 10.5.0.0/24 1438391000 bgpmon\n")
    assert response["alarm_ref"] == "65005:10.5.0.0/16>64605:10.5.0.0/24"
    assert response["cumulative"] == "legitimate"
    assert response["irr"]["reason"] == "business relationship"


def test_handle_rejected_line(service):
    response = handle_line(service, "65005 10.5.0.0/16 64605 10.5.0.0/16 1")
    assert response == {"error": "equal prefixes", "record": "65005 10.5.0.0/16 64605 10.5.0.0/16 1"}


def test_blank_and_comment_lines(service):
    assert handle_line(service, "\n") is None
    assert handle_line(service, "# heartbeat") is None


def test_serve_stream(service):
    instream = io.StringIO(
        "# alarms\n"
        "65009 10.9.0.0/16 64609 10.9.0.0/24 1438391340\n"
        "\n"
        '{"victim_as": 65099, "victim_prefix": "10.99.0.0/16", "attacker_as": 64699,'
        ' "attacker_subprefix": "10.99.0.0/24", "reported_at": 1438392200}\n'
        "garbage\n"
    )
    outstream = io.StringIO()
    assert serve_stream(service, instream, outstream) == 3
    responses = [json.loads(line) for line in outstream.getvalue().splitlines()]
    assert responses[0]["topology"]["status"] == "legitimate"
    assert responses[1]["cumulative"] == "not_covered"
    assert responses[2]["error"] == "expected 5 or 6 fields, got 1"


ALARM_65005 = "65005 10.5.0.0/16 64605 10.5.0.0/24 1438391000 bgpmon"


def test_irr_snapshot_loaded_while_serving(mixed20):
    stores, _ = prepare_stores(BatchInputs(feed=mixed20 / "feed.txt"))
    with AssessmentService(stores) as running:
        assert handle_line(running, ALARM_65005)["irr"]["status"] == "not_covered"
        response = handle_line(running, f"!irr 2015-08-01 {mixed20 / 'ripe.db'} {mixed20 / 'arin.db'}")
        assert response == {"snapshot": "2015-08-01", "registries": ["arin", "ripe"], "tags": ["2015-08-01"]}
        assert handle_line(running, ALARM_65005)["irr"]["reason"] == "business relationship"


def test_pinned_irr_tag_ignores_newer_snapshots(mixed20, tmp_path):
    empty = tmp_path / "empty.db"
    empty.write_text("", encoding="utf-8")
    stores, _ = prepare_stores(
        BatchInputs(feed=mixed20 / "feed.txt", irr=[mixed20 / "ripe.db", mixed20 / "arin.db"], irr_tag="2015-08-01")
    )
    with AssessmentService(stores, AssessmentSettings(irr_tag="2015-08-01")) as pinned:
        assert handle_line(pinned, f"!irr 2015-08-02 {empty}")["tags"] == ["2015-08-01", "2015-08-02"]
        assert handle_line(pinned, ALARM_65005)["irr"]["reason"] == "business relationship"
    with AssessmentService(stores) as latest:
        assert handle_line(latest, ALARM_65005)["irr"]["status"] != "legitimate"


def test_irr_command_errors(service, tmp_path):
    assert handle_line(service, "!irr 2015-08-02")["error"] == "expected !irr <tag> <path>..."
    missing = handle_line(service, f"!irr 2015-08-02 {tmp_path / 'gone.db'}")
    assert "IRR snapshot not found" in missing["error"]


@pytest.mark.parametrize(
    "text, expected",
    [("127.0.0.1:9000", ("127.0.0.1", 9000)), (":9000", ("127.0.0.1", 9000)), ("0.0.0.0:1", ("0.0.0.0", 1))],
)
def test_parse_address(text, expected):
    assert parse_address(text) == expected


def test_parse_address_rejects_missing_port():
    with pytest.raises(ValueError):
        parse_address("localhost")
