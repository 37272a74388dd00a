"""Tests for the BGP feed parser."""

import gzip
import sys
from types import SimpleNamespace

import pytest

from hijackvet.core.errors import FeedFormatError
from hijackvet.core.feed_parser import (
    BgpUpdate,
    FeedParser,
    UpdateKind,
    announce,
    read_feed,
    withdraw,
)
from hijackvet.core.routing_model import parse_prefix


class TestParseLine:
    def test_announcement(self):
        update = FeedParser().parse_line("1438387200 A 10.1.0.0/16 3333 3333 174 64500")
        assert update.kind is UpdateKind.ANNOUNCE
        assert update.prefix == parse_prefix("10.1.0.0/16")
        assert update.peer == 3333
        assert update.path == (3333, 174, 64500)
        assert update.origin == 64500

    def test_withdrawal(self):
        update = FeedParser().parse_line("1438387200 W 10.1.0.0/16 3333")
        assert update.kind is UpdateKind.WITHDRAW
        assert update.path == ()
        assert update.origin is None

    def test_comments_and_blank_lines(self):
        parser = FeedParser()
        assert parser.parse_line("   ") is None
        assert parser.parse_line("# header") is None

    def test_trailing_comment(self):
        update = FeedParser().parse_line("1 A 10.1.0.0/16 1 1 2 # seen at rrc00")
        assert update.path == (1, 2)

    @pytest.mark.parametrize(
        "line",
        [
            "1438387200 A 10.1.0.0/16",
            "later A 10.1.0.0/16 3333 64500",
            "1438387200 X 10.1.0.0/16 3333 64500",
            "1438387200 A 10.1.0.1/16 3333 64500",
            "1438387200 A 10.1.0.0/16 3333 {64500,64501}",
            "1438387200 A 10.1.0.0/16 3333",
            "1438387200 W 10.1.0.0/16 3333 64500",
        ],
    )
    def test_malformed(self, line):
        with pytest.raises(FeedFormatError):
            FeedParser().parse_line(line, 7)

    def test_line_number_in_message(self):
        with pytest.raises(FeedFormatError, match="line 7"):
            FeedParser().parse_line("1438387200 A 10.1.0.0/16", 7)


class TestRead:
    def test_skips_malformed_records_with_diagnostics(self):
        parser = FeedParser("test-feed")
        lines = [
            "# feed",
            "1 A 10.1.0.0/16 1 1 64500",
            "2 A 10.1.0.0/17 1 1 {64666}",
            "3 W 10.1.0.0/16 1",
            "garbage",
        ]
        updates = list(parser.read(lines))
        assert [u.timestamp for u in updates] == [1, 3]
        assert parser.error_count == 2
        assert [d.line_no for d in parser.diagnostics] == [3, 5]
        assert all(d.source == "test-feed" for d in parser.diagnostics)

    def test_read_feed_file(self, tmp_path):
        path = tmp_path / "updates.txt"
        path.write_text("1 A 10.1.0.0/16 1 1 64500\nbad line\n", encoding="utf-8")
        updates, diagnostics = read_feed(path)
        assert len(updates) == 1
        assert len(diagnostics) == 1

    def test_read_gzip_feed(self, tmp_path):
        path = tmp_path / "updates.txt.gz"
        with gzip.open(path, "wt", encoding="utf-8") as f:
            f.write("1 A 10.1.0.0/16 1 1 64500\n2 W 10.1.0.0/16 1\n")
        updates, diagnostics = read_feed(path)
        assert [u.kind for u in updates] == [UpdateKind.ANNOUNCE, UpdateKind.WITHDRAW]
        assert diagnostics == []

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_feed(tmp_path / "missing.txt")

    def test_mixed20_feed(self, mixed20):
        updates, diagnostics = read_feed(mixed20 / "feed.txt")
        assert len(updates) == 41
        assert diagnostics == []


class TestBgpUpdate:
    def test_to_line_parses_back(self):
        update = announce(1438387200, "10.1.0.0/16", 3333, [3333, 174, 174, 64500])
        assert FeedParser().parse_line(update.to_line()) == update

    def test_withdraw_to_line(self):
        assert withdraw(5, "10.1.0.0/16", 3333).to_line() == "5 W 10.1.0.0/16 3333"

    def test_announce_needs_path(self):
        with pytest.raises(FeedFormatError):
            BgpUpdate(1, UpdateKind.ANNOUNCE, parse_prefix("10.1.0.0/16"), 3333)

    def test_to_dict(self):
        data = announce(1, "10.1.0.0/16", 3333, [3333, 64500]).to_dict()
        assert data == {
            "timestamp": 1,
            "kind": "A",
            "prefix": "10.1.0.0/16",
            "peer": 3333,
            "path": [3333, 64500],
        }


def as_path(*segments, kind=2):
    return [{"type": {2: "AS_PATH"}, "value": [{"type": {kind: "seg"}, "value": list(s)} for s in segments]}]


def peer_index_table(*asns):
    return {
        "type": {13: "TABLE_DUMP_V2"},
        "subtype": {1: "PEER_INDEX_TABLE"},
        "timestamp": {1438387200: "2015-08-01 00:00:00"},
        "peer_entries": [{"peer_as": str(asn), "peer_ip": "192.0.2.1"} for asn in asns],
    }


def rib_record(prefix, length, *rib_entries):
    return {
        "type": {13: "TABLE_DUMP_V2"},
        "subtype": {2: "RIB_IPV4_UNICAST"},
        "timestamp": {1438387200: "2015-08-01 00:00:00"},
        "prefix": prefix,
        "length": length,
        "rib_entries": list(rib_entries),
    }


def bgp4mp_update(ts, peer_as, withdrawn=(), nlri=(), attributes=(), peer_ip="192.0.2.1", message_type=2):
    return {
        "type": {16: "BGP4MP"},
        "subtype": {4: "BGP4MP_MESSAGE_AS4"},
        "timestamp": {ts: "date"},
        "peer_as": str(peer_as),
        "peer_ip": peer_ip,
        "bgp_message": {
            "type": {message_type: "msg"},
            "withdrawn_routes": [{"prefix": p, "length": n} for p, n in withdrawn],
            "nlri": [{"prefix": p, "length": n} for p, n in nlri],
            "path_attributes": list(attributes),
        },
    }


@pytest.fixture
def mrt_records(monkeypatch):
    """Install a stand-in mrtparse module yielding the given records."""

    def install(*records):
        class Reader:
            def __init__(self, path):
                self.path = path

            def __iter__(self):
                return iter(SimpleNamespace(data=record) for record in records)

        monkeypatch.setitem(sys.modules, "mrtparse", SimpleNamespace(Reader=Reader))

    return install


class TestReadMrt:
    def test_rib_entries_use_peer_index(self, mrt_records):
        mrt_records(
            peer_index_table(3333, 174),
            rib_record(
                "10.1.0.0",
                16,
                {"peer_index": 1, "originated_time": {1438387000: "x"}, "path_attributes": as_path([174, 64500])},
                {"peer_index": 0, "originated_time": {1438386000: "x"}, "path_attributes": as_path([3333, 64500])},
            ),
        )
        parser = FeedParser("rib")
        updates = parser.read_mrt("rib.mrt")
        assert updates == [
            announce(1438387000, "10.1.0.0/16", 174, [174, 64500]),
            announce(1438386000, "10.1.0.0/16", 3333, [3333, 64500]),
        ]
        assert parser.diagnostics == []

    def test_unknown_peer_index_falls_back_to_first_hop(self, mrt_records):
        mrt_records(
            rib_record("10.1.0.0", 16, {"peer_index": 9, "originated_time": 0, "path_attributes": as_path([2914, 64500])}),
        )
        (update,) = FeedParser().read_mrt("rib.mrt")
        assert update.peer == 2914
        assert update.timestamp == 1438387200

    def test_bgp4mp_splits_withdrawals_and_announcements(self, mrt_records):
        mrt_records(
            bgp4mp_update(
                1438387300,
                3333,
                withdrawn=[("10.2.0.0", 16)],
                nlri=[("10.1.0.0", 17), ("10.1.128.0", 17)],
                attributes=as_path([3333, 64666]),
            )
        )
        updates = FeedParser().read_mrt("updates.mrt")
        assert updates == [
            withdraw(1438387300, "10.2.0.0/16", 3333),
            announce(1438387300, "10.1.0.0/17", 3333, [3333, 64666]),
            announce(1438387300, "10.1.128.0/17", 3333, [3333, 64666]),
        ]

    def test_skips_ipv6_peers_and_other_messages(self, mrt_records):
        mrt_records(
            bgp4mp_update(1, 3333, withdrawn=[("10.2.0.0", 16)], peer_ip="2001:db8::1"),
            bgp4mp_update(2, 3333, message_type=4),
            bgp4mp_update(3, 3333, withdrawn=[("10.2.0.0", 16)]),
        )
        parser = FeedParser()
        updates = parser.read_mrt("updates.mrt")
        assert [u.timestamp for u in updates] == [3]
        assert parser.diagnostics == []

    def test_as_set_segment_is_skipped_with_diagnostic(self, mrt_records):
        mrt_records(
            bgp4mp_update(1, 3333, nlri=[("10.1.0.0", 17)], attributes=as_path([3333], [64666, 64667], kind=1)),
            bgp4mp_update(2, 3333, nlri=[("10.1.0.0", 16)], attributes=as_path([3333, 64500])),
        )
        parser = FeedParser("updates")
        updates = parser.read_mrt("updates.mrt")
        assert [u.prefix for u in updates] == [parse_prefix("10.1.0.0/16")]
        (diagnostic,) = parser.diagnostics
        assert diagnostic.line_no == 1
        assert "AS_SET" in diagnostic.message

    def test_missing_as_path_is_skipped_with_diagnostic(self, mrt_records):
        mrt_records(bgp4mp_update(1, 3333, nlri=[("10.1.0.0", 17)]))
        parser = FeedParser()
        assert parser.read_mrt("updates.mrt") == []
        assert "without AS_PATH" in parser.diagnostics[0].message

    @pytest.mark.parametrize("name", ["rib.mrt", "updates.bz2", "updates.mrt.gz"])
    def test_read_feed_selects_mrt_by_name(self, mrt_records, tmp_path, name):
        mrt_records(bgp4mp_update(5, 3333, withdrawn=[("10.2.0.0", 16)]))
        path = tmp_path / name
        path.write_bytes(b"")
        updates, diagnostics = read_feed(path)
        assert updates == [withdraw(5, "10.2.0.0/16", 3333)]
        assert diagnostics == []
