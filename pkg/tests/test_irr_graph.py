"""Tests for RPSL parsing and the IRR relation graph."""

import csv
import gzip
import random
from collections import deque

import pytest

from hijackvet.core.irr_graph import (
    IrrObject,
    ObjectKind,
    ObjectRef,
    Relation,
    SnapshotStore,
    build_graph,
    export_csv,
    irr_filter,
    load_graph,
    parse_rpsl,
    read_snapshot,
    registry_breakdown,
)
from hijackvet.core.rib_engine import EventKey
from hijackvet.core.routing_model import Asn, parse_prefix
from hijackvet.core.verdicts import VerdictStatus

ALICE = 64500
MALLORY = 64666

SNAPSHOT = """\
mntner:     MNT-ALICE

aut-num:    AS64500
as-name:    ALICE-NET
mnt-by:     MNT-ALICE

aut-num:    AS64666
as-name:    MALLORY-NET
import:     from AS64500 accept ANY
import:     from AS4200000000
+           accept ANY

inetnum:    10.0.0.0 - 10.255.255.255
mnt-by:     MNT-ALICE

inetnum:    10.1.0.0 - 10.1.255.255
netname:    ALICE-BLOCK

route:      10.1.2.0/24
origin:     AS64666 # announced for a customer

"""


def autnum(asn, registry="irr", mnt=(), org=(), imports=()):
    attrs = [("aut-num", f"AS{asn}")]
    attrs += [("mnt-by", m) for m in mnt]
    attrs += [("org", o) for o in org]
    attrs += [("import", f"from AS{i} accept ANY") for i in imports]
    return IrrObject(ObjectKind.AUT_NUM, f"AS{asn}", tuple(attrs), registry)


def mntner(name, registry="irr"):
    return IrrObject(ObjectKind.MNTNER, name, (("mntner", name),), registry)


def organisation(name, registry="irr"):
    return IrrObject(ObjectKind.ORGANISATION, name, (("organisation", name),), registry)


def route(prefix, asn, registry="irr", mnt=()):
    attrs = [("route", prefix), ("origin", f"AS{asn}")] + [("mnt-by", m) for m in mnt]
    return IrrObject(ObjectKind.ROUTE, f"{prefix} AS{asn}", tuple(attrs), registry)


def inetnum(first, last, registry="irr", mnt=()):
    attrs = [("inetnum", f"{first} - {last}")] + [("mnt-by", m) for m in mnt]
    return IrrObject(ObjectKind.INETNUM, f"{first} - {last}", tuple(attrs), registry)


def event(v, q, a, p):
    return EventKey(Asn(v), parse_prefix(q), Asn(a), parse_prefix(p))


def autnum_ref(asn, registry="irr"):
    return ObjectRef(registry, ObjectKind.AUT_NUM, f"AS{asn}")


class TestParseRpsl:
    def test_objects_and_keys(self):
        result = parse_rpsl(SNAPSHOT, registry="ripe")
        keys = [(obj.kind, obj.key) for obj in result.objects]
        assert keys == [
            (ObjectKind.MNTNER, "MNT-ALICE"),
            (ObjectKind.AUT_NUM, "AS64500"),
            (ObjectKind.AUT_NUM, "AS64666"),
            (ObjectKind.INETNUM, "10.0.0.0 - 10.255.255.255"),
            (ObjectKind.INETNUM, "10.1.0.0 - 10.1.255.255"),
            (ObjectKind.ROUTE, "10.1.2.0/24 AS64666"),
        ]
        assert all(obj.source_registry == "ripe" for obj in result.objects)
        assert result.diagnostics == []

    def test_import_intent_with_continuation(self):
        result = parse_rpsl(SNAPSHOT)
        mallory = result.objects[2]
        assert mallory.import_targets() == [64500, 4200000000]

    def test_route_origin_strips_comment(self):
        result = parse_rpsl(SNAPSHOT)
        assert result.objects[-1].asn == MALLORY
        assert result.objects[-1].prefix == parse_prefix("10.1.2.0/24")

    def test_inetnum_in_cidr_notation(self):
        result = parse_rpsl("inetnum: 192.0.2.0/24\n\n")
        assert result.objects[0].key == "192.0.2.0 - 192.0.2.255"

    def test_comments_only(self):
        result = parse_rpsl("% RIPE database dump\n# nothing here\n\n")
        assert result.objects == []
        assert result.diagnostics == []

    def test_empty_snapshot(self):
        assert parse_rpsl("").objects == []

    def test_unterminated_object_dropped(self):
        result = parse_rpsl("mntner: MNT-A\n\naut-num: AS64500\nmnt-by: MNT-A")
        assert [obj.key for obj in result.objects] == ["MNT-A"]
        assert len(result.diagnostics) == 1
        assert "unterminated" in result.diagnostics[0].message
        assert result.diagnostics[0].line_no == 3

    def test_unsupported_classes_counted(self):
        result = parse_rpsl("person: Jane Doe\nnic-hdl: JD1\n\nrole: NOC\n\nmntner: MNT-A\n\n")
        assert result.unsupported == {"person": 1, "role": 1}
        assert result.skipped == 2
        assert len(result.objects) == 1

    def test_malformed_objects_become_diagnostics(self):
        result = parse_rpsl(
            "aut-num: ASX\n\nroute: 10.0.0.0/8\n\ninetnum: 10.0.0.9 - 10.0.0.1\n\nmntner: MNT-OK\n\n"
        )
        assert [obj.key for obj in result.objects] == ["MNT-OK"]
        assert len(result.diagnostics) == 3

    def test_bytes_input(self):
        result = parse_rpsl(b"mntner: mnt-lower\n\n")
        assert result.objects[0].key == "MNT-LOWER"

    def test_registry_label_from_file_name(self, tmp_path):
        path = tmp_path / "arin.db.gz"
        with gzip.open(path, "wt", encoding="utf-8") as f:
            f.write("mntner: MNT-A\n\n")
        result = read_snapshot(path)
        assert result.objects[0].source_registry == "arin"

    def test_missing_snapshot(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_snapshot(tmp_path / "ripe.db")


class TestBuildGraph:
    def test_edges_from_snapshot(self):
        g = build_graph(parse_rpsl(SNAPSHOT, registry="ripe").objects)
        relations = sorted((str(e.source), e.relation.value, str(e.target)) for e in g.edges())
        assert relations == [
            ("ripe:aut-num:AS64500", "maintained_by", "ripe:mntner:MNT-ALICE"),
            ("ripe:aut-num:AS64666", "import", "ripe:aut-num:AS64500"),
            ("ripe:inetnum:10.0.0.0 - 10.255.255.255", "maintained_by", "ripe:mntner:MNT-ALICE"),
            ("ripe:route:10.1.2.0/24 AS64666", "maps_to", "ripe:inetnum:10.1.0.0 - 10.1.255.255"),
            ("ripe:route:10.1.2.0/24 AS64666", "origin", "ripe:aut-num:AS64666"),
        ]

    def test_orphaned_import(self):
        g = build_graph(parse_rpsl(SNAPSHOT).objects)
        [orphan] = g.orphans
        assert orphan.relation is Relation.IMPORT
        assert orphan.orphaned
        assert orphan.unresolved == "AS4200000000"
        assert orphan.to_dict()["to"] == "AS4200000000"

    def test_most_specific_inetnum(self):
        g = build_graph(parse_rpsl(SNAPSHOT).objects)
        ref = g.most_specific_inetnum(parse_prefix("10.1.2.0/24"), "irr")
        assert ref.key == "10.1.0.0 - 10.1.255.255"
        assert len(g.containing_inetnums(parse_prefix("10.1.2.0/24"), "irr")) == 2
        assert g.most_specific_inetnum(parse_prefix("192.0.2.0/24"), "irr") is None

    def test_non_aligned_inetnum_range(self):
        g = build_graph([inetnum("10.0.0.0", "10.0.2.255")])
        assert g.most_specific_inetnum(parse_prefix("10.0.2.0/24"), "irr") is not None
        assert g.most_specific_inetnum(parse_prefix("10.0.3.0/24"), "irr") is None

    def test_duplicate_objects_keep_later(self):
        first = autnum(ALICE, mnt=["MNT-A"])
        second = autnum(ALICE, mnt=["MNT-B"])
        g = build_graph([mntner("MNT-A"), mntner("MNT-B"), first, second])
        assert g.obj(autnum_ref(ALICE)) is second
        assert any("duplicate" in d.message for d in g.diagnostics)
        [edge] = [e for e in g.edges() if e.source == autnum_ref(ALICE)]
        assert edge.target.key == "MNT-B"

    def test_references_stay_within_registry(self):
        g = build_graph([mntner("MNT-X", "ripe"), autnum(ALICE, "arin", mnt=["MNT-X"])])
        assert g.edges() == []

    def test_empty_graph(self):
        g = build_graph([])
        assert len(g) == 0
        assert g.registries == []
        assert g.check_business_relation(Asn(ALICE), Asn(MALLORY)) is None
        assert g.check_resource_holdership(parse_prefix("10.0.0.0/8"), Asn(ALICE)) is None

    def test_graph_is_frozen(self):
        g = build_graph([mntner("MNT-A")])
        with pytest.raises(Exception):
            g.graph.add_node("extra")


class TestBusinessRelation:
    def test_shared_maintainer(self):
        g = build_graph([mntner("MNT-S"), autnum(ALICE, mnt=["MNT-S"]), autnum(MALLORY, mnt=["MNT-S"])])
        path = g.check_business_relation(Asn(MALLORY), Asn(ALICE))
        assert len(path) == 2
        assert path.relations == [Relation.MAINTAINED_BY, Relation.MAINTAINED_BY]
        assert path.start == autnum_ref(MALLORY)
        assert path.end == autnum_ref(ALICE)
        assert g.replay(path)

    def test_shared_organisation(self):
        g = build_graph([organisation("ORG-S"), autnum(ALICE, org=["ORG-S"]), autnum(MALLORY, org=["ORG-S"])])
        assert g.check_business_relation(Asn(MALLORY), Asn(ALICE)).relations == [Relation.ORG, Relation.ORG]

    def test_import_either_direction(self):
        g = build_graph([autnum(ALICE), autnum(MALLORY, imports=[ALICE])])
        assert len(g.check_business_relation(Asn(MALLORY), Asn(ALICE))) == 1
        assert len(g.check_business_relation(Asn(ALICE), Asn(MALLORY))) == 1

    def test_same_as(self):
        g = build_graph([autnum(ALICE)])
        path = g.check_business_relation(Asn(ALICE), Asn(ALICE))
        assert len(path) == 0
        assert g.check_business_relation(Asn(MALLORY), Asn(MALLORY)) is None

    def test_disconnected(self):
        g = build_graph([mntner("MNT-A"), mntner("MNT-B"), autnum(ALICE, mnt=["MNT-A"]), autnum(MALLORY, mnt=["MNT-B"])])
        assert g.check_business_relation(Asn(MALLORY), Asn(ALICE)) is None

    def test_depth_limit(self):
        g = build_graph([mntner("MNT-S"), autnum(ALICE, mnt=["MNT-S"]), autnum(MALLORY, mnt=["MNT-S"])])
        assert g.check_business_relation(Asn(MALLORY), Asn(ALICE), max_depth=1) is None
        with pytest.raises(ValueError):
            g.check_business_relation(Asn(MALLORY), Asn(ALICE), max_depth=0)

    def test_orphaned_import_does_not_connect(self):
        g = build_graph([autnum(MALLORY, imports=[ALICE])])
        assert g.check_business_relation(Asn(MALLORY), Asn(ALICE)) is None


class TestResourceHoldership:
    def test_route_object_alone(self):
        g = build_graph([route("10.1.0.0/24", MALLORY)])
        path = g.check_resource_holdership(parse_prefix("10.1.0.0/24"), Asn(MALLORY))
        assert len(path) == 1
        assert path.edges[0].orphaned
        assert path.relations == [Relation.ORIGIN]

    def test_route_for_other_origin_does_not_qualify(self):
        g = build_graph([route("10.1.0.0/24", ALICE), autnum(ALICE)])
        assert g.check_resource_holdership(parse_prefix("10.1.0.0/24"), Asn(MALLORY)) is None

    def test_inetnum_maintainer(self):
        g = build_graph(
            [
                mntner("MNT-H"),
                inetnum("10.1.0.0", "10.1.255.255", mnt=["MNT-H"]),
                autnum(MALLORY, mnt=["MNT-H"]),
            ]
        )
        path = g.check_resource_holdership(parse_prefix("10.1.0.0/24"), Asn(MALLORY))
        assert path.start.kind is ObjectKind.INETNUM
        assert len(path) == 2
        assert g.replay(path)

    def test_only_most_specific_inetnum_anchors(self):
        g = build_graph(
            [
                mntner("MNT-H"),
                inetnum("10.0.0.0", "10.255.255.255", mnt=["MNT-H"]),
                inetnum("10.1.0.0", "10.1.255.255"),
                autnum(MALLORY, mnt=["MNT-H"]),
            ]
        )
        assert g.check_resource_holdership(parse_prefix("10.1.0.0/24"), Asn(MALLORY)) is None
        assert g.check_resource_holdership(parse_prefix("10.2.0.0/24"), Asn(MALLORY)) is not None

    def test_route_to_other_origin_through_relation(self):
        g = build_graph(
            [
                mntner("MNT-S"),
                route("10.1.0.0/24", ALICE),
                autnum(ALICE, mnt=["MNT-S"]),
                autnum(MALLORY, mnt=["MNT-S"]),
            ]
        )
        path = g.check_resource_holdership(parse_prefix("10.1.0.0/24"), Asn(MALLORY))
        assert path.relations == [Relation.ORIGIN, Relation.MAINTAINED_BY, Relation.MAINTAINED_BY]

    def test_replay_rejects_foreign_edges(self):
        g = build_graph([mntner("MNT-S"), autnum(ALICE, mnt=["MNT-S"]), autnum(MALLORY, mnt=["MNT-S"])])
        path = g.check_business_relation(Asn(MALLORY), Asn(ALICE))
        other = build_graph([autnum(ALICE), autnum(MALLORY)])
        assert not other.replay(path)


class TestIrrFilter:
    def test_no_graph(self):
        verdict = irr_filter(None, event(ALICE, "10.1.0.0/16", MALLORY, "10.1.0.0/24"))
        assert verdict.status is VerdictStatus.NOT_COVERED

    def test_business_legitimizes(self):
        g = build_graph([autnum(ALICE), autnum(MALLORY, imports=[ALICE])])
        verdict = irr_filter(g, event(ALICE, "10.1.0.0/16", MALLORY, "10.1.0.0/24"))
        assert verdict.is_legitimate
        assert verdict.reason == "business relationship"
        assert verdict.evidence[0]["edges"][0]["relation"] == "import"

    def test_holdership_legitimizes(self):
        g = build_graph([route("10.1.0.0/24", MALLORY)])
        verdict = irr_filter(g, event(ALICE, "10.1.0.0/16", MALLORY, "10.1.0.0/24"))
        assert verdict.reason == "resource holdership"

    def test_registered_but_unrelated(self):
        g = build_graph([autnum(ALICE), autnum(MALLORY)])
        verdict = irr_filter(g, event(ALICE, "10.1.0.0/16", MALLORY, "10.1.0.0/24"))
        assert verdict.status is VerdictStatus.INCONCLUSIVE

    def test_nothing_registered(self):
        g = build_graph([autnum(65001), route("192.0.2.0/24", 65001)])
        verdict = irr_filter(g, event(ALICE, "10.1.0.0/16", MALLORY, "10.1.0.0/24"))
        assert verdict.status is VerdictStatus.NOT_COVERED

    def test_registry_breakdown(self):
        g = build_graph(
            [
                route("10.1.0.0/24", MALLORY, registry="ripe"),
                autnum(ALICE, registry="arin"),
                autnum(MALLORY, registry="arin", imports=[ALICE]),
                mntner("MNT-UNRELATED", registry="apnic"),
            ]
        )
        outcomes = registry_breakdown(g, event(ALICE, "10.1.0.0/16", MALLORY, "10.1.0.0/24"))
        assert set(outcomes) == {"apnic", "arin", "ripe"}
        assert outcomes["ripe"].holdership and not outcomes["ripe"].business
        assert outcomes["arin"].business and not outcomes["arin"].holdership
        assert not outcomes["apnic"].covered
        assert not outcomes["apnic"].legitimate

    def test_mixed20_snapshots(self, mixed20):
        g = load_graph([mixed20 / "ripe.db", mixed20 / "arin.db"], "2015-08-01")
        assert g.registries == ["arin", "ripe"]
        assert g.tag == "2015-08-01"
        assert irr_filter(g, event(65007, "10.7.0.0/16", 64607, "10.7.0.0/24")).is_legitimate
        assert irr_filter(g, event(65004, "10.4.0.0/16", 64604, "10.4.0.0/24")).is_legitimate
        verdict = irr_filter(g, event(65018, "10.18.0.0/16", 64618, "10.18.0.0/24"))
        assert verdict.status is VerdictStatus.INCONCLUSIVE
        assert len(g.orphans) == 2


def random_objects(rng, n_as=10, n_mnt=5, n_org=3):
    objects = [mntner(f"MNT-{i}") for i in range(n_mnt)]
    objects += [organisation(f"ORG-{i}") for i in range(n_org)]
    for asn in range(1, n_as + 1):
        mnt = [f"MNT-{i}" for i in range(n_mnt) if rng.random() < 0.15]
        org = [f"ORG-{i}" for i in range(n_org) if rng.random() < 0.1]
        imports = [i for i in range(1, n_as + 6) if i != asn and rng.random() < 0.05]
        objects.append(autnum(asn, mnt=mnt, org=org, imports=imports))
    return objects


def bfs_distance(g, start, goal):
    """Hop count between two nodes over resolved edges, ignoring direction."""
    adjacency = {}
    for edge in g.edges():
        adjacency.setdefault(edge.source, set()).add(edge.target)
        adjacency.setdefault(edge.target, set()).add(edge.source)
    seen = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            return seen[node]
        for neighbour in adjacency.get(node, ()):
            if neighbour not in seen:
                seen[neighbour] = seen[node] + 1
                queue.append(neighbour)
    return None


class TestRandomGraphs:
    def test_business_search_matches_bfs(self):
        rng = random.Random(1438387200)
        for _ in range(200):
            g = build_graph(random_objects(rng))
            as1, as2 = rng.sample(range(1, 11), 2)
            depth = rng.randint(1, 6)
            path = g.check_business_relation(Asn(as1), Asn(as2), max_depth=depth)
            distance = bfs_distance(g, autnum_ref(as1), autnum_ref(as2))
            if distance is None or distance > depth:
                assert path is None
            else:
                assert path is not None
                assert len(path) == distance
                assert g.replay(path)

    def test_adding_objects_never_removes_legitimacy(self):
        rng = random.Random(99)
        for _ in range(100):
            objects = random_objects(rng)
            before = build_graph(objects)
            extra = [mntner(f"MNT-NEW{rng.randint(0, 9)}")]
            extra.append(autnum(rng.randint(11, 15), mnt=[f"MNT-{rng.randint(0, 4)}", extra[0].key]))
            after = build_graph(objects + extra)
            for as1, as2 in [(1, 2), (3, 4), (5, 9)]:
                old = before.check_business_relation(Asn(as1), Asn(as2))
                new = after.check_business_relation(Asn(as1), Asn(as2))
                if old is not None:
                    assert new is not None
                    assert len(new) <= len(old)

    def test_unrelated_objects_change_nothing(self):
        rng = random.Random(5)
        for _ in range(100):
            objects = random_objects(rng)
            unrelated = [mntner("MNT-ELSEWHERE"), autnum(90000 + rng.randint(0, 99), mnt=["MNT-ELSEWHERE"])]
            before = build_graph(objects)
            after = build_graph(objects + unrelated)
            as1, as2 = rng.sample(range(1, 11), 2)
            old = before.check_business_relation(Asn(as1), Asn(as2))
            new = after.check_business_relation(Asn(as1), Asn(as2))
            assert (old and old.to_dict()) == (new and new.to_dict())


class TestExport:
    def test_csv_pair(self, tmp_path):
        g = build_graph(parse_rpsl(SNAPSHOT, registry="ripe").objects)
        nodes, edges = export_csv(g, tmp_path / "ripe")
        assert nodes.name == "ripe_nodes.csv"
        assert edges.name == "ripe_edges.csv"

        with open(nodes, newline="", encoding="utf-8") as f:
            node_rows = list(csv.DictReader(f))
        with open(edges, newline="", encoding="utf-8") as f:
            edge_rows = list(csv.DictReader(f))

        assert len(node_rows) == 6
        assert len(edge_rows) == 6
        orphaned = [row for row in edge_rows if row["orphaned"] == "1"]
        assert orphaned == [
            {"source": "ripe:aut-num:AS64666", "target": "AS4200000000", "relation": "import", "orphaned": "1"}
        ]


class TestSnapshotStore:
    def test_publish_and_swap(self):
        store = SnapshotStore()
        assert store.get() is None
        first = build_graph([autnum(ALICE)], tag="2015-08-01")
        second = build_graph([autnum(MALLORY)], tag="2015-08-02")
        store.publish(first)
        store.publish(second)
        assert store.get() is second
        assert store.get("2015-08-01") is first
        assert store.tags() == ["2015-08-01", "2015-08-02"]

    def test_untagged_graph_rejected(self):
        with pytest.raises(ValueError):
            SnapshotStore().publish(build_graph([]))

    def test_load(self, mixed20):
        store = SnapshotStore()
        g = store.load("2015-08-01", [mixed20 / "arin.db"])
        assert store.get() is g
        assert g.registries == ["arin"]
