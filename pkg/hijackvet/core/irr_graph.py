"""IRR snapshot parsing and the legitimizing-relation graph.

RPSL objects (mntner, organisation, aut-num, inetnum, route) become nodes of
a networkx MultiDiGraph; maintained_by, org, origin, import and maps_to
relations become typed edges. Two queries are answered over it: whether two
ASes share a business relationship, and whether an AS holds a prefix.
"""

import csv
import gzip
import ipaddress
import logging
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import networkx as nx
import pytricia

from hijackvet.core.errors import AsPathError, Diagnostic, PrefixError, RpslError
from hijackvet.core.routing_model import Asn, Prefix, parse_prefix
from hijackvet.core.verdicts import FilterVerdict

log = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 4

IMPORT_FROM = re.compile(r"\bfrom\s+AS(\d+)\b", re.IGNORECASE)
INETNUM_RANGE = re.compile(r"^\s*(\d{1,3}(?:\.\d{1,3}){3})\s*-\s*(\d{1,3}(?:\.\d{1,3}){3})\s*$")


class ObjectKind(str, Enum):
    MNTNER = "mntner"
    ORGANISATION = "organisation"
    AUT_NUM = "aut-num"
    INETNUM = "inetnum"
    ROUTE = "route"


class Relation(str, Enum):
    MAINTAINED_BY = "maintained_by"
    ORG = "org"
    ORIGIN = "origin"
    IMPORT = "import"
    MAPS_TO = "maps_to"


# (source kinds, target kind) per relation; None means any kind
RELATION_TYPES = {
    Relation.MAINTAINED_BY: (None, ObjectKind.MNTNER),
    Relation.ORG: (None, ObjectKind.ORGANISATION),
    Relation.ORIGIN: ((ObjectKind.ROUTE,), ObjectKind.AUT_NUM),
    Relation.IMPORT: ((ObjectKind.AUT_NUM,), ObjectKind.AUT_NUM),
    Relation.MAPS_TO: ((ObjectKind.ROUTE,), ObjectKind.INETNUM),
}


class ObjectRef(NamedTuple):
    registry: str
    kind: ObjectKind
    key: str

    def __str__(self) -> str:
        return f"{self.registry}:{self.kind.value}:{self.key}"


@dataclass(frozen=True)
class IrrObject:
    """One RPSL object of a supported class."""

    kind: ObjectKind
    key: str
    attributes: Tuple[Tuple[str, str], ...]
    source_registry: str
    line_no: int = 0

    @property
    def ref(self) -> ObjectRef:
        return ObjectRef(self.source_registry, self.kind, self.key)

    def values(self, name: str) -> List[str]:
        return [value for attr, value in self.attributes if attr == name]

    def first(self, name: str) -> Optional[str]:
        values = self.values(name)
        return values[0] if values else None

    @property
    def asn(self) -> Optional[Asn]:
        """AS number of an aut-num, or the origin of a route."""
        if self.kind is ObjectKind.AUT_NUM:
            return Asn(self.key)
        if self.kind is ObjectKind.ROUTE:
            return Asn(self.key.split()[1])
        return None

    @property
    def prefix(self) -> Optional[Prefix]:
        if self.kind is ObjectKind.ROUTE:
            return parse_prefix(self.key.split()[0])
        return None

    @property
    def address_range(self) -> Optional[Tuple[ipaddress.IPv4Address, ipaddress.IPv4Address]]:
        if self.kind is not ObjectKind.INETNUM:
            return None
        first, last = self.key.split(" - ")
        return ipaddress.IPv4Address(first), ipaddress.IPv4Address(last)

    def import_targets(self) -> List[Asn]:
        """ASes named in `from AS<k>` clauses of import/mp-import attributes."""
        targets = []
        for value in self.values("import") + self.values("mp-import"):
            for number in IMPORT_FROM.findall(value):
                try:
                    asn = Asn(number)
                except AsPathError:
                    continue
                if asn not in targets:
                    targets.append(asn)
        return targets


@dataclass(frozen=True)
class IrrEdge:
    """A typed relation; orphaned edges carry the unresolved key instead of a target."""

    source: ObjectRef
    target: Optional[ObjectRef]
    relation: Relation
    orphaned: bool = False
    unresolved: str = ""

    def to_dict(self) -> Dict:
        return {
            "from": str(self.source),
            "to": str(self.target) if self.target else self.unresolved,
            "relation": self.relation.value,
            "orphaned": self.orphaned,
        }


@dataclass(frozen=True)
class LegitimizingPath:
    edges: Tuple[IrrEdge, ...]
    start: ObjectRef
    end: ObjectRef

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def registry(self) -> str:
        return self.start.registry

    @property
    def relations(self) -> List[Relation]:
        return [edge.relation for edge in self.edges]

    def to_dict(self) -> Dict:
        return {
            "registry": self.registry,
            "start": str(self.start),
            "end": str(self.end),
            "edges": [edge.to_dict() for edge in self.edges],
        }


@dataclass
class ParseResult:
    objects: List[IrrObject] = field(default_factory=list)
    diagnostics: List[Diagnostic] = field(default_factory=list)
    unsupported: Counter = field(default_factory=Counter)

    @property
    def skipped(self) -> int:
        return sum(self.unsupported.values())


def _canonical_key(kind: ObjectKind, value: str, attrs: Sequence[Tuple[str, str]]) -> str:
    if kind in (ObjectKind.MNTNER, ObjectKind.ORGANISATION):
        if not value:
            raise RpslError(f"empty {kind.value} name")
        return value.upper()
    if kind is ObjectKind.AUT_NUM:
        return f"AS{int(Asn(value))}"
    if kind is ObjectKind.INETNUM:
        match = INETNUM_RANGE.match(value)
        if match:
            first = ipaddress.IPv4Address(match.group(1))
            last = ipaddress.IPv4Address(match.group(2))
        else:
            network = parse_prefix(value)
            first, last = network[0], network[-1]
        if first > last:
            raise RpslError(f"inverted inetnum range '{value}'")
        return f"{first} - {last}"
    # route: primary key is prefix plus origin
    origin = next((v for name, v in attrs if name == "origin"), None)
    if origin is None:
        raise RpslError(f"route {value} without origin attribute")
    return f"{parse_prefix(value)} AS{int(Asn(origin))}"


def parse_rpsl(
    snapshot: Union[bytes, str], registry: str = "irr", source: Optional[str] = None
) -> ParseResult:
    """
    Parse an RPSL snapshot into IrrObjects.

    Objects are blank-line separated paragraphs of `attr: value` lines.
    Lines starting with '+', a space or a tab continue the previous value;
    '#' and '%' lines are comments. A final object whose last line lacks a
    terminating newline is treated as truncated and dropped.

    Args:
        snapshot: Snapshot contents
        registry: Source registry label given to every object
        source: Label used in diagnostics

    Returns:
        ParseResult with objects, diagnostics and unsupported class counts
    """
    if isinstance(snapshot, bytes):
        snapshot = snapshot.decode("utf-8", errors="replace")
    source = source or registry
    result = ParseResult()
    supported = {kind.value: kind for kind in ObjectKind}

    def diagnose(message: str, line_no: int):
        diagnostic = Diagnostic(source, message, line_no)
        log.warning("%s", diagnostic)
        result.diagnostics.append(diagnostic)

    def flush(attrs: List[Tuple[str, str]], start_line: int):
        if not attrs:
            return
        cls = attrs[0][0]
        kind = supported.get(cls)
        if kind is None:
            result.unsupported[cls] += 1
            return
        try:
            key = _canonical_key(kind, attrs[0][1], attrs)
        except (RpslError, PrefixError, AsPathError, ValueError) as e:
            diagnose(f"{cls} object skipped: {e}", start_line)
            return
        result.objects.append(IrrObject(kind, key, tuple(attrs), registry, start_line))

    lines = snapshot.split("\n")
    attrs: List[Tuple[str, str]] = []
    start_line = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if line.startswith(("#", "%")):
            continue
        if not line.strip():
            flush(attrs, start_line)
            attrs = []
            continue
        if line[0] in "+ \t":
            if not attrs:
                diagnose("continuation line outside an object", line_no)
                continue
            name, value = attrs[-1]
            extra = line[1:].strip() if line[0] == "+" else line.strip()
            attrs[-1] = (name, f"{value} {extra}".strip())
            continue
        if ":" not in line:
            diagnose(f"malformed attribute line '{line.strip()}'", line_no)
            continue
        name, value = line.split(":", 1)
        if not attrs:
            start_line = line_no
        attrs.append((name.strip().lower(), value.split("#", 1)[0].strip()))

    # Anything left over means the stream ended mid-object
    if attrs:
        diagnose(f"unterminated {attrs[0][0]} object dropped", start_line)

    return result


def read_snapshot(path: Union[str, Path], registry: Optional[str] = None) -> ParseResult:
    """
    Read an RPSL snapshot file (optionally gzip-compressed).

    The registry label defaults to the file name up to its first dot
    (ripe.db.gz -> ripe).

    Raises:
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IRR snapshot not found: {path}")
    registry = registry or path.name.split(".", 1)[0]
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        data = f.read()
    result = parse_rpsl(data, registry=registry, source=path.name)
    log.info(
        "Parsed %d objects from %s (%d unsupported, %d diagnostics)",
        len(result.objects),
        path.name,
        result.skipped,
        len(result.diagnostics),
    )
    return result


class IrrGraph:
    """Immutable graph of IRR objects and their legitimizing relations."""

    def __init__(self, tag: Optional[str] = None):
        self.tag = tag
        self.graph = nx.MultiDiGraph()
        self.orphans: List[IrrEdge] = []
        self.diagnostics: List[Diagnostic] = []
        self._autnums: Dict[Asn, List[ObjectRef]] = {}
        self._routes: Dict[Prefix, List[ObjectRef]] = {}
        self._inetnums: Dict[str, pytricia.PyTricia] = {}
        self._view = None

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def registries(self) -> List[str]:
        return sorted({ref.registry for ref in self.graph.nodes})

    def obj(self, ref: ObjectRef) -> IrrObject:
        return self.graph.nodes[ref]["obj"]

    def has(self, ref: ObjectRef) -> bool:
        return self.graph.has_node(ref)

    def edges(self) -> List[IrrEdge]:
        """All resolved edges."""
        return [data["edge"] for _, _, data in self.graph.edges(data=True)]

    def autnums(self, asn: Asn, registry: Optional[str] = None) -> List[ObjectRef]:
        refs = self._autnums.get(asn, [])
        return [ref for ref in refs if registry is None or ref.registry == registry]

    def routes_for(self, p: Prefix, registry: Optional[str] = None) -> List[ObjectRef]:
        refs = self._routes.get(p, [])
        return [ref for ref in refs if registry is None or ref.registry == registry]

    def containing_inetnums(self, p: Prefix, registry: str) -> List[ObjectRef]:
        """INETNUMs of one registry whose range contains p."""
        trie = self._inetnums.get(registry)
        if trie is None:
            return []
        found = set()
        current = trie.get_key(str(p))
        while current is not None:
            found.update(trie[current])
            current = trie.parent(current)
        return sorted(found)

    def most_specific_inetnum(self, p: Prefix, registry: str) -> Optional[ObjectRef]:
        candidates = self.containing_inetnums(p, registry)
        if not candidates:
            return None

        def size(ref: ObjectRef) -> int:
            first, last = self.obj(ref).address_range
            return int(last) - int(first)

        return min(candidates, key=lambda ref: (size(ref), ref.key))

    def check_business_relation(
        self, as1: Asn, as2: Asn, max_depth: int = DEFAULT_MAX_DEPTH, registry: Optional[str] = None
    ) -> Optional[LegitimizingPath]:
        """
        Find a shortest legitimizing path between the AUT-NUM objects of two ASes.

        Returns:
            LegitimizingPath (empty for as1 == as2 with an AUT-NUM), or None
        """
        _check_depth(max_depth)
        starts = self.autnums(as1, registry)
        if as1 == as2:
            return LegitimizingPath((), starts[0], starts[0]) if starts else None
        return self._shortest(starts, set(self.autnums(as2, registry)), max_depth)

    def check_resource_holdership(
        self, p: Prefix, a: Asn, max_depth: int = DEFAULT_MAX_DEPTH, registry: Optional[str] = None
    ) -> Optional[LegitimizingPath]:
        """
        Find a path documenting that AS a holds prefix p.

        A ROUTE object for (p, a) qualifies on its own. Otherwise the search
        starts from the most specific INETNUM containing p (per registry) or
        from any ROUTE object for p, and must reach AUT-NUM(a).
        """
        _check_depth(max_depth)
        for ref in self.routes_for(p, registry):
            if self.obj(ref).asn == a:
                edge = self._origin_edge(ref)
                return LegitimizingPath((edge,), ref, edge.target or ref)

        starts = []
        for reg in [registry] if registry else self.registries:
            inetnum = self.most_specific_inetnum(p, reg)
            if inetnum is not None:
                starts.append(inetnum)
        starts.extend(self.routes_for(p, registry))
        return self._shortest(starts, set(self.autnums(a, registry)), max_depth)

    def is_registered(self, e, registry: Optional[str] = None) -> bool:
        """Whether any object documents the event's ASes or prefixes."""
        if self.autnums(e.victim_as, registry) or self.autnums(e.attacker_as, registry):
            return True
        for p in (e.attacker_subprefix, e.victim_prefix):
            if self.routes_for(p, registry):
                return True
        for reg in [registry] if registry else self.registries:
            if self.containing_inetnums(e.attacker_subprefix, reg):
                return True
        return False

    def replay(self, path: LegitimizingPath) -> bool:
        """Check a path edge by edge against the graph."""
        current = path.start
        for edge in path.edges:
            if edge.orphaned:
                if edge not in self.orphans or edge.source != current:
                    return False
                continue
            if not self.graph.has_edge(edge.source, edge.target, key=edge.relation.value):
                return False
            if not _type_checks(edge):
                return False
            if current == edge.source:
                current = edge.target
            elif current == edge.target:
                current = edge.source
            else:
                return False
        return current == path.end

    def _origin_edge(self, route: ObjectRef) -> IrrEdge:
        for _, _, data in self.graph.out_edges(route, data=True):
            if data["edge"].relation is Relation.ORIGIN:
                return data["edge"]
        for edge in self.orphans:
            if edge.source == route and edge.relation is Relation.ORIGIN:
                return edge
        raise KeyError(f"route {route} has no origin edge")

    def _search_view(self):
        if self._view is None:
            self._view = self.graph.to_undirected(as_view=True)
        return self._view

    def _shortest(
        self, starts: Iterable[ObjectRef], targets: set, max_depth: int
    ) -> Optional[LegitimizingPath]:
        if not targets:
            return None
        view = self._search_view()
        best: Optional[List[ObjectRef]] = None
        for start in sorted(set(starts)):
            found = nx.single_source_shortest_path(view, start, cutoff=max_depth)
            for target in sorted(targets & found.keys()):
                nodes = found[target]
                if best is None or len(nodes) < len(best):
                    best = nodes
        if best is None:
            return None
        edges = tuple(self._edge_between(u, w) for u, w in zip(best, best[1:]))
        # maps_to only records containment; it never legitimizes alone
        if edges and all(edge.relation is Relation.MAPS_TO for edge in edges):
            return None
        return LegitimizingPath(edges, best[0], best[-1])

    def _edge_between(self, u: ObjectRef, w: ObjectRef) -> IrrEdge:
        candidates = []
        for a, b in ((u, w), (w, u)):
            if self.graph.has_edge(a, b):
                candidates.extend(data["edge"] for data in self.graph.get_edge_data(a, b).values())
        return min(candidates, key=lambda edge: (edge.relation.value, edge.source))


def _check_depth(max_depth: int):
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")


def _type_checks(edge: IrrEdge) -> bool:
    sources, target_kind = RELATION_TYPES[edge.relation]
    if sources is not None and edge.source.kind not in sources:
        return False
    return edge.target is None or edge.target.kind is target_kind


def build_graph(objects: Iterable[IrrObject], tag: Optional[str] = None) -> IrrGraph:
    """
    Build the relation graph from parsed objects.

    Duplicate (registry, kind, key) objects are resolved last-writer-wins.
    Import intents toward ASes without an AUT-NUM object, and routes whose
    origin has no AUT-NUM object, become orphaned edges.
    """
    g = IrrGraph(tag)

    def diagnose(message: str, obj: IrrObject):
        diagnostic = Diagnostic(obj.source_registry, message, obj.line_no)
        log.debug("%s", diagnostic)
        g.diagnostics.append(diagnostic)

    latest: Dict[ObjectRef, IrrObject] = {}
    for obj in objects:
        if obj.ref in latest:
            diagnose(f"duplicate {obj.kind.value} {obj.key}, keeping the later object", obj)
        latest[obj.ref] = obj

    for ref, obj in latest.items():
        g.graph.add_node(ref, obj=obj)
        if obj.kind is ObjectKind.AUT_NUM:
            g._autnums.setdefault(obj.asn, []).append(ref)
        elif obj.kind is ObjectKind.ROUTE:
            g._routes.setdefault(obj.prefix, []).append(ref)
        elif obj.kind is ObjectKind.INETNUM:
            trie = g._inetnums.setdefault(ref.registry, pytricia.PyTricia(32))
            for block in ipaddress.summarize_address_range(*obj.address_range):
                key = str(block)
                if trie.has_key(key):
                    trie[key].append(ref)
                else:
                    trie.insert(key, [ref])

    def link(source: ObjectRef, target: ObjectRef, relation: Relation):
        edge = IrrEdge(source, target, relation)
        g.graph.add_edge(source, target, key=relation.value, edge=edge)

    for ref, obj in latest.items():
        registry = ref.registry

        for name in obj.values("mnt-by"):
            target = ObjectRef(registry, ObjectKind.MNTNER, name.upper())
            if g.has(target):
                link(ref, target, Relation.MAINTAINED_BY)
            else:
                diagnose(f"unknown maintainer {name}", obj)

        for name in obj.values("org"):
            target = ObjectRef(registry, ObjectKind.ORGANISATION, name.upper())
            if g.has(target):
                link(ref, target, Relation.ORG)
            else:
                diagnose(f"unknown organisation {name}", obj)

        if obj.kind is ObjectKind.AUT_NUM:
            for asn in obj.import_targets():
                target = ObjectRef(registry, ObjectKind.AUT_NUM, f"AS{int(asn)}")
                if target == ref:
                    continue
                if g.has(target):
                    link(ref, target, Relation.IMPORT)
                else:
                    g.orphans.append(IrrEdge(ref, None, Relation.IMPORT, True, target.key))
                    diagnose(f"orphaned import toward {target.key}", obj)

        if obj.kind is ObjectKind.ROUTE:
            target = ObjectRef(registry, ObjectKind.AUT_NUM, f"AS{int(obj.asn)}")
            if g.has(target):
                link(ref, target, Relation.ORIGIN)
            else:
                g.orphans.append(IrrEdge(ref, None, Relation.ORIGIN, True, target.key))

            inetnum = g.most_specific_inetnum(obj.prefix, registry)
            if inetnum is not None:
                link(ref, inetnum, Relation.MAPS_TO)

    nx.freeze(g.graph)
    log.info(
        "Built IRR graph%s: %d nodes, %d edges, %d orphaned",
        f" [{tag}]" if tag else "",
        g.graph.number_of_nodes(),
        g.graph.number_of_edges(),
        len(g.orphans),
    )
    return g


def load_graph(paths: Iterable[Union[str, Path]], tag: Optional[str] = None) -> IrrGraph:
    """Parse snapshot files (one registry each) and build one graph."""
    objects: List[IrrObject] = []
    diagnostics: List[Diagnostic] = []
    for path in paths:
        result = read_snapshot(path)
        objects.extend(result.objects)
        diagnostics.extend(result.diagnostics)
    g = build_graph(objects, tag)
    g.diagnostics[:0] = diagnostics
    return g


class SnapshotStore:
    """Tagged IRR graphs; new snapshots are built aside and swapped in atomically."""

    def __init__(self):
        self._graphs: Dict[str, IrrGraph] = {}
        self._current: Optional[str] = None
        self._lock = threading.Lock()

    def publish(self, g: IrrGraph, make_current: bool = True):
        if not g.tag:
            raise ValueError("Snapshot graphs need a tag")
        with self._lock:
            self._graphs[g.tag] = g
            if make_current:
                self._current = g.tag

    def load(self, tag: str, paths: Iterable[Union[str, Path]]) -> IrrGraph:
        g = load_graph(paths, tag)
        self.publish(g)
        return g

    def get(self, tag: Optional[str] = None) -> Optional[IrrGraph]:
        with self._lock:
            return self._graphs.get(tag or self._current) if (tag or self._current) else None

    def tags(self) -> List[str]:
        with self._lock:
            return sorted(self._graphs)


@dataclass(frozen=True)
class RegistryOutcome:
    """Per-registry result of the IRR filter for one event."""

    covered: bool
    business: bool
    holdership: bool

    @property
    def legitimate(self) -> bool:
        return self.business or self.holdership


def irr_filter(g: Optional[IrrGraph], e, max_depth: int = DEFAULT_MAX_DEPTH) -> FilterVerdict:
    """
    Search the IRR graph for a legitimizing relation behind an event.

    Legitimate if the attacker has a business relationship with the victim
    or holds the attacker subprefix; NotCovered if nothing about the event's
    ASes or prefixes is registered; Inconclusive otherwise.
    """
    if g is None:
        return FilterVerdict.not_covered("no IRR snapshot loaded")

    path = g.check_business_relation(e.attacker_as, e.victim_as, max_depth)
    if path is not None:
        return FilterVerdict.legitimate("business relationship", [path.to_dict()])

    path = g.check_resource_holdership(e.attacker_subprefix, e.attacker_as, max_depth)
    if path is not None:
        return FilterVerdict.legitimate("resource holdership", [path.to_dict()])

    if not g.is_registered(e):
        return FilterVerdict.not_covered("no IRR objects for the event")
    return FilterVerdict.inconclusive("no legitimizing relation")


def registry_breakdown(
    g: Optional[IrrGraph], e, max_depth: int = DEFAULT_MAX_DEPTH
) -> Dict[str, RegistryOutcome]:
    """Evaluate the IRR queries against each registry separately."""
    if g is None:
        return {}
    outcomes = {}
    for registry in g.registries:
        outcomes[registry] = RegistryOutcome(
            covered=g.is_registered(e, registry),
            business=g.check_business_relation(e.attacker_as, e.victim_as, max_depth, registry) is not None,
            holdership=g.check_resource_holdership(e.attacker_subprefix, e.attacker_as, max_depth, registry)
            is not None,
        )
    return outcomes


def export_csv(g: IrrGraph, out_prefix: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Write the graph as a node/edge CSV pair.

    Returns:
        Tuple of (nodes path, edges path)
    """
    out_prefix = Path(out_prefix)
    nodes_path = out_prefix.with_name(out_prefix.name + "_nodes.csv")
    edges_path = out_prefix.with_name(out_prefix.name + "_edges.csv")

    with open(nodes_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "registry", "kind", "key"])
        for ref in sorted(g.graph.nodes):
            writer.writerow([str(ref), ref.registry, ref.kind.value, ref.key])

    with open(edges_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["source", "target", "relation", "orphaned"])
        rows = [edge.to_dict() for edge in g.edges() + g.orphans]
        for row in sorted(rows, key=lambda r: (r["from"], r["to"], r["relation"])):
            writer.writerow([row["from"], row["to"], row["relation"], int(row["orphaned"])])

    return nodes_path, edges_path
