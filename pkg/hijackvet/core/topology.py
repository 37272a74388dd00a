"""Downstream reasoning over observed AS paths."""

import logging
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional

from hijackvet.core.rib_engine import PrefixTree
from hijackvet.core.routing_model import Asn, Path, collapse_path
from hijackvet.core.verdicts import FilterVerdict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathSet:
    """AS paths relevant to one event, collapsed of prepending."""

    paths: FrozenSet[Path] = frozenset()
    source: Optional[int] = None

    def __post_init__(self):
        for path in self.paths:
            if not path:
                raise ValueError("PathSet entries must be non-empty")
            if tuple(path) != collapse_path(path):
                raise ValueError(f"PathSet entry not collapsed: {path}")

    @classmethod
    def of(cls, paths: Iterable, source: Optional[int] = None) -> "PathSet":
        return cls(frozenset(collapse_path(p) for p in paths if p), source)

    def union(self, other: "PathSet") -> "PathSet":
        return PathSet(self.paths | other.paths, self.source if self.source is not None else other.source)

    def __len__(self) -> int:
        return len(self.paths)


def collect_paths(tree: PrefixTree, e) -> PathSet:
    """
    Gather stored paths toward the attacker subprefix and every prefix covering it.

    Covering prefixes of the subprefix include the victim prefix and
    everything covering the victim prefix.
    """
    prefixes = [e.attacker_subprefix] + tree.covering(e.attacker_subprefix)
    paths = set()
    for prefix in prefixes:
        record = tree.get(prefix)
        if record is None:
            continue
        paths.update(route.path for route in record.peers.values())
    return PathSet(frozenset(paths), tree.tag)


def topology_filter(ps: PathSet, victim: Asn, attacker: Asn) -> FilterVerdict:
    """
    Legitimate if the attacker sits downstream of the victim on some path.

    Reading a path observer first, every occurrence of the victim must come
    before every occurrence of the attacker.

    Raises:
        ValueError: If victim and attacker are the same AS
    """
    if victim == attacker:
        raise ValueError(f"Victim and attacker are both {victim!r}; not a conflict")
    if not ps.paths:
        return FilterVerdict.not_covered("no AS paths for the event")

    upstream_seen = False
    for path in sorted(ps.paths, key=lambda p: (len(p), p)):
        victim_at = [i for i, asn in enumerate(path) if asn == victim]
        attacker_at = [i for i, asn in enumerate(path) if asn == attacker]
        if not victim_at or not attacker_at:
            continue
        if len(victim_at) > 1 or len(attacker_at) > 1:
            log.debug("Repeated AS on path %s", " ".join(str(a) for a in path))
        if max(victim_at) < min(attacker_at):
            return FilterVerdict.legitimate(
                "attacker downstream of victim",
                [{"path": [int(asn) for asn in path]}],
            )
        upstream_seen = True

    if upstream_seen:
        return FilterVerdict.inconclusive("attacker not downstream of victim")
    return FilterVerdict.inconclusive("no path contains both ASes")
