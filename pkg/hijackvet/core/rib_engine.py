"""Prefix tree over a replayed BGP feed with strict subMOAS event tracking.

The tree is a pytricia trie keyed by CIDR strings. Each node holds the route
currently announced by every collector peer for that prefix; origins and
their first/last seen times are derived from those per-peer routes.
"""

import logging
import threading
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Set, Tuple

import pytricia

from hijackvet.core.errors import Diagnostic, JournalCoverageError
from hijackvet.core.feed_parser import BgpUpdate, UpdateKind
from hijackvet.core.routing_model import (
    Asn,
    Path,
    Prefix,
    RibView,
    Route,
    collapse_path,
    is_subprefix,
    parse_prefix,
)

log = logging.getLogger(__name__)

DEFAULT_RETENTION_HOURS = 72


@dataclass(frozen=True)
class PeerRoute:
    """The path a collector peer currently holds for a prefix."""

    raw_path: Path
    path: Path
    first_seen: int
    last_seen: int

    @property
    def origin(self) -> Asn:
        return self.path[-1]


@dataclass(frozen=True)
class OriginRecord:
    first_seen: int
    last_seen: int
    paths: FrozenSet[Path]


@dataclass
class PrefixRecord:
    """Announcement state of one tree node, keyed by collector peer."""

    peers: Dict[Asn, PeerRoute] = field(default_factory=dict)

    @property
    def origin_set(self) -> Set[Asn]:
        return {route.origin for route in self.peers.values()}

    def origins(self) -> Dict[Asn, OriginRecord]:
        """Origins announcing this prefix with their aggregated timestamps and paths."""
        grouped: Dict[Asn, List[PeerRoute]] = {}
        for route in self.peers.values():
            grouped.setdefault(route.origin, []).append(route)
        return {
            origin: OriginRecord(
                first_seen=min(r.first_seen for r in routes),
                last_seen=max(r.last_seen for r in routes),
                paths=frozenset(r.path for r in routes),
            )
            for origin, routes in grouped.items()
        }

    def copy(self) -> "PrefixRecord":
        return PrefixRecord(peers=dict(self.peers))


class PrefixTree:
    """Binary prefix tree of current announcements."""

    def __init__(self, read_only: bool = False, tag: Optional[int] = None):
        self._trie = pytricia.PyTricia(32)
        self.read_only = read_only
        self.tag = tag

    def __len__(self) -> int:
        return len(self._trie)

    def __contains__(self, prefix: Prefix) -> bool:
        return self._trie.has_key(str(prefix))

    def get(self, prefix: Prefix) -> Optional[PrefixRecord]:
        """Exact-match lookup; None if the prefix has no node."""
        key = str(prefix)
        if not self._trie.has_key(key):
            return None
        return self._trie[key]

    def origins(self, prefix: Prefix) -> Set[Asn]:
        record = self.get(prefix)
        return record.origin_set if record else set()

    def prefixes(self) -> List[Prefix]:
        return sorted(parse_prefix(key) for key in self._trie.keys())

    def covering(self, prefix: Prefix) -> List[Prefix]:
        """Strictly less specific prefixes present in the tree, nearest first."""
        key = str(prefix)
        if self._trie.has_key(key):
            current = self._trie.parent(key)
        else:
            current = self._trie.get_key(key)
        chain = []
        while current is not None:
            chain.append(parse_prefix(current))
            current = self._trie.parent(current)
        return chain

    def subprefixes(self, prefix: Prefix) -> List[Prefix]:
        """Strictly more specific prefixes present in the tree."""
        key = str(prefix)
        if self._trie.has_key(key):
            return sorted(parse_prefix(child) for child in self._trie.children(key))
        return [p for p in self.prefixes() if is_subprefix(p, prefix)]

    def ensure(self, prefix: Prefix) -> PrefixRecord:
        self._check_writable()
        record = self.get(prefix)
        if record is None:
            record = PrefixRecord()
            self._trie.insert(str(prefix), record)
        return record

    def remove(self, prefix: Prefix):
        self._check_writable()
        key = str(prefix)
        if self._trie.has_key(key):
            self._trie.delete(key)

    def routes(self) -> RibView:
        """All current routes as a RibView."""
        routes = set()
        for prefix in self.prefixes():
            for peer_route in self.get(prefix).peers.values():
                routes.add(Route(peer_route.path, prefix, peer_route.raw_path))
        return RibView.of(routes)

    def export(self) -> Tuple:
        """Canonical, comparable representation of the whole tree."""
        return tuple(
            (
                str(prefix),
                tuple(
                    (int(peer), tuple(int(a) for a in route.raw_path), route.first_seen, route.last_seen)
                    for peer, route in sorted(self.get(prefix).peers.items())
                ),
            )
            for prefix in self.prefixes()
        )

    def copy(self, read_only: bool = True, tag: Optional[int] = None) -> "PrefixTree":
        clone = PrefixTree(read_only=False, tag=tag)
        for key in self._trie.keys():
            clone._trie.insert(key, self._trie[key].copy())
        clone.read_only = read_only
        return clone

    def _check_writable(self):
        if self.read_only:
            raise RuntimeError("PrefixTree snapshot is read-only")


class EventKey(NamedTuple):
    """Identity of a strict subMOAS event; timestamps are not part of it."""

    victim_as: Asn
    victim_prefix: Prefix
    attacker_as: Asn
    attacker_subprefix: Prefix

    def __str__(self) -> str:
        return (
            f"{int(self.victim_as)}:{self.victim_prefix}"
            f">{int(self.attacker_as)}:{self.attacker_subprefix}"
        )


@dataclass(frozen=True)
class SubMoasEvent:
    """One occurrence (or, after dedupe, all occurrences) of a strict subMOAS."""

    victim_as: Asn
    victim_prefix: Prefix
    attacker_as: Asn
    attacker_subprefix: Prefix
    first_seen: int
    last_seen: int
    occurrence_count: int = 1
    event_id: str = ""
    open: bool = True

    def __post_init__(self):
        if not is_subprefix(self.attacker_subprefix, self.victim_prefix):
            raise ValueError(
                f"{self.attacker_subprefix} is not a subprefix of {self.victim_prefix}"
            )
        if self.occurrence_count < 1:
            raise ValueError("occurrence_count must be >= 1")

    @property
    def key(self) -> EventKey:
        return EventKey(self.victim_as, self.victim_prefix, self.attacker_as, self.attacker_subprefix)

    @classmethod
    def from_key(cls, key: EventKey, timestamp: int, **kwargs) -> "SubMoasEvent":
        return cls(*key, first_seen=timestamp, last_seen=timestamp, **kwargs)

    def to_dict(self) -> Dict:
        return {
            "event_id": self.event_id or str(self.key),
            "victim_as": int(self.victim_as),
            "victim_prefix": str(self.victim_prefix),
            "attacker_as": int(self.attacker_as),
            "attacker_subprefix": str(self.attacker_subprefix),
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
            "occurrence_count": self.occurrence_count,
            "open": self.open,
        }


@dataclass(frozen=True)
class JournalEntry:
    timestamp: int
    prefix: Prefix
    origins_changed: bool
    opened: Tuple[EventKey, ...] = ()
    closed: Tuple[EventKey, ...] = ()


class Journal:
    """Bounded history of applied updates and the event transitions they caused."""

    def __init__(self, retention_seconds: Optional[int] = DEFAULT_RETENTION_HOURS * 3600):
        """
        Initialize Journal.

        Args:
            retention_seconds: Feed time kept in memory; None keeps everything
        """
        self.retention_seconds = retention_seconds
        self._entries: Deque[JournalEntry] = deque()
        self._baseline_open: Set[EventKey] = set()
        self._baseline_time: Optional[int] = None
        self._clock: Optional[int] = None
        self._lock = threading.Lock()

    @property
    def start(self) -> Optional[int]:
        if self._baseline_time is not None:
            return self._baseline_time
        return self._entries[0].timestamp if self._entries else None

    @property
    def end(self) -> Optional[int]:
        times = [t for t in (self._clock, self._entries[-1].timestamp if self._entries else None) if t is not None]
        return max(times) if times else None

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, entry: JournalEntry):
        """
        Record an entry, keeping entries sorted by timestamp.

        A late entry is inserted after every entry with the same or an earlier
        timestamp. One older than the retained history folds into the baseline.
        """
        with self._lock:
            if self._baseline_time is not None and entry.timestamp < self._baseline_time:
                log.warning("Update at %s predates journal start %s", entry.timestamp, self._baseline_time)
                self._baseline_open.difference_update(entry.closed)
                self._baseline_open.update(entry.opened)
                return
            index = len(self._entries)
            while index > 0 and self._entries[index - 1].timestamp > entry.timestamp:
                index -= 1
            if index < len(self._entries):
                log.warning(
                    "Out-of-order update at %s (journal at %s)",
                    entry.timestamp,
                    self._entries[-1].timestamp,
                )
            self._entries.insert(index, entry)
            self._trim(self._entries[-1].timestamp)

    def advance_clock(self, timestamp: int):
        """Extend coverage to timestamp without recording an update."""
        with self._lock:
            if self._clock is None or timestamp > self._clock:
                self._clock = timestamp
            self._trim(timestamp)

    def covers(self, t0: int, t1: int) -> bool:
        start, end = self.start, self.end
        return start is not None and start <= t0 <= t1 <= end

    def check_covers(self, t0: int, t1: int):
        if t0 > t1:
            raise ValueError(f"Invalid interval [{t0}, {t1}]")
        if not self.covers(t0, t1):
            raise JournalCoverageError(
                f"Interval [{t0}, {t1}] outside journal coverage [{self.start}, {self.end}]"
            )

    def open_at(self, t: int) -> Set[EventKey]:
        """
        Event keys open at time t (after all updates stamped <= t).

        Raises:
            JournalCoverageError: If t lies outside the journal
        """
        with self._lock:
            self.check_covers(t, t)
            state = set(self._baseline_open)
            for entry in self._entries:
                if entry.timestamp > t:
                    break
                state.difference_update(entry.closed)
                state.update(entry.opened)
            return state

    def entries_between(self, t0: int, t1: int) -> List[JournalEntry]:
        """Entries with t0 < timestamp <= t1."""
        with self._lock:
            return [e for e in self._entries if t0 < e.timestamp <= t1]

    def _trim(self, now: int):
        if self.retention_seconds is None:
            return
        cutoff = now - self.retention_seconds
        while self._entries and self._entries[0].timestamp < cutoff:
            dropped = self._entries.popleft()
            self._baseline_open.difference_update(dropped.closed)
            self._baseline_open.update(dropped.opened)
            self._baseline_time = dropped.timestamp


@dataclass
class UpdateResult:
    """Events opened and event ids closed by one update."""

    opened: List[SubMoasEvent] = field(default_factory=list)
    closed: List[str] = field(default_factory=list)


@dataclass
class LoadSummary:
    loaded: int = 0
    skipped: int = 0
    opened: List[SubMoasEvent] = field(default_factory=list)
    diagnostics: List[Diagnostic] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return self.skipped


class RibEngine:
    """Single-writer replay engine: applies updates and tracks strict subMOAS events."""

    def __init__(self, retention_seconds: Optional[int] = DEFAULT_RETENTION_HOURS * 3600):
        self.tree = PrefixTree()
        self.journal = Journal(retention_seconds)
        self.diagnostics: List[Diagnostic] = []
        self._open: Dict[EventKey, str] = {}
        self._events: Dict[str, SubMoasEvent] = {}
        self._occurrences: Counter = Counter()
        self._lock = threading.RLock()

    def load_table_dump(self, records: Iterable[BgpUpdate]) -> LoadSummary:
        """
        Load a full table export.

        Withdrawals are not valid in a table dump; they are skipped with a
        diagnostic. Conflicts already present in the dump open events.
        """
        summary = LoadSummary()
        for index, record in enumerate(records, start=1):
            if record.kind is not UpdateKind.ANNOUNCE:
                diagnostic = Diagnostic("table-dump", f"non-announcement record for {record.prefix}", index)
                log.warning("%s", diagnostic)
                summary.diagnostics.append(diagnostic)
                summary.skipped += 1
                continue
            result = self.apply_update(record)
            summary.opened.extend(result.opened)
            summary.loaded += 1
        log.info("Loaded %d table records (%d skipped)", summary.loaded, summary.skipped)
        return summary

    def apply_update(self, u: BgpUpdate) -> UpdateResult:
        """
        Apply one update to the tree.

        Returns:
            Newly opened events and the ids of events closed by this update
        """
        with self._lock:
            p = u.prefix
            record = self.tree.get(p)

            if u.kind is UpdateKind.WITHDRAW and (record is None or u.peer not in record.peers):
                diagnostic = Diagnostic("feed", f"withdraw of unannounced {p} from peer {int(u.peer)}")
                log.debug("%s", diagnostic)
                self.diagnostics.append(diagnostic)
                self.journal.advance_clock(u.timestamp)
                return UpdateResult()

            record = self.tree.ensure(p)
            affected = [p] + self.tree.subprefixes(p)
            before = self._tuples(affected)
            origins_before = record.origin_set

            if u.kind is UpdateKind.ANNOUNCE:
                self._announce(record, u)
            else:
                del record.peers[u.peer]

            origins_after = record.origin_set
            after = self._tuples(affected)
            if not record.peers:
                self.tree.remove(p)

            result = UpdateResult()
            for key in sorted(before - after):
                result.closed.append(self._close(key, u.timestamp))
            for key in sorted(after - before):
                result.opened.append(self._open_event(key, u.timestamp))

            self.journal.append(
                JournalEntry(
                    timestamp=u.timestamp,
                    prefix=p,
                    origins_changed=origins_before != origins_after,
                    opened=tuple(e.key for e in result.opened),
                    closed=tuple(sorted(before - after)),
                )
            )
            return result

    def replay(self, updates: Iterable[BgpUpdate]) -> UpdateResult:
        """Apply a sequence of updates, accumulating opened and closed events."""
        total = UpdateResult()
        for update in updates:
            result = self.apply_update(update)
            total.opened.extend(result.opened)
            total.closed.extend(result.closed)
        return total

    def snapshot(self) -> PrefixTree:
        """Read-only copy of the tree for concurrent readers."""
        with self._lock:
            return self.tree.copy(read_only=True, tag=self.journal.end)

    def open_events(self) -> List[SubMoasEvent]:
        with self._lock:
            return [self._events[event_id] for _, event_id in sorted(self._open.items())]

    def open_keys(self) -> Set[EventKey]:
        with self._lock:
            return set(self._open)

    def events(self) -> List[SubMoasEvent]:
        """Every event occurrence emitted so far, in emission order."""
        with self._lock:
            return list(self._events.values())

    def event(self, event_id: str) -> Optional[SubMoasEvent]:
        return self._events.get(event_id)

    def _announce(self, record: PrefixRecord, u: BgpUpdate):
        path = collapse_path(u.path)
        current = record.peers.get(u.peer)
        if current is not None and current.raw_path == u.path:
            record.peers[u.peer] = replace(current, last_seen=max(current.last_seen, u.timestamp))
        else:
            record.peers[u.peer] = PeerRoute(u.path, path, u.timestamp, u.timestamp)

    def _tuples(self, attacker_prefixes: Iterable[Prefix]) -> Set[EventKey]:
        found: Set[EventKey] = set()
        for p in attacker_prefixes:
            found |= self._tuples_at(p)
        return found

    def _tuples_at(self, p: Prefix) -> Set[EventKey]:
        attackers = self.tree.origins(p)
        if not attackers:
            return set()
        found = set()
        above: Set[Asn] = set()
        for q in reversed(self.tree.covering(p)):
            victims = self.tree.origins(q)
            above |= victims
            for v in victims - attackers:
                for a in attackers - above:
                    found.add(EventKey(v, q, a, p))
        return found

    def _open_event(self, key: EventKey, timestamp: int) -> SubMoasEvent:
        self._occurrences[key] += 1
        event = SubMoasEvent.from_key(key, timestamp, event_id=f"{key}#{self._occurrences[key]}")
        self._events[event.event_id] = event
        self._open[key] = event.event_id
        log.debug("Opened %s", event.event_id)
        return event

    def _close(self, key: EventKey, timestamp: int) -> str:
        event_id = self._open.pop(key)
        self._events[event_id] = replace(self._events[event_id], last_seen=timestamp, open=False)
        log.debug("Closed %s", event_id)
        return event_id


def dedupe_events(events: Iterable[SubMoasEvent]) -> List[SubMoasEvent]:
    """
    Collapse recurrences of the same event key into one record.

    Returns:
        One event per key, ordered by first appearance
    """
    merged: Dict[EventKey, SubMoasEvent] = {}
    for event in events:
        current = merged.get(event.key)
        if current is None:
            merged[event.key] = replace(event, event_id=str(event.key))
            continue
        merged[event.key] = replace(
            current,
            first_seen=min(current.first_seen, event.first_seen),
            last_seen=max(current.last_seen, event.last_seen),
            occurrence_count=current.occurrence_count + event.occurrence_count,
            open=current.open or event.open,
        )
    return sorted(merged.values(), key=lambda e: (e.first_seen, e.key))


def recurrence_stats(events: Iterable[SubMoasEvent]) -> Tuple[float, int]:
    """Mean and max occurrence count over deduplicated events."""
    counts = [event.occurrence_count for event in events]
    if not counts:
        return 0.0, 0
    return sum(counts) / len(counts), max(counts)


def event_stable_during(journal: Journal, event, interval: Tuple[int, int]) -> bool:
    """
    Whether an event held continuously over [t0, t1].

    The event must be open at t0, must not close or reopen within the
    interval, and neither of its prefixes may change origins.

    Raises:
        JournalCoverageError: If the interval is outside the journal
    """
    t0, t1 = interval
    key = event if isinstance(event, EventKey) else event.key
    if key not in journal.open_at(t0):
        return False
    journal.check_covers(t0, t1)
    watched = {key.victim_prefix, key.attacker_subprefix}
    for entry in journal.entries_between(t0, t1):
        if key in entry.closed or key in entry.opened:
            return False
        if entry.origins_changed and entry.prefix in watched:
            return False
    return True


def diff_table_dumps(old: Iterable[BgpUpdate], new: Iterable[BgpUpdate]) -> List[SubMoasEvent]:
    """
    Strict subMOAS events present in the new table dump but not in the old one.

    Each dump is loaded into its own engine; events are compared by key.
    """
    before = RibEngine(retention_seconds=None)
    before.load_table_dump(old)
    after = RibEngine(retention_seconds=None)
    after.load_table_dump(new)
    known = before.open_keys()
    return [event for event in after.open_events() if event.key not in known]
