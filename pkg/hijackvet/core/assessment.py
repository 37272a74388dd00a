"""Alarm assessment: run the IRR, topology and TLS filters and aggregate a report."""

import ipaddress
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from hijackvet.core.errors import AlarmRejected, AsPathError, PrefixError
from hijackvet.core.feed_parser import read_feed
from hijackvet.core.irr_graph import (
    DEFAULT_MAX_DEPTH,
    IrrGraph,
    RegistryOutcome,
    SnapshotStore,
    irr_filter,
    registry_breakdown,
)
from hijackvet.core.rib_engine import (
    DEFAULT_RETENTION_HOURS,
    EventKey,
    Journal,
    PrefixTree,
    RibEngine,
    dedupe_events,
)
from hijackvet.core.routing_model import Asn, Prefix, is_subprefix, parse_prefix
from hijackvet.core.tls_validator import (
    DEFAULT_EVENT_BUDGET,
    DEFAULT_PARALLELISM,
    DEFAULT_PER_TARGET_TIMEOUT,
    GroundTruth,
    RealScanner,
    Scanner,
    ScanOutcome,
    SimulatedScanner,
    build_ground_truth,
    journal_clock,
    read_observations,
    sanitize_ground_truth,
    tls_filter,
)
from hijackvet.core.topology import PathSet, collect_paths, topology_filter
from hijackvet.core.verdicts import FilterVerdict, VerdictStatus

log = logging.getLogger(__name__)

FILTERS = ("irr", "topology", "tls")
DEFAULT_IRR_TAG = "current"


class Cumulative(Enum):
    LEGITIMATE = "legitimate"
    SUSPICIOUS = "suspicious"
    NOT_COVERED = "not_covered"


@dataclass(frozen=True)
class Alarm:
    """An external or self-detected subprefix hijacking alarm."""

    victim_as: Asn
    victim_prefix: Prefix
    attacker_as: Asn
    attacker_subprefix: Prefix
    reported_at: int
    source: str = "alarm"

    @property
    def key(self) -> EventKey:
        return EventKey(self.victim_as, self.victim_prefix, self.attacker_as, self.attacker_subprefix)

    @property
    def ref(self) -> str:
        return str(self.key)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "victim_as": int(self.victim_as),
            "victim_prefix": str(self.victim_prefix),
            "attacker_as": int(self.attacker_as),
            "attacker_subprefix": str(self.attacker_subprefix),
            "reported_at": self.reported_at,
            "source": self.source,
        }

    def to_line(self) -> str:
        return (
            f"{int(self.victim_as)} {self.victim_prefix} {int(self.attacker_as)} "
            f"{self.attacker_subprefix} {self.reported_at} {self.source}"
        )


ALARM_FIELDS = ("victim_as", "victim_prefix", "attacker_as", "attacker_subprefix", "reported_at")


def parse_alarm(record: Union[str, Mapping[str, Any]]) -> Alarm:
    """
    Parse an alarm from a text line or a structured record.

    Text format: `<victim_as> <victim_prefix> <attacker_as> <attacker_subprefix> <unix_ts> [<source>]`.
    Lines starting with '{' are read as JSON records with the same field names.

    Raises:
        AlarmRejected: If the record is malformed or not a strict subprefix pair
    """
    raw = record if isinstance(record, str) else json.dumps(record, sort_keys=True)
    if isinstance(record, str):
        text = record.strip()
        if text.startswith("{"):
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise AlarmRejected(f"invalid JSON: {e.msg}", raw)
        else:
            fields = text.split()
            if len(fields) not in (5, 6):
                raise AlarmRejected(f"expected 5 or 6 fields, got {len(fields)}", raw)
            record = dict(zip(ALARM_FIELDS + ("source",), fields))

    missing = [name for name in ALARM_FIELDS if name not in record]
    if missing:
        raise AlarmRejected(f"missing fields: {', '.join(missing)}", raw)

    try:
        alarm = Alarm(
            victim_as=Asn(record["victim_as"]),
            victim_prefix=parse_prefix(record["victim_prefix"]),
            attacker_as=Asn(record["attacker_as"]),
            attacker_subprefix=parse_prefix(record["attacker_subprefix"]),
            reported_at=int(record["reported_at"]),
            source=str(record.get("source") or "alarm"),
        )
    except (PrefixError, AsPathError, ValueError) as e:
        raise AlarmRejected(f"malformed field: {e}", raw)

    if alarm.victim_prefix == alarm.attacker_subprefix:
        raise AlarmRejected("equal prefixes", raw)
    if not is_subprefix(alarm.attacker_subprefix, alarm.victim_prefix):
        raise AlarmRejected("not a subprefix of the victim prefix", raw)
    if alarm.victim_as == alarm.attacker_as:
        raise AlarmRejected("victim and attacker are the same AS", raw)
    return alarm


def read_alarms(path: Union[str, Path]) -> Tuple[List[Alarm], List[AlarmRejected]]:
    """
    Read an alarm file, one record per line.

    Raises:
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Alarm file not found: {path}")
    alarms, rejected = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                alarms.append(parse_alarm(line))
            except AlarmRejected as e:
                log.warning("%s:%d: %s", path.name, line_no, e)
                rejected.append(e)
    return alarms, rejected


def cumulative_verdict(verdicts: Iterable[FilterVerdict]) -> Cumulative:
    verdicts = list(verdicts)
    if any(v.is_legitimate for v in verdicts):
        return Cumulative.LEGITIMATE
    if all(v.status is VerdictStatus.NOT_COVERED for v in verdicts):
        return Cumulative.NOT_COVERED
    return Cumulative.SUSPICIOUS


@dataclass(frozen=True)
class Assessment:
    alarm: Alarm
    irr: FilterVerdict
    topology: FilterVerdict
    tls: FilterVerdict
    occurrence_count: int = 1
    tls_hosts: int = 0
    irr_registries: Dict[str, RegistryOutcome] = field(default_factory=dict, hash=False)

    @property
    def alarm_ref(self) -> str:
        return self.alarm.ref

    @property
    def verdicts(self) -> Dict[str, FilterVerdict]:
        return {"irr": self.irr, "topology": self.topology, "tls": self.tls}

    @property
    def cumulative(self) -> Cumulative:
        return cumulative_verdict(self.verdicts.values())

    @property
    def evidence(self) -> List[Dict[str, Any]]:
        """Witness records of every legitimizing filter."""
        return [
            {"filter": name, **record}
            for name, verdict in self.verdicts.items()
            if verdict.is_legitimate
            for record in verdict.evidence
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alarm_ref": self.alarm_ref,
            "alarm": self.alarm.to_dict(),
            "irr": self.irr.to_dict(),
            "topology": self.topology.to_dict(),
            "tls": self.tls.to_dict(),
            "cumulative": self.cumulative.value,
            "evidence": self.evidence,
            "occurrence_count": self.occurrence_count,
            "tls_hosts": self.tls_hosts,
            "irr_registries": {name: asdict(outcome) for name, outcome in sorted(self.irr_registries.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Assessment":
        return cls(
            alarm=parse_alarm(data["alarm"]),
            irr=FilterVerdict.from_dict(data["irr"]),
            topology=FilterVerdict.from_dict(data["topology"]),
            tls=FilterVerdict.from_dict(data["tls"]),
            occurrence_count=data.get("occurrence_count", 1),
            tls_hosts=data.get("tls_hosts", 0),
            irr_registries={
                name: RegistryOutcome(**outcome) for name, outcome in data.get("irr_registries", {}).items()
            },
        )


@dataclass
class Stores:
    """Read-only inputs shared by all filters. Any store may be missing."""

    tree: Optional[PrefixTree] = None
    journal: Optional[Journal] = None
    irr: Optional[IrrGraph] = None
    snapshots: Optional[SnapshotStore] = None
    ground_truth: Optional[GroundTruth] = None
    scanner: Optional[Scanner] = None
    path_sets: Dict[EventKey, PathSet] = field(default_factory=dict)
    known_events: Set[EventKey] = field(default_factory=set)

    def irr_graph(self, tag: Optional[str] = None) -> Optional[IrrGraph]:
        """The tagged snapshot (latest when tag is None), else the fixed graph."""
        if self.snapshots is not None:
            return self.snapshots.get(tag)
        return self.irr


@dataclass
class AssessmentSettings:
    max_depth: int = DEFAULT_MAX_DEPTH
    parallelism: int = 4
    tls_parallelism: int = DEFAULT_PARALLELISM
    per_target_timeout: float = DEFAULT_PER_TARGET_TIMEOUT
    event_budget: float = DEFAULT_EVENT_BUDGET
    journal_retention_hours: int = DEFAULT_RETENTION_HOURS
    seed: int = 0
    miss_rate: float = 0.0
    irr_tag: Optional[str] = None

    @classmethod
    def from_config(cls, config) -> "AssessmentSettings":
        return cls(
            max_depth=config.get_max_depth(),
            parallelism=config.get("assess.parallelism", 4),
            tls_parallelism=config.get("tls.parallelism", DEFAULT_PARALLELISM),
            per_target_timeout=config.get("tls.per_target_timeout", DEFAULT_PER_TARGET_TIMEOUT),
            event_budget=config.get("tls.event_budget", DEFAULT_EVENT_BUDGET),
            journal_retention_hours=config.get("rib.journal_retention_hours", DEFAULT_RETENTION_HOURS),
            seed=config.get_seed(),
            miss_rate=config.get("tls.miss_rate", 0.0),
            irr_tag=config.get_irr_tag(),
        )


class AssessmentService:
    """Evaluates alarms against a set of read-only stores."""

    def __init__(self, stores: Stores, settings: Optional[AssessmentSettings] = None):
        self.stores = stores
        self.settings = settings or AssessmentSettings()
        self._filters = ThreadPoolExecutor(
            max_workers=3 * max(1, self.settings.parallelism), thread_name_prefix="filter"
        )

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._filters.shutdown(wait=True)

    def assess(self, alarm: Alarm, occurrence_count: int = 1) -> Assessment:
        """Run the three filters concurrently for one alarm."""
        graph = self.stores.irr_graph(self.settings.irr_tag)
        irr = self._filters.submit(irr_filter, graph, alarm, self.settings.max_depth)
        topology = self._filters.submit(self._topology, alarm)
        tls = self._filters.submit(self._tls, alarm)

        tls_verdict, tls_hosts = tls.result()
        return Assessment(
            alarm=alarm,
            irr=irr.result(),
            topology=topology.result(),
            tls=tls_verdict,
            occurrence_count=occurrence_count,
            tls_hosts=tls_hosts,
            irr_registries=registry_breakdown(graph, alarm, self.settings.max_depth),
        )

    def assess_many(self, alarms: Sequence[Tuple[Alarm, int]]) -> List[Assessment]:
        """Assess (alarm, occurrence count) pairs; results keep input order."""
        if not alarms:
            return []
        with ThreadPoolExecutor(max_workers=max(1, self.settings.parallelism), thread_name_prefix="alarm") as pool:
            return list(pool.map(lambda item: self.assess(*item), alarms))

    def _topology(self, alarm: Alarm) -> FilterVerdict:
        paths = self.stores.path_sets.get(alarm.key)
        if paths is None:
            if self.stores.tree is None:
                return FilterVerdict.not_covered("no routing data")
            paths = collect_paths(self.stores.tree, alarm)
        return topology_filter(paths, alarm.victim_as, alarm.attacker_as)

    def _tls(self, alarm: Alarm) -> Tuple[FilterVerdict, int]:
        if alarm.key not in self.stores.known_events:
            return FilterVerdict.not_covered("event not observed in the feed"), 0
        gt = self.stores.ground_truth
        hosts = len(gt.hosts_in(alarm.attacker_subprefix)) if gt is not None else 0
        verdict = tls_filter(
            gt,
            self.stores.scanner,
            alarm,
            self.stores.journal,
            parallelism=self.settings.tls_parallelism,
            per_target_timeout=self.settings.per_target_timeout,
            event_budget=self.settings.event_budget,
        )
        return verdict, hosts


@dataclass
class FilterCounts:
    covered: int = 0
    legitimate: int = 0


@dataclass
class RunReport:
    """Aggregate statistics of one assessment run."""

    total_events: int = 0
    filters: Dict[str, FilterCounts] = field(default_factory=lambda: {name: FilterCounts() for name in FILTERS})
    cumulative_legitimate_distinct: int = 0
    cumulative_suspicious: int = 0
    cumulative_not_covered: int = 0
    single_filter_unique: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in FILTERS})
    covered_events: int = 0
    recurrence_mean: float = 0.0
    recurrence_max: int = 0
    rejected_alarms: int = 0
    rejection_reasons: Dict[str, int] = field(default_factory=dict)
    irr_registries: Dict[str, Dict[str, int]] = field(default_factory=dict)
    tls_outcomes: Dict[str, int] = field(default_factory=dict)
    tls_hosts_mean: float = 0.0
    tls_hosts_max: int = 0
    tls_protocols: Dict[str, int] = field(default_factory=dict)
    focus_hosts: bool = False

    @property
    def coverage(self) -> float:
        return self.covered_events / self.total_events if self.total_events else 0.0

    def check(self):
        """Verify the accounting invariants."""
        if self.cumulative_legitimate_distinct > sum(c.legitimate for c in self.filters.values()):
            raise ValueError("cumulative legitimate exceeds the per-filter sum")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage out of range: {self.coverage}")
        totals = self.cumulative_legitimate_distinct + self.cumulative_suspicious + self.cumulative_not_covered
        if totals != self.total_events:
            raise ValueError("cumulative classes do not add up to the event total")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["coverage"] = self.coverage
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        data = dict(data)
        data.pop("coverage", None)
        data["filters"] = {name: FilterCounts(**counts) for name, counts in data.get("filters", {}).items()}
        return cls(**data)


def _tls_outcome(verdict: FilterVerdict) -> Optional[str]:
    if verdict.status is VerdictStatus.NOT_COVERED:
        return None
    if verdict.status is VerdictStatus.LEGITIMATE:
        return "same_key"
    if verdict.status is VerdictStatus.DISCARDED:
        return "discarded"
    outcomes = {record.get("outcome") for record in verdict.evidence}
    if ScanOutcome.KEY.value in outcomes:
        return "different_key"
    if ScanOutcome.PORT_CLOSED.value in outcomes:
        return "no_response"
    if ScanOutcome.HANDSHAKE_FAILED.value in outcomes:
        return "handshake_failed"
    return "timeout"


def build_report(
    assessments: Sequence[Assessment],
    rejected: Sequence[AlarmRejected] = (),
    focus_hosts: bool = False,
) -> RunReport:
    """Aggregate assessments into a RunReport and check its invariants."""
    report = RunReport(total_events=len(assessments), focus_hosts=focus_hosts)

    legitimate_by: Dict[str, Set[str]] = {name: set() for name in FILTERS}
    for assessment in assessments:
        for name, verdict in assessment.verdicts.items():
            if verdict.is_covered:
                report.filters[name].covered += 1
            if verdict.is_legitimate:
                report.filters[name].legitimate += 1
                legitimate_by[name].add(assessment.alarm_ref)

        cumulative = assessment.cumulative
        if cumulative is Cumulative.LEGITIMATE:
            legitimized = [name for name, v in assessment.verdicts.items() if v.is_legitimate]
            if len(legitimized) == 1:
                report.single_filter_unique[legitimized[0]] += 1
        elif cumulative is Cumulative.SUSPICIOUS:
            report.cumulative_suspicious += 1
        else:
            report.cumulative_not_covered += 1
        if cumulative is not Cumulative.NOT_COVERED:
            report.covered_events += 1

    # distinct legitimate events are the union of per-filter sets
    report.cumulative_legitimate_distinct = len(set().union(*legitimate_by.values()))

    counts = [a.occurrence_count for a in assessments]
    if counts:
        report.recurrence_mean = sum(counts) / len(counts)
        report.recurrence_max = max(counts)

    report.rejected_alarms = len(rejected)
    report.rejection_reasons = dict(sorted(Counter(r.reason for r in rejected).items()))

    registries: Dict[str, Dict[str, int]] = {}
    for assessment in assessments:
        for name, outcome in assessment.irr_registries.items():
            row = registries.setdefault(name, {"covered": 0, "business": 0, "holdership": 0, "legitimate": 0})
            row["covered"] += outcome.covered
            row["business"] += outcome.business
            row["holdership"] += outcome.holdership
            row["legitimate"] += outcome.legitimate
    report.irr_registries = dict(sorted(registries.items()))

    tls_outcomes: Counter = Counter()
    protocols: Counter = Counter()
    hosts = []
    for assessment in assessments:
        outcome = _tls_outcome(assessment.tls)
        if outcome is None:
            continue
        tls_outcomes[outcome] += 1
        hosts.append(assessment.tls_hosts)
        if assessment.tls.is_legitimate:
            protocols.update({record["protocol"] for record in assessment.tls.evidence if "protocol" in record})
    report.tls_outcomes = dict(sorted(tls_outcomes.items()))
    report.tls_protocols = dict(sorted(protocols.items()))
    if hosts:
        report.tls_hosts_mean = sum(hosts) / len(hosts)
        report.tls_hosts_max = max(hosts)

    report.check()
    return report


@dataclass
class BatchInputs:
    """
    File inputs of one batch run.

    alarms=None means self-detect. live_scan scans the network when no
    scanner fixture is given.
    """

    feed: Union[str, Path]
    irr: Sequence[Union[str, Path]] = ()
    ground_truth: Optional[Union[str, Path]] = None
    scanner_fixture: Optional[Union[str, Path]] = None
    alarms: Optional[Union[str, Path]] = None
    table_dump: Optional[Union[str, Path]] = None
    focus_hosts: Optional[Union[str, Path]] = None
    irr_tag: Optional[str] = None
    live_scan: bool = False

    def paths(self) -> List[Path]:
        found = [self.feed, *self.irr, self.ground_truth, self.scanner_fixture,
                 self.alarms, self.table_dump, self.focus_hosts]
        return [Path(p) for p in found if p is not None]


@dataclass
class BatchResult:
    report: RunReport
    assessments: List[Assessment]
    engine: RibEngine


def read_focus_hosts(path: Union[str, Path]) -> List[ipaddress.IPv4Address]:
    hosts = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            text = line.split("#", 1)[0].strip()
            if text:
                hosts.append(ipaddress.IPv4Address(text))
    return hosts


def replay_feed(engine: RibEngine, updates) -> Dict[EventKey, PathSet]:
    """
    Replay updates, capturing each event's paths at the time it opens.

    Paths of recurring events are merged across occurrences.
    """
    path_sets: Dict[EventKey, PathSet] = {}
    for update in updates:
        for event in engine.apply_update(update).opened:
            paths = collect_paths(engine.tree, event)
            current = path_sets.get(event.key)
            path_sets[event.key] = paths if current is None else current.union(paths)
    return path_sets


def prepare_stores(
    inputs: BatchInputs, settings: Optional[AssessmentSettings] = None
) -> Tuple[Stores, RibEngine]:
    """
    Load every input and replay the feed into read-only stores.

    Raises:
        FileNotFoundError: If any input file is missing (checked before processing)
    """
    settings = settings or AssessmentSettings()
    for path in inputs.paths():
        if not path.is_file():
            raise FileNotFoundError(f"Input file not found: {path}")

    engine = RibEngine(retention_seconds=settings.journal_retention_hours * 3600)
    path_sets: Dict[EventKey, PathSet] = {}

    if inputs.table_dump:
        dump, _ = read_feed(inputs.table_dump)
        summary = engine.load_table_dump(dump)
        for event in summary.opened:
            path_sets[event.key] = collect_paths(engine.tree, event)

    updates, diagnostics = read_feed(inputs.feed)
    log.info("Replaying %d updates (%d records skipped)", len(updates), len(diagnostics))
    for key, paths in replay_feed(engine, updates).items():
        path_sets[key] = path_sets[key].union(paths) if key in path_sets else paths

    snapshots = SnapshotStore()
    if inputs.irr:
        snapshots.load(inputs.irr_tag or DEFAULT_IRR_TAG, inputs.irr)

    ground_truth = None
    if inputs.ground_truth:
        observations, _ = read_observations(inputs.ground_truth)
        ground_truth = sanitize_ground_truth(build_ground_truth(observations), engine.journal)

    scanner = None
    if inputs.scanner_fixture:
        scanner = SimulatedScanner.from_file(inputs.scanner_fixture, settings.seed, settings.miss_rate)
    elif inputs.live_scan:
        scanner = RealScanner(clock=journal_clock(engine.journal))

    stores = Stores(
        tree=engine.snapshot(),
        journal=engine.journal,
        snapshots=snapshots,
        ground_truth=ground_truth,
        scanner=scanner,
        path_sets=path_sets,
        known_events={event.key for event in engine.events()},
    )
    return stores, engine


def run_batch(inputs: BatchInputs, settings: Optional[AssessmentSettings] = None) -> BatchResult:
    """
    Replay a feed, assess every alarm and aggregate the run report.

    Without an alarm file every strict subMOAS found in the feed is assessed.

    Raises:
        FileNotFoundError: If any input file is missing (checked before processing)
    """
    settings = settings or AssessmentSettings()
    stores, engine = prepare_stores(inputs, settings)

    rejected: List[AlarmRejected] = []
    if inputs.alarms is None:
        events = dedupe_events(engine.events())
        grouped = [(_alarm_from_event(event), event.occurrence_count) for event in events]
    else:
        alarms, rejected = read_alarms(inputs.alarms)
        grouped = _group_alarms(alarms)

    if inputs.focus_hosts:
        focus = read_focus_hosts(inputs.focus_hosts)
        grouped = [
            (alarm, count) for alarm, count in grouped
            if any(host in alarm.attacker_subprefix for host in focus)
        ]

    with AssessmentService(stores, settings) as service:
        assessments = service.assess_many(grouped)

    report = build_report(assessments, rejected, focus_hosts=bool(inputs.focus_hosts))
    return BatchResult(report, assessments, engine)


def _alarm_from_event(event) -> Alarm:
    return Alarm(
        victim_as=event.victim_as,
        victim_prefix=event.victim_prefix,
        attacker_as=event.attacker_as,
        attacker_subprefix=event.attacker_subprefix,
        reported_at=event.first_seen,
        source="self-detect",
    )


def _group_alarms(alarms: Sequence[Alarm]) -> List[Tuple[Alarm, int]]:
    """Collapse recurring alarms (same 4-tuple) keeping the earliest report."""
    first: Dict[EventKey, Alarm] = {}
    counts: Counter = Counter()
    for alarm in alarms:
        counts[alarm.key] += 1
        if alarm.key not in first or alarm.reported_at < first[alarm.key].reported_at:
            first[alarm.key] = alarm
    return [(first[key], counts[key]) for key in sorted(first, key=lambda k: (first[k].reported_at, k))]
