"""TLS key-stability validation.

A ground-truth store maps (address, port) to the SHA-256 fingerprint of the
server's public key, keeping only keys that identify a single host. During an
event the hosts inside the attacker subprefix are scanned again; an unchanged
key on a stable event legitimizes it.
"""

import ftplib
import imaplib
import ipaddress
import logging
import poplib
import random
import smtplib
import socket
import ssl
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Tuple, Union

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization

from hijackvet.core.errors import Diagnostic, JournalCoverageError
from hijackvet.core.rib_engine import Journal, event_stable_during
from hijackvet.core.routing_model import Prefix
from hijackvet.core.verdicts import FilterVerdict

log = logging.getLogger(__name__)

FINGERPRINT_BYTES = 32

# Default ports per protocol label; STARTTLS labels upgrade a plaintext session
PROTOCOL_PORTS = {
    "https": 443,
    "smtps": 465,
    "imaps": 993,
    "pop3s": 995,
    "ftps": 990,
    "ldaps": 636,
    "xmpps-client": 5223,
    "xmpps-server": 5270,
    "ircs": 6697,
    "ftp-starttls": 21,
    "smtp-starttls": 25,
    "pop3-starttls": 110,
    "imap-starttls": 143,
    "submission-starttls": 587,
}
PROTOCOLS = frozenset(PROTOCOL_PORTS)

DEFAULT_PER_TARGET_TIMEOUT = 10.0
DEFAULT_EVENT_BUDGET = 900.0
DEFAULT_PARALLELISM = 8


def fingerprint_public_key(cert_der: bytes) -> bytes:
    """SHA-256 over the DER-encoded SubjectPublicKeyInfo of a certificate."""
    cert = x509.load_der_x509_certificate(cert_der)
    spki = cert.public_key().public_bytes(
        encoding=serialization.Encoding.DER,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    )
    digest = hashes.Hash(hashes.SHA256())
    digest.update(spki)
    return digest.finalize()


@dataclass(frozen=True)
class KeyObservation:
    address: ipaddress.IPv4Address
    port: int
    protocol: str
    key_fingerprint: bytes
    observed_at: int

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"Port out of range: {self.port}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"Unknown protocol label '{self.protocol}'")
        if len(self.key_fingerprint) != FINGERPRINT_BYTES:
            raise ValueError(
                f"Fingerprint must be {FINGERPRINT_BYTES} bytes, got {len(self.key_fingerprint)}"
            )

    @property
    def target(self) -> Tuple[ipaddress.IPv4Address, int]:
        return self.address, self.port

    def to_line(self) -> str:
        return f"{self.address} {self.port} {self.protocol} {self.key_fingerprint.hex()} {self.observed_at}"


def parse_observation(line: str) -> Optional[KeyObservation]:
    """
    Parse `<ipv4> <port> <protocol> <hex-fingerprint> <unix_ts>`.

    Returns:
        KeyObservation, or None for blank and comment lines

    Raises:
        ValueError: If the line is malformed
    """
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    fields = text.split()
    if len(fields) != 5:
        raise ValueError(f"expected 5 fields, got {len(fields)}")
    address, port, protocol, fingerprint, ts = fields
    return KeyObservation(
        address=ipaddress.IPv4Address(address),
        port=int(port),
        protocol=protocol.lower(),
        key_fingerprint=bytes.fromhex(fingerprint),
        observed_at=int(ts),
    )


def read_observations(path: Union[str, Path]) -> Tuple[List[KeyObservation], List[Diagnostic]]:
    """
    Read a ground-truth scan file.

    Raises:
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Ground-truth file not found: {path}")
    observations, diagnostics = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            try:
                observation = parse_observation(line)
            except ValueError as e:
                diagnostic = Diagnostic(path.name, str(e), line_no)
                log.warning("%s", diagnostic)
                diagnostics.append(diagnostic)
                continue
            if observation is not None:
                observations.append(observation)
    return observations, diagnostics


@dataclass(frozen=True)
class GroundTruthEntry:
    key_fingerprint: bytes
    protocol: str
    observed_at: int


@dataclass(frozen=True)
class GroundTruth:
    """Known-correct (address, port) -> key mapping. Not modified after build."""

    entries: Dict[Tuple[ipaddress.IPv4Address, int], GroundTruthEntry] = field(default_factory=dict)
    built_at: int = 0
    excluded_duplicates: int = 0
    sanitized_hosts: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, address, port: int) -> Optional[GroundTruthEntry]:
        return self.entries.get((ipaddress.IPv4Address(address), port))

    def hosts_in(self, prefix: Prefix) -> List[Tuple[ipaddress.IPv4Address, int, GroundTruthEntry]]:
        """Entries inside a prefix, HTTPS first, then by address and port."""
        found = [
            (address, port, entry)
            for (address, port), entry in self.entries.items()
            if address in prefix
        ]
        return sorted(found, key=lambda t: (t[2].protocol != "https", t[0], t[1]))

    def is_unique(self) -> bool:
        """Every fingerprint identifies a single address."""
        owners: Dict[bytes, set] = {}
        for (address, _), entry in self.entries.items():
            owners.setdefault(entry.key_fingerprint, set()).add(address)
        return all(len(addresses) == 1 for addresses in owners.values())


def build_ground_truth(observations: Iterable[KeyObservation]) -> GroundTruth:
    """
    Build the ground-truth store from scan observations.

    The latest observation per (address, port) wins. Fingerprints seen on
    more than one address are dropped from every entry carrying them; a key
    shared by several ports of one address is kept.
    """
    latest: Dict[Tuple[ipaddress.IPv4Address, int], KeyObservation] = {}
    for observation in observations:
        current = latest.get(observation.target)
        if current is None or observation.observed_at >= current.observed_at:
            latest[observation.target] = observation

    owners: Dict[bytes, set] = {}
    for observation in latest.values():
        owners.setdefault(observation.key_fingerprint, set()).add(observation.address)

    entries = {}
    excluded = 0
    for target, observation in sorted(latest.items()):
        if len(owners[observation.key_fingerprint]) > 1:
            excluded += 1
            continue
        entries[target] = GroundTruthEntry(
            observation.key_fingerprint, observation.protocol, observation.observed_at
        )

    built_at = max((o.observed_at for o in latest.values()), default=0)
    log.info("Ground truth: %d entries, %d excluded as shared keys", len(entries), excluded)
    return GroundTruth(entries=entries, built_at=built_at, excluded_duplicates=excluded)


def sanitize_ground_truth(gt: GroundTruth, journal: Journal) -> GroundTruth:
    """
    Drop hosts that sat inside a subMOAS-affected subprefix when they were scanned.

    Raises:
        JournalCoverageError: If an observation time is outside the journal
    """
    open_cache: Dict[int, list] = {}
    kept = {}
    for target, entry in gt.entries.items():
        if entry.observed_at not in open_cache:
            open_cache[entry.observed_at] = [key.attacker_subprefix for key in journal.open_at(entry.observed_at)]
        if any(target[0] in prefix for prefix in open_cache[entry.observed_at]):
            log.debug("Ground truth host %s:%d removed, inside a conflict", *target)
            continue
        kept[target] = entry
    removed = len(gt.entries) - len(kept)
    return replace(gt, entries=kept, sanitized_hosts=gt.sanitized_hosts + removed)


class ScanOutcome(Enum):
    KEY = "key"
    PORT_CLOSED = "closed"
    HANDSHAKE_FAILED = "failed"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ScanResult:
    address: ipaddress.IPv4Address
    port: int
    protocol: str
    outcome: ScanOutcome
    observed_at: int
    key_fingerprint: Optional[bytes] = None

    def to_dict(self, expected: Optional[bytes] = None) -> Dict:
        data = {
            "address": str(self.address),
            "port": self.port,
            "protocol": self.protocol,
            "outcome": self.outcome.value,
            "observed_at": self.observed_at,
        }
        if self.key_fingerprint is not None:
            data["fingerprint"] = self.key_fingerprint.hex()
            data["match"] = self.key_fingerprint == expected
        return data


class Scanner(Protocol):
    """Fetches the current public key of one TLS endpoint without touching the store."""

    def scan(self, address: ipaddress.IPv4Address, port: int, protocol: str, timeout: float) -> ScanResult:
        ...


class SimulatedScanner:
    """
    Scanner replaying scripted responses from a fixture.

    Fixture lines: `<ipv4> <port> <protocol> <hex-fingerprint|-> <unix_ts> <outcome>`
    with outcome one of key, closed, failed, timeout. Responses for a target
    are returned in file order; the last one repeats. Targets missing from
    the fixture answer PortClosed.
    """

    def __init__(self, script: Dict[Tuple[ipaddress.IPv4Address, int], List[ScanResult]],
                 seed: int = 0, miss_rate: float = 0.0):
        """
        Initialize SimulatedScanner.

        Args:
            script: Responses per (address, port)
            seed: Seed for simulated packet loss
            miss_rate: Probability that a key response is lost as a timeout
        """
        self.script = script
        self.seed = seed
        self.miss_rate = miss_rate
        self.calls: Dict[Tuple[ipaddress.IPv4Address, int], int] = {}
        self._lock = threading.Lock()
        self._fallback_time = max(
            (r.observed_at for responses in script.values() for r in responses), default=0
        )

    @classmethod
    def from_file(cls, path: Union[str, Path], seed: int = 0, miss_rate: float = 0.0) -> "SimulatedScanner":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Scanner fixture not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_lines(f, seed, miss_rate, source=path.name)

    @classmethod
    def from_lines(cls, lines: Iterable[str], seed: int = 0, miss_rate: float = 0.0,
                   source: str = "scanner-fixture") -> "SimulatedScanner":
        script: Dict[Tuple[ipaddress.IPv4Address, int], List[ScanResult]] = {}
        for line_no, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            try:
                if len(fields) != 6:
                    raise ValueError(f"expected 6 fields, got {len(fields)}")
                address = ipaddress.IPv4Address(fields[0])
                outcome = ScanOutcome(fields[5].lower())
                fingerprint = None if fields[3] == "-" else bytes.fromhex(fields[3])
                if outcome is ScanOutcome.KEY and (fingerprint is None or len(fingerprint) != FINGERPRINT_BYTES):
                    raise ValueError("key outcome needs a 32-byte fingerprint")
                result = ScanResult(address, int(fields[1]), fields[2].lower(), outcome, int(fields[4]),
                                    fingerprint if outcome is ScanOutcome.KEY else None)
            except ValueError as e:
                log.warning("%s", Diagnostic(source, str(e), line_no))
                continue
            script.setdefault((address, result.port), []).append(result)
        return cls(script, seed, miss_rate)

    def scan(self, address, port: int, protocol: str, timeout: float) -> ScanResult:
        target = (ipaddress.IPv4Address(address), port)
        with self._lock:
            n = self.calls.get(target, 0)
            self.calls[target] = n + 1

        responses = self.script.get(target)
        if not responses:
            return ScanResult(target[0], port, protocol, ScanOutcome.PORT_CLOSED, self._fallback_time)
        result = responses[min(n, len(responses) - 1)]

        if result.outcome is ScanOutcome.KEY and self.miss_rate > 0:
            rng = random.Random(f"{self.seed}:{target[0]}:{port}:{n}")
            if rng.random() < self.miss_rate:
                return replace(result, outcome=ScanOutcome.TIMEOUT, key_fingerprint=None)
        return result


class RealScanner:
    """Network scanner: implicit TLS, or STARTTLS through the protocol's client library."""

    def __init__(self, clock=time.time):
        self.clock = clock
        self.context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        self.context.check_hostname = False
        self.context.verify_mode = ssl.CERT_NONE

    def scan(self, address, port: int, protocol: str, timeout: float) -> ScanResult:
        host = str(address)
        try:
            cert_der = self._fetch(host, port, protocol, timeout)
        except ConnectionRefusedError:
            return self._result(address, port, protocol, ScanOutcome.PORT_CLOSED)
        except (socket.timeout, TimeoutError):
            return self._result(address, port, protocol, ScanOutcome.TIMEOUT)
        except (ssl.SSLError, smtplib.SMTPException, imaplib.IMAP4.error,
                poplib.error_proto, ftplib.Error, ValueError):
            return self._result(address, port, protocol, ScanOutcome.HANDSHAKE_FAILED)
        except OSError:
            return self._result(address, port, protocol, ScanOutcome.PORT_CLOSED)

        if not cert_der:
            return self._result(address, port, protocol, ScanOutcome.HANDSHAKE_FAILED)
        return self._result(address, port, protocol, ScanOutcome.KEY, fingerprint_public_key(cert_der))

    def _fetch(self, host: str, port: int, protocol: str, timeout: float) -> Optional[bytes]:
        if protocol == "smtp-starttls" or protocol == "submission-starttls":
            with smtplib.SMTP(host, port, timeout=timeout) as client:
                client.starttls(context=self.context)
                return client.sock.getpeercert(binary_form=True)
        if protocol == "imap-starttls":
            client = imaplib.IMAP4(host, port, timeout=timeout)
            try:
                client.starttls(ssl_context=self.context)
                return client.sock.getpeercert(binary_form=True)
            finally:
                client.shutdown()
        if protocol == "pop3-starttls":
            client = poplib.POP3(host, port, timeout=timeout)
            try:
                client.stls(context=self.context)
                return client.sock.getpeercert(binary_form=True)
            finally:
                client.close()
        if protocol == "ftp-starttls":
            client = ftplib.FTP_TLS(context=self.context, timeout=timeout)
            try:
                client.connect(host, port)
                client.auth()
                return client.sock.getpeercert(binary_form=True)
            finally:
                client.close()

        with socket.create_connection((host, port), timeout=timeout) as sock:
            with self.context.wrap_socket(sock) as tls_sock:
                return tls_sock.getpeercert(binary_form=True)

    def _result(self, address, port, protocol, outcome, fingerprint=None) -> ScanResult:
        return ScanResult(ipaddress.IPv4Address(address), port, protocol, outcome, int(self.clock()), fingerprint)


def journal_clock(journal: Journal, wall=time.time):
    """
    Clock placing live scans on the feed timeline.

    Time starts at the journal's current end and runs with the wall clock.
    Each reading advances the journal, since no update arrived meanwhile.
    """
    wall_start = wall()
    feed_start = journal.end or 0

    def clock() -> int:
        t = feed_start + int(wall() - wall_start)
        journal.advance_clock(t)
        return t

    return clock


def _scan_target(scanner: Scanner, address, port: int, protocol: str, timeout: float) -> ScanResult:
    try:
        return scanner.scan(address, port, protocol, timeout)
    except Exception as e:
        log.error("Scanner error on %s:%d: %s", address, port, e)
        return ScanResult(address, port, protocol, ScanOutcome.HANDSHAKE_FAILED, 0)


def tls_filter(
    gt: Optional[GroundTruth],
    scanner: Optional[Scanner],
    e,
    journal: Optional[Journal],
    parallelism: int = DEFAULT_PARALLELISM,
    per_target_timeout: float = DEFAULT_PER_TARGET_TIMEOUT,
    event_budget: float = DEFAULT_EVENT_BUDGET,
) -> FilterVerdict:
    """
    Compare keys served from inside the attacker subprefix against ground truth.

    Targets are scanned in batches of `parallelism`; scanning stops after the
    first batch containing a matching key. The verdict is Discarded whenever
    the event was not stable over the scan interval, whatever the keys say.
    """
    if gt is None or scanner is None:
        return FilterVerdict.not_covered("no ground truth or scanner")

    targets = gt.hosts_in(e.attacker_subprefix)
    if not targets:
        return FilterVerdict.not_covered("no ground-truth hosts in the subprefix")

    started = time.monotonic()
    results: List[ScanResult] = []
    matched = False
    exhausted = False

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as executor:
        for offset in range(0, len(targets), max(1, parallelism)):
            if time.monotonic() - started > event_budget:
                exhausted = True
                break
            batch = targets[offset:offset + max(1, parallelism)]
            futures = {
                executor.submit(_scan_target, scanner, address, port, entry.protocol, per_target_timeout): (address, port)
                for address, port, entry in batch
            }
            batch_results = [future.result() for future in as_completed(futures)]
            results.extend(sorted(batch_results, key=lambda r: (r.address, r.port)))
            if any(_matches(gt, r) for r in batch_results):
                matched = True
                break

    evidence = [r.to_dict(gt.get(r.address, r.port).key_fingerprint) for r in results]

    if not results:
        return FilterVerdict.inconclusive("scan budget exhausted", [{"outcome": "timeout"}])
    if all(r.outcome is ScanOutcome.TIMEOUT for r in results):
        return FilterVerdict.inconclusive("all targets timed out", evidence)

    # observed_at 0 marks a failed scan with no scan time; it cannot witness stability
    stamped = [r.observed_at for r in results if r.observed_at]
    if stamped:
        if journal is None:
            return FilterVerdict.discarded("no update journal to check stability", evidence)
        try:
            stable = event_stable_during(journal, e, (min(stamped), max(stamped)))
        except JournalCoverageError as err:
            return FilterVerdict.discarded(f"scan outside journal: {err}", evidence)
        if not stable:
            return FilterVerdict.discarded("event changed during scan", evidence)

    if matched:
        return FilterVerdict.legitimate(
            "same key as ground truth", [d for d in evidence if d.get("match")]
        )
    if exhausted:
        return FilterVerdict.inconclusive("scan budget exhausted", evidence)
    if any(r.outcome is ScanOutcome.KEY for r in results):
        return FilterVerdict.inconclusive("different key", evidence)
    if any(r.outcome is ScanOutcome.PORT_CLOSED for r in results):
        return FilterVerdict.inconclusive("no response", evidence)
    return FilterVerdict.inconclusive("handshake failed", evidence)


def _matches(gt: GroundTruth, result: ScanResult) -> bool:
    if result.outcome is not ScanOutcome.KEY or not result.observed_at:
        return False
    entry = gt.get(result.address, result.port)
    return entry is not None and entry.key_fingerprint == result.key_fingerprint
