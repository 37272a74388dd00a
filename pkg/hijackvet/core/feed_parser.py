"""BGP feed parser for the line-oriented text format and MRT dumps."""

import gzip
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, TextIO, Tuple, Union

from hijackvet.core.errors import AsPathError, Diagnostic, FeedFormatError, PrefixError
from hijackvet.core.routing_model import Asn, Prefix, parse_path, parse_prefix

log = logging.getLogger(__name__)


class UpdateKind(Enum):
    ANNOUNCE = "A"
    WITHDRAW = "W"


@dataclass(frozen=True)
class BgpUpdate:
    """A single announcement or withdrawal observed by a collector peer."""

    timestamp: int
    kind: UpdateKind
    prefix: Prefix
    peer: Asn
    path: tuple = field(default=())

    def __post_init__(self):
        if self.kind is UpdateKind.ANNOUNCE and not self.path:
            raise FeedFormatError(f"announcement of {self.prefix} without AS path")
        if self.kind is UpdateKind.WITHDRAW and self.path:
            raise FeedFormatError(f"withdrawal of {self.prefix} carries an AS path")

    @property
    def origin(self) -> Optional[Asn]:
        return self.path[-1] if self.path else None

    def to_line(self) -> str:
        """Render the update in the canonical text feed format."""
        parts = [str(self.timestamp), self.kind.value, str(self.prefix), str(self.peer)]
        parts.extend(str(asn) for asn in self.path)
        return " ".join(parts)

    def to_dict(self) -> Dict:
        return {
            "timestamp": self.timestamp,
            "kind": self.kind.value,
            "prefix": str(self.prefix),
            "peer": int(self.peer),
            "path": [int(asn) for asn in self.path],
        }


def announce(timestamp: int, prefix, peer: int, path: Iterable[int]) -> BgpUpdate:
    """Shorthand constructor for an announcement."""
    return BgpUpdate(
        timestamp=int(timestamp),
        kind=UpdateKind.ANNOUNCE,
        prefix=parse_prefix(prefix),
        peer=Asn(peer),
        path=tuple(Asn(asn) for asn in path),
    )


def withdraw(timestamp: int, prefix, peer: int) -> BgpUpdate:
    """Shorthand constructor for a withdrawal."""
    return BgpUpdate(
        timestamp=int(timestamp),
        kind=UpdateKind.WITHDRAW,
        prefix=parse_prefix(prefix),
        peer=Asn(peer),
    )


def _open_text(path: Union[str, Path]) -> TextIO:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


class FeedParser:
    """Parse BGP feeds into BgpUpdate records, collecting per-record diagnostics."""

    def __init__(self, source: str = "feed"):
        """
        Initialize FeedParser.

        Args:
            source: Label used in diagnostics (usually the file name)
        """
        self.source = source
        self.diagnostics: List[Diagnostic] = []

    @property
    def error_count(self) -> int:
        return len(self.diagnostics)

    def parse_line(self, line: str, line_no: int = 0) -> Optional[BgpUpdate]:
        """
        Parse one line of the text feed format.

        Format: <unix_ts> <A|W> <prefix> <peer_asn> [<asn> ...]

        Returns:
            BgpUpdate, or None for blank and comment lines

        Raises:
            FeedFormatError: If the line is malformed
        """
        text = line.split("#", 1)[0].strip()
        if not text:
            return None

        fields = text.split()
        if len(fields) < 4:
            raise FeedFormatError(f"expected at least 4 fields, got {len(fields)}", line_no)

        ts_text, kind_text, prefix_text, peer_text = fields[:4]
        try:
            timestamp = int(ts_text)
        except ValueError:
            raise FeedFormatError(f"invalid timestamp '{ts_text}'", line_no)

        try:
            kind = UpdateKind(kind_text.upper())
        except ValueError:
            raise FeedFormatError(f"invalid update kind '{kind_text}'", line_no)

        try:
            prefix = parse_prefix(prefix_text)
            peer = Asn(peer_text)
            path = parse_path(fields[4:])
        except (PrefixError, AsPathError) as e:
            raise FeedFormatError(str(e), line_no)

        return BgpUpdate(timestamp=timestamp, kind=kind, prefix=prefix, peer=peer, path=path)

    def read(self, lines: Iterable[str]) -> Iterator[BgpUpdate]:
        """
        Parse a stream of lines, skipping malformed records.

        Yields:
            BgpUpdate for every well-formed record
        """
        for line_no, line in enumerate(lines, start=1):
            try:
                update = self.parse_line(line, line_no)
            except FeedFormatError as e:
                self._diagnose(str(e), line_no)
                continue
            if update is not None:
                yield update

    def read_file(self, path: Union[str, Path]) -> List[BgpUpdate]:
        """
        Read a text feed file (optionally gzip-compressed).

        Raises:
            FileNotFoundError: If the file does not exist
        """
        with _open_text(path) as f:
            return list(self.read(f))

    def read_mrt(self, path: Union[str, Path]) -> List[BgpUpdate]:
        """
        Read an MRT file (TABLE_DUMP_V2 or BGP4MP) into updates.

        RIB entries become announcements; BGP4MP UPDATE messages become
        announcements and withdrawals. IPv6 and non-UPDATE records are skipped.
        """
        import mrtparse

        updates: List[BgpUpdate] = []
        peers: Dict[int, Asn] = {}

        for index, entry in enumerate(mrtparse.Reader(str(path)), start=1):
            data = entry.data
            mrt_type = _code(data.get("type"))
            subtype = _code(data.get("subtype"))
            timestamp = _code(data.get("timestamp"))

            try:
                if mrt_type == MRT_TABLE_DUMP_V2 and subtype == TD_V2_PEER_INDEX_TABLE:
                    for peer_index, peer in enumerate(data.get("peer_entries", [])):
                        peers[peer_index] = Asn(peer["peer_as"])
                elif mrt_type == MRT_TABLE_DUMP_V2 and subtype == TD_V2_RIB_IPV4_UNICAST:
                    prefix = parse_prefix(f"{data['prefix']}/{data['length']}")
                    for rib_entry in data.get("rib_entries", []):
                        path = _mrt_as_path(rib_entry.get("path_attributes", []))
                        peer = peers.get(rib_entry.get("peer_index"), path[0])
                        ts = int(_code(rib_entry.get("originated_time")) or timestamp)
                        updates.append(
                            BgpUpdate(ts, UpdateKind.ANNOUNCE, prefix, peer, path)
                        )
                elif mrt_type in (MRT_BGP4MP, MRT_BGP4MP_ET):
                    updates.extend(self._mrt_bgp4mp(data, int(timestamp)))
            except (PrefixError, AsPathError, FeedFormatError, KeyError) as e:
                self._diagnose(f"MRT record skipped: {e}", index)

        return updates

    def _mrt_bgp4mp(self, data: Dict, timestamp: int) -> List[BgpUpdate]:
        message = data.get("bgp_message")
        if not message or _code(message.get("type")) != BGP_UPDATE:
            return []
        if ":" in str(data.get("peer_ip", "")):
            return []

        peer = Asn(data["peer_as"])
        updates = []
        for nlri in message.get("withdrawn_routes", []):
            prefix = parse_prefix(f"{nlri['prefix']}/{nlri['length']}")
            updates.append(BgpUpdate(timestamp, UpdateKind.WITHDRAW, prefix, peer))

        announced = message.get("nlri", [])
        if announced:
            path = _mrt_as_path(message.get("path_attributes", []))
            for nlri in announced:
                prefix = parse_prefix(f"{nlri['prefix']}/{nlri['length']}")
                updates.append(BgpUpdate(timestamp, UpdateKind.ANNOUNCE, prefix, peer, path))
        return updates

    def _diagnose(self, message: str, line_no: int):
        diagnostic = Diagnostic(self.source, message, line_no)
        self.diagnostics.append(diagnostic)
        log.warning("%s", diagnostic)


MRT_TABLE_DUMP_V2 = 13
MRT_BGP4MP = 16
MRT_BGP4MP_ET = 17
TD_V2_PEER_INDEX_TABLE = 1
TD_V2_RIB_IPV4_UNICAST = 2
BGP_UPDATE = 2
ATTR_AS_PATH = 2
AS_SET = 1
AS_SEQUENCE = 2


def _code(value):
    """mrtparse encodes enumerations as single-entry dicts {code: name}."""
    if isinstance(value, dict):
        return next(iter(value), None)
    return value


def _mrt_as_path(attributes: List[Dict]) -> tuple:
    for attr in attributes:
        if _code(attr.get("type")) != ATTR_AS_PATH:
            continue
        path = []
        for segment in attr.get("value", []):
            if _code(segment.get("type")) != AS_SEQUENCE:
                raise AsPathError("AS_SET segment not supported")
            path.extend(segment.get("value", []))
        return parse_path(path)
    raise FeedFormatError("record without AS_PATH attribute")


def read_feed(
    path: Union[str, Path], source: Optional[str] = None
) -> Tuple[List[BgpUpdate], List[Diagnostic]]:
    """
    Read a feed file, choosing the MRT adapter for .mrt/.bz2 files.

    Returns:
        Tuple of (updates, diagnostics)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Feed file not found: {path}")
    parser = FeedParser(source or path.name)
    if path.suffix in (".mrt", ".bz2") or path.name.endswith(".mrt.gz"):
        updates = parser.read_mrt(path)
    else:
        updates = parser.read_file(path)
    return updates, parser.diagnostics
