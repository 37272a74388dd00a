"""Line-delimited alarm service over stdin/stdout or a local TCP socket."""

import json
import logging
import socketserver
from typing import Dict, Optional, TextIO, Tuple

from hijackvet.core.assessment import AssessmentService, parse_alarm
from hijackvet.core.errors import AlarmRejected

log = logging.getLogger(__name__)


def load_snapshot(service: AssessmentService, text: str) -> Dict:
    """
    Handle `!irr <tag> <path>...`: build an IRR snapshot and make it current.

    The graph is built before it is published, so alarms in flight keep
    the snapshot they started with.
    """
    fields = text.split()
    if len(fields) < 3:
        return {"error": "expected !irr <tag> <path>...", "record": text}
    tag, paths = fields[1], fields[2:]
    snapshots = service.stores.snapshots
    if snapshots is None:
        return {"error": "no IRR snapshot store", "record": text}
    try:
        graph = snapshots.load(tag, paths)
    except FileNotFoundError as e:
        return {"error": str(e), "record": text}
    log.info("Published IRR snapshot %s (%s)", tag, ", ".join(graph.registries))
    return {"snapshot": tag, "registries": graph.registries, "tags": snapshots.tags()}


def handle_line(service: AssessmentService, line: str) -> Optional[Dict]:
    """
    Assess one alarm record, or load an IRR snapshot on `!irr` lines.

    Returns:
        Assessment record, an error record for rejected alarms, or None for
        blank and comment lines
    """
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    if text.startswith("!irr"):
        return load_snapshot(service, text)
    try:
        alarm = parse_alarm(text)
    except AlarmRejected as e:
        return {"error": e.reason, "record": e.record.strip()}
    return service.assess(alarm).to_dict()


def serve_stream(service: AssessmentService, instream: TextIO, outstream: TextIO) -> int:
    """
    Answer alarm lines from instream with JSON lines on outstream until EOF.

    Returns:
        Number of records answered
    """
    answered = 0
    for line in instream:
        response = handle_line(service, line)
        if response is None:
            continue
        outstream.write(json.dumps(response, sort_keys=True) + "\n")
        outstream.flush()
        answered += 1
    return answered


class _AlarmHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            response = handle_line(self.server.service, raw.decode("utf-8", errors="replace"))
            if response is None:
                continue
            self.wfile.write((json.dumps(response, sort_keys=True) + "\n").encode("utf-8"))


class AlarmServer(socketserver.ThreadingTCPServer):
    """TCP server answering one JSON line per alarm line."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: Tuple[str, int], service: AssessmentService):
        super().__init__(address, _AlarmHandler)
        self.service = service


def parse_address(text: str) -> Tuple[str, int]:
    """Parse HOST:PORT; the host defaults to 127.0.0.1."""
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"Invalid socket address '{text}', expected HOST:PORT")
