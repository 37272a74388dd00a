"""Exception hierarchy for hijackvet."""

from dataclasses import dataclass


class HijackVetError(Exception):
    """Base class for all errors raised by hijackvet."""


class PrefixError(HijackVetError, ValueError):
    """An IPv4 prefix or address could not be parsed."""


class AsPathError(HijackVetError, ValueError):
    """An AS path is malformed or contains an AS_SET segment."""


class FeedFormatError(HijackVetError):
    """A BGP feed record could not be parsed."""

    def __init__(self, message: str, line_no: int = 0):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no else ""
        super().__init__(f"{prefix}{message}")


class JournalCoverageError(HijackVetError):
    """A requested interval lies outside the retained update journal."""


class AlarmRejected(HijackVetError):
    """An alarm record is not a strict subprefix pair."""

    def __init__(self, reason: str, record: str = ""):
        self.reason = reason
        self.record = record
        super().__init__(f"Alarm rejected: {reason}")


class RpslError(HijackVetError):
    """An IRR snapshot could not be read."""


class ScenarioError(HijackVetError):
    """A scenario manifest is missing or invalid."""


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal problem found while processing input records."""

    source: str
    message: str
    line_no: int = 0

    def __str__(self) -> str:
        where = f"{self.source}:{self.line_no}" if self.line_no else self.source
        return f"{where}: {self.message}"
