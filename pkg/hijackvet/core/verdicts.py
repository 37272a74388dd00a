"""Filter verdicts shared by the IRR, topology and TLS filters."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional


class VerdictStatus(Enum):
    LEGITIMATE = "legitimate"
    INCONCLUSIVE = "inconclusive"
    NOT_COVERED = "not_covered"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class FilterVerdict:
    """
    Outcome of one filter for one event.

    Evidence is a list of JSON-friendly records (a legitimizing path, a
    witness AS path, matching scan results) kept for manual inspection.
    """

    status: VerdictStatus
    reason: str = ""
    evidence: List[Dict[str, Any]] = field(default_factory=list, compare=True, hash=False)

    @classmethod
    def legitimate(cls, reason: str, evidence: Optional[List[Dict]] = None) -> "FilterVerdict":
        return cls(VerdictStatus.LEGITIMATE, reason, evidence or [])

    @classmethod
    def inconclusive(cls, reason: str, evidence: Optional[List[Dict]] = None) -> "FilterVerdict":
        return cls(VerdictStatus.INCONCLUSIVE, reason, evidence or [])

    @classmethod
    def not_covered(cls, reason: str = "no data") -> "FilterVerdict":
        return cls(VerdictStatus.NOT_COVERED, reason)

    @classmethod
    def discarded(cls, reason: str, evidence: Optional[List[Dict]] = None) -> "FilterVerdict":
        return cls(VerdictStatus.DISCARDED, reason, evidence or [])

    @property
    def is_legitimate(self) -> bool:
        return self.status is VerdictStatus.LEGITIMATE

    @property
    def is_covered(self) -> bool:
        return self.status is not VerdictStatus.NOT_COVERED

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "reason": self.reason,
            "evidence": list(self.evidence),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FilterVerdict":
        return cls(
            status=VerdictStatus(data["status"]),
            reason=data.get("reason", ""),
            evidence=list(data.get("evidence", [])),
        )
