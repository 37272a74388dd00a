"""Scenario manifests: bundled inputs plus an expected-result oracle, loaded from YAML."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from hijackvet.core.assessment import AssessmentSettings, BatchInputs, BatchResult, run_batch
from hijackvet.core.errors import ScenarioError

log = logging.getLogger(__name__)

# Manifest keys naming input files, resolved relative to the manifest
FILE_KEYS = ("feed", "table_dump", "ground_truth", "scanner_fixture", "alarms", "focus_hosts")


@dataclass
class Mismatch:
    path: str
    expected: Any
    actual: Any

    def __str__(self) -> str:
        return f"{self.path}: expected {self.expected!r}, got {self.actual!r}"


@dataclass
class ScenarioResult:
    batch: BatchResult
    mismatches: List[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches


class Scenario:
    """Load a scenario manifest and run it against its oracle."""

    def __init__(self, manifest_file: Union[str, Path]):
        """
        Initialize Scenario.

        Args:
            manifest_file: Path to the scenario YAML file

        Raises:
            ScenarioError: If the manifest is missing or invalid
        """
        self.manifest_file = Path(manifest_file)
        self.base_dir = self.manifest_file.parent
        self.data = self._load_manifest()
        self.name = self.data.get("name", self.manifest_file.stem)
        self.description = self.data.get("description", "")
        self.oracle = self._load_oracle()

    def _load_manifest(self) -> Dict:
        """
        Load the manifest from YAML.

        Returns:
            Manifest dictionary
        """
        if not self.manifest_file.exists():
            raise ScenarioError(f"Scenario manifest not found: {self.manifest_file}")

        try:
            with open(self.manifest_file, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ScenarioError(f"Invalid YAML in scenario manifest: {e}")

        if not isinstance(data, dict) or "feed" not in data:
            raise ScenarioError(f"Scenario {self.manifest_file.name} must define at least 'feed'")
        return data

    def _load_oracle(self) -> Dict:
        oracle = self.data.get("oracle", {})
        if isinstance(oracle, str):
            oracle_file = self.base_dir / oracle
            if not oracle_file.exists():
                raise ScenarioError(f"Oracle file not found: {oracle_file}")
            with open(oracle_file, "r", encoding="utf-8") as f:
                oracle = yaml.safe_load(f) or {}
        if not isinstance(oracle, dict):
            raise ScenarioError("Scenario oracle must be a mapping")
        return oracle

    def _resolve(self, value: Optional[str]) -> Optional[Path]:
        return self.base_dir / value if value else None

    def inputs(self) -> BatchInputs:
        """Batch inputs with file paths resolved against the manifest directory."""
        files = {key: self._resolve(self.data.get(key)) for key in FILE_KEYS}
        irr = self.data.get("irr") or []
        if isinstance(irr, str):
            irr = [irr]
        return BatchInputs(
            irr=[self._resolve(path) for path in irr],
            irr_tag=self.data.get("irr_tag"),
            **files,
        )

    def settings(self, base: Optional[AssessmentSettings] = None) -> AssessmentSettings:
        """Scenario settings (seed and overrides) applied on top of base."""
        settings = base or AssessmentSettings()
        overrides = dict(self.data.get("settings") or {})
        if "seed" in self.data:
            overrides["seed"] = self.data["seed"]
        for key, value in overrides.items():
            if not hasattr(settings, key):
                raise ScenarioError(f"Unknown scenario setting '{key}'")
            setattr(settings, key, value)
        return settings

    def run(self, base: Optional[AssessmentSettings] = None) -> ScenarioResult:
        batch = run_batch(self.inputs(), self.settings(base))
        actual = {
            "report": batch.report.to_dict(),
            "events": {a.alarm_ref: a.cumulative.value for a in batch.assessments},
            "filters": {
                a.alarm_ref: {name: v.status.value for name, v in a.verdicts.items()}
                for a in batch.assessments
            },
        }
        mismatches = compare_oracle(self.oracle, actual)
        for mismatch in mismatches:
            log.warning("Scenario %s: %s", self.name, mismatch)
        return ScenarioResult(batch, mismatches)


def compare_oracle(expected: Any, actual: Any, path: str = "") -> List[Mismatch]:
    """
    Compare an oracle against actual results.

    Only keys present in the oracle are checked; floats compare to six decimals.
    """
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            return [Mismatch(path or ".", expected, actual)]
        mismatches = []
        for key, value in expected.items():
            child = f"{path}.{key}" if path else str(key)
            if key not in actual:
                mismatches.append(Mismatch(child, value, None))
                continue
            mismatches.extend(compare_oracle(value, actual[key], child))
        return mismatches
    if isinstance(expected, float) or isinstance(actual, float):
        try:
            if round(float(expected), 6) == round(float(actual), 6):
                return []
        except (TypeError, ValueError):
            pass
        return [Mismatch(path, expected, actual)]
    return [] if expected == actual else [Mismatch(path, expected, actual)]

