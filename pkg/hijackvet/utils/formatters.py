"""Report and event formatters."""

import io
import json
from typing import Iterable, List

from rich.console import Console
from rich.table import Table

from hijackvet.core.assessment import FILTERS, Assessment, RunReport

FILTER_LABELS = {"irr": "IRR", "topology": "Topology", "tls": "SSL/TLS"}


class ReportFormatter:
    """Render run reports as text tables or structured JSON."""

    @staticmethod
    def percent(count: int, total: int) -> str:
        """Percentage with two decimals; 0.00% when total is zero."""
        value = 100.0 * count / total if total else 0.0
        return f"{value:.2f}%"

    @staticmethod
    def format_table(report: RunReport, width: int = 100) -> str:
        """
        Format a report as plain-text tables.

        Args:
            report: Finalized run report
            width: Console width used for rendering

        Returns:
            Rendered tables
        """
        total = report.total_events
        pct = ReportFormatter.percent

        table = Table(title=f"Assessment results ({total} events)")
        table.add_column("Filter", style="cyan")
        table.add_column("Covered", justify="right")
        table.add_column("Covered %", justify="right")
        table.add_column("Legitimate", justify="right")
        table.add_column("Legitimate %", justify="right")
        table.add_column("Unique", justify="right")

        for name in FILTERS:
            counts = report.filters[name]
            table.add_row(
                FILTER_LABELS[name],
                str(counts.covered),
                pct(counts.covered, total),
                str(counts.legitimate),
                pct(counts.legitimate, total),
                str(report.single_filter_unique.get(name, 0)),
            )
        table.add_row(
            "Cumulative",
            str(report.covered_events),
            pct(report.covered_events, total),
            str(report.cumulative_legitimate_distinct),
            pct(report.cumulative_legitimate_distinct, total),
            "-",
            style="bold",
        )

        summary = Table(title="Run summary", show_header=False)
        summary.add_column("Metric")
        summary.add_column("Value", justify="right")
        summary.add_row("Suspicious", str(report.cumulative_suspicious))
        summary.add_row("Not covered", str(report.cumulative_not_covered))
        summary.add_row("Coverage", pct(report.covered_events, total))
        summary.add_row("Recurrence (mean)", f"{report.recurrence_mean:.2f}")
        summary.add_row("Recurrence (max)", str(report.recurrence_max))
        summary.add_row("Rejected alarms", str(report.rejected_alarms))
        for reason, count in report.rejection_reasons.items():
            summary.add_row(f"  {reason}", str(count))
        if report.focus_hosts:
            summary.add_row("Focus hosts", "on")

        tables = [table, summary]

        if report.irr_registries:
            registries = Table(title="IRR registries")
            registries.add_column("Registry", style="cyan")
            for column in ("Covered", "Business", "Holdership", "Legitimate"):
                registries.add_column(column, justify="right")
            for name, row in report.irr_registries.items():
                registries.add_row(
                    name, str(row["covered"]), str(row["business"]),
                    str(row["holdership"]), str(row["legitimate"]),
                )
            tables.append(registries)

        if report.tls_outcomes:
            tls = Table(title="SSL/TLS scans")
            tls.add_column("Outcome", style="cyan")
            tls.add_column("Events", justify="right")
            for outcome, count in report.tls_outcomes.items():
                tls.add_row(outcome.replace("_", " "), str(count))
            tls.add_row("hosts per event (mean)", f"{report.tls_hosts_mean:.2f}")
            tls.add_row("hosts per event (max)", str(report.tls_hosts_max))
            for protocol, count in report.tls_protocols.items():
                tls.add_row(f"legitimized via {protocol}", str(count))
            tables.append(tls)

        return ReportFormatter._render(tables, width)

    @staticmethod
    def format_structured(report: RunReport) -> str:
        """Format a report as JSON with sorted keys."""
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def parse_structured(text: str) -> RunReport:
        return RunReport.from_dict(json.loads(text))

    @staticmethod
    def format_assessments(assessments: Iterable[Assessment]) -> str:
        """One JSON object per line."""
        return "".join(json.dumps(a.to_dict(), sort_keys=True) + "\n" for a in assessments)

    @staticmethod
    def format_events(events, width: int = 120) -> str:
        """Tabulate strict subMOAS events."""
        table = Table(title=f"Strict subMOAS events ({len(events)})")
        table.add_column("Victim AS", justify="right")
        table.add_column("Victim prefix")
        table.add_column("Attacker AS", justify="right")
        table.add_column("Attacker subprefix")
        table.add_column("First seen", justify="right")
        table.add_column("Last seen", justify="right")
        table.add_column("Occurrences", justify="right")
        for event in events:
            table.add_row(
                str(event.victim_as), str(event.victim_prefix),
                str(event.attacker_as), str(event.attacker_subprefix),
                str(event.first_seen), str(event.last_seen) if not event.open else "open",
                str(event.occurrence_count),
            )
        return ReportFormatter._render([table], width)

    @staticmethod
    def _render(tables: List[Table], width: int) -> str:
        buffer = io.StringIO()
        console = Console(file=buffer, width=width, no_color=True, force_terminal=False)
        for table in tables:
            console.print(table)
        return buffer.getvalue()


def emit_report(report: RunReport, fmt: str = "table") -> str:
    """
    Render a report in the requested format.

    Args:
        report: Finalized run report
        fmt: 'table' or 'structured'

    Returns:
        Rendered report
    """
    formatters = {
        "table": ReportFormatter.format_table,
        "structured": ReportFormatter.format_structured,
    }
    if fmt not in formatters:
        raise ValueError(f"Unknown report format '{fmt}'")
    return formatters[fmt](report)
