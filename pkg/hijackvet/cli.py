"""Command-line interface for HijackVet."""

import json
import sys
from pathlib import Path

import click
from rich.console import Console
from rich.panel import Panel

from hijackvet import __description__, __version__
from hijackvet.core.assessment import (
    AssessmentService,
    AssessmentSettings,
    BatchInputs,
    prepare_stores,
    run_batch,
)
from hijackvet.core.errors import HijackVetError
from hijackvet.core.feed_parser import read_feed
from hijackvet.core.irr_graph import export_csv, load_graph
from hijackvet.core.rib_engine import RibEngine, dedupe_events, diff_table_dumps
from hijackvet.core.scenario import Scenario
from hijackvet.core.service import AlarmServer, parse_address, serve_stream
from hijackvet.utils.config import Config
from hijackvet.utils.formatters import ReportFormatter, emit_report
from hijackvet.utils.log import setup_logging

console = Console()
err_console = Console(stderr=True)

EXPECTED_ERRORS = (HijackVetError, FileNotFoundError, ValueError)


def _fail(ctx: click.Context, error: Exception):
    """Print an error line and exit 1; --debug re-raises instead."""
    if isinstance(error, EXPECTED_ERRORS):
        console.print(f"[bold red]Error:[/bold red] {error}")
    else:
        console.print(f"[bold red]Unexpected error:[/bold red] {error}")
    if ctx.obj and ctx.obj.get("debug"):
        raise error
    sys.exit(1)


def _settings(config: Config, max_depth=None, seed=None) -> AssessmentSettings:
    """Config values with per-run flag overrides."""
    settings = AssessmentSettings.from_config(config)
    if max_depth is not None:
        settings.max_depth = max_depth
    if seed is not None:
        settings.seed = seed
    return settings


def _write_or_echo(text: str, output):
    if output:
        Path(output).write_text(text, encoding="utf-8")
        console.print(f"[bold green]✓[/bold green] Wrote {output}")
    else:
        click.echo(text, nl=False)


def input_options(func):
    """Options shared by commands that load a full set of stores."""
    options = [
        click.option("--feed", "-f", required=True, type=click.Path(), help="BGP update feed (text or MRT)"),
        click.option("--table-dump", type=click.Path(), help="Table export loaded before the feed"),
        click.option("--irr", "irr", multiple=True, type=click.Path(), help="IRR snapshot (repeatable)"),
        click.option("--irr-tag", help="Tag of the IRR snapshot, e.g. its date"),
        click.option("--ground-truth", "-g", type=click.Path(), help="Key observations file"),
        click.option("--scanner-fixture", type=click.Path(), help="Scripted scan results"),
        click.option("--live-scan", is_flag=True, help="Scan the network when no scanner fixture is given"),
        click.option("--max-depth", type=int, help="IRR search depth (overrides config)"),
        click.option("--seed", type=int, help="Seed for simulated scans (overrides config)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log debug details to stderr")
@click.option("--debug", is_flag=True, help="Show tracebacks instead of error lines")
@click.pass_context
def cli(ctx, verbose, debug):
    """HijackVet - Assess BGP subprefix hijack alarms against IRR, topology and TLS evidence."""
    ctx.ensure_object(dict)
    ctx.obj["debug"] = debug
    setup_logging(verbose)


@cli.command()
@input_options
@click.option("--alarms", "-a", type=click.Path(), help="Alarm records to assess")
@click.option("--self-detect", is_flag=True, help="Assess every strict subMOAS found in the feed")
@click.option("--report", "-r", "report_format", type=click.Choice(Config.REPORT_FORMATS), help="Report format")
@click.option("--focus-hosts", type=click.Path(), help="Only assess events covering these hosts")
@click.option("--assessments-out", type=click.Path(), help="Write per-alarm assessments as JSON lines")
@click.option("--output", "-o", type=click.Path(), help="Write the report to a file")
@click.pass_context
def assess(ctx, feed, table_dump, irr, irr_tag, ground_truth, scanner_fixture, live_scan, max_depth, seed,
           alarms, self_detect, report_format, focus_hosts, assessments_out, output):
    """Assess alarms and print the run report."""
    try:
        if alarms and self_detect:
            raise click.UsageError("--alarms and --self-detect are mutually exclusive")

        config = Config()
        settings = _settings(config, max_depth, seed)
        inputs = BatchInputs(
            feed=feed,
            irr=list(irr),
            ground_truth=ground_truth,
            scanner_fixture=scanner_fixture,
            alarms=alarms,
            table_dump=table_dump,
            focus_hosts=focus_hosts,
            irr_tag=irr_tag,
            live_scan=live_scan,
        )

        with console.status("[bold green]Assessing alarms...", spinner="dots"):
            result = run_batch(inputs, settings)

        if assessments_out:
            Path(assessments_out).write_text(
                ReportFormatter.format_assessments(result.assessments), encoding="utf-8"
            )

        _write_or_echo(emit_report(result.report, report_format or config.get_report_format()), output)

    except click.UsageError:
        raise
    except Exception as e:
        _fail(ctx, e)


@cli.command()
@click.option("--feed", "-f", required=True, type=click.Path(), help="BGP update feed (text or MRT)")
@click.option("--table-dump", type=click.Path(), help="Table export loaded before the feed")
@click.option("--json", "as_json", is_flag=True, help="Print events as JSON lines")
@click.pass_context
def detect(ctx, feed, table_dump, as_json):
    """List deduplicated strict subMOAS events found in a feed."""
    try:
        engine = RibEngine(retention_seconds=None)
        if table_dump:
            dump, _ = read_feed(table_dump)
            engine.load_table_dump(dump)
        updates, _ = read_feed(feed)
        engine.replay(updates)
        _print_events(dedupe_events(engine.events()), as_json)
    except Exception as e:
        _fail(ctx, e)


@cli.command("diff-snapshots")
@click.argument("old", type=click.Path())
@click.argument("new", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Print events as JSON lines")
@click.pass_context
def diff_snapshots(ctx, old, new, as_json):
    """List strict subMOAS events present in table dump NEW but not in OLD."""
    try:
        old_records, _ = read_feed(old)
        new_records, _ = read_feed(new)
        _print_events(diff_table_dumps(old_records, new_records), as_json)
    except Exception as e:
        _fail(ctx, e)


def _print_events(events, as_json: bool):
    if as_json:
        for event in events:
            click.echo(json.dumps(event.to_dict(), sort_keys=True))
    else:
        click.echo(ReportFormatter.format_events(events), nl=False)


@cli.command()
@input_options
@click.option("--socket", "address", help="Listen on HOST:PORT instead of stdin/stdout")
@click.pass_context
def serve(ctx, feed, table_dump, irr, irr_tag, ground_truth, scanner_fixture, live_scan, max_depth, seed, address):
    """Answer alarm lines with assessment JSON lines."""
    try:
        settings = _settings(Config(), max_depth, seed)
        inputs = BatchInputs(
            feed=feed,
            irr=list(irr),
            ground_truth=ground_truth,
            scanner_fixture=scanner_fixture,
            table_dump=table_dump,
            irr_tag=irr_tag,
            live_scan=live_scan,
        )
        stores, _ = prepare_stores(inputs, settings)

        with AssessmentService(stores, settings) as service:
            if address is None:
                serve_stream(service, sys.stdin, sys.stdout)
                return
            server = AlarmServer(parse_address(address), service)
            err_console.print(f"[bold green]Listening[/bold green] on {address} (Ctrl+C to stop)")
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
            finally:
                server.server_close()
    except Exception as e:
        _fail(ctx, e)


@cli.group()
def scenario():
    """Run bundled scenarios."""
    pass


@scenario.command("run")
@click.argument("manifest", type=click.Path())
@click.option("--report", "-r", "report_format", type=click.Choice(Config.REPORT_FORMATS), help="Also print the report")
@click.pass_context
def scenario_run(ctx, manifest, report_format):
    """Run a scenario manifest and compare it to its oracle."""
    try:
        loaded = Scenario(manifest)
        with console.status(f"[bold green]Running {loaded.name}...", spinner="dots"):
            result = loaded.run(AssessmentSettings.from_config(Config()))
    except Exception as e:
        _fail(ctx, e)
        return

    if report_format:
        click.echo(emit_report(result.batch.report, report_format), nl=False)

    if result.passed:
        console.print(f"[bold green]✓[/bold green] Scenario {loaded.name} matches its oracle")
        return

    console.print(
        Panel(
            "\n".join(str(m) for m in result.mismatches),
            title=f"[bold red]Scenario {loaded.name}[/bold red] ({len(result.mismatches)} mismatches)",
            border_style="red",
        )
    )
    sys.exit(1)


@cli.group()
def irr():
    """Inspect IRR snapshots."""
    pass


@irr.command("export")
@click.option("--irr", "paths", multiple=True, required=True, type=click.Path(), help="IRR snapshot (repeatable)")
@click.option("--out", "out_prefix", required=True, help="Output prefix for <prefix>_nodes.csv and <prefix>_edges.csv")
@click.option("--tag", help="Snapshot tag")
@click.pass_context
def irr_export(ctx, paths, out_prefix, tag):
    """Export the IRR graph as a node/edge CSV pair."""
    try:
        graph = load_graph(paths, tag)
        nodes, edges = export_csv(graph, out_prefix)
    except Exception as e:
        _fail(ctx, e)
        return
    console.print(f"[bold green]✓[/bold green] Nodes: {nodes}")
    console.print(f"[bold green]✓[/bold green] Edges: {edges}")
    if graph.orphans:
        console.print(f"[yellow]Note:[/yellow] {len(graph.orphans)} references point to unknown objects")


@cli.group()
def config():
    """Manage HijackVet configuration."""
    pass


@config.command("show")
def config_show():
    """Show current configuration."""
    cfg = Config()
    console.print("\n[bold]Current Configuration:[/bold]\n")
    console.print(cfg.show())


@config.command("set")
@click.argument("key")
@click.argument("value")
@click.pass_context
def config_set(ctx, key, value):
    """Set a configuration value (dotted key, e.g. irr.max_depth)."""
    cfg = Config()
    try:
        cfg.set(key, value)
    except ValueError as e:
        _fail(ctx, e)
    console.print(f"[bold green]✓[/bold green] {key} = {cfg.get(key)}")


@config.command("reset")
def config_reset():
    """Reset configuration to defaults."""
    cfg = Config()
    cfg.reset()
    console.print("[bold green]✓[/bold green] Configuration reset to defaults!")


@config.command("init")
def config_init():
    """Initialize HijackVet configuration."""
    cfg = Config()
    console.print("[bold green]✓[/bold green] Configuration initialized!")
    console.print(f"Config directory: {cfg.config_dir}")
    console.print(f"Config file: {cfg.config_file}")


@cli.command()
def version():
    """Show HijackVet version."""
    console.print(f"[bold]HijackVet[/bold] v{__version__}")
    console.print(__description__)


def main():
    """Main entry point."""
    cli()


if __name__ == "__main__":
    main()
