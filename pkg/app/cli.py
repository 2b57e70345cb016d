import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table
from typing_extensions import Annotated

from app.config import LOG_LEVEL, OUTPUT_DIR
from app.core.exceptions import NavError
from app.core.harness import (
    export_trajectory,
    load_report,
    load_suite,
    replay as replay_log,
    results_table,
    run_batch,
    run_episode,
    save_report,
)
from app.core.metrics import format_cell, latency_stats
from app.core.world import load_scenario_with_grid
from app.models.costmap_models import CostmapConfig
from app.models.directive_models import ModulatorConfig
from app.models.suite_models import FastLoopConfig

app = typer.Typer(help="Social navigation benchmark: run episodes, batches, replays and exports.", no_args_is_help=True)
console = Console()


@app.callback()
def main(log_level: Annotated[str, typer.Option("--log-level", help="DEBUG, INFO, WARNING")] = LOG_LEVEL):
    logging.basicConfig(
        level=log_level.upper(),
        format="%(name)s: %(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
    )


def _fail(err: Exception) -> None:
    console.print(f"[bold red]Error:[/bold red] {err}")
    raise typer.Exit(code=1)


def _metrics_table(title: str, metrics) -> Table:
    table = Table(title=title)
    table.add_column("metric")
    table.add_column("value", justify="right")
    for key, value in metrics.model_dump().items():
        table.add_row(key, format_cell(value))
    return table


@app.command()
def run(
    scenario: Annotated[Path, typer.Option("--scenario", help="Scenario YAML file")],
    seed: Annotated[Optional[int], typer.Option("--seed", help="Episode seed (defaults to the scenario seed)")] = None,
    modulator: Annotated[str, typer.Option("--modulator", help="scripted | replay | external")] = "scripted",
    latency: Annotated[float, typer.Option("--latency", help="Injected slow-loop latency in ms")] = 0.0,
    out: Annotated[Path, typer.Option("--out", help="Output directory")] = OUTPUT_DIR,
    replay_log_path: Annotated[
        Optional[Path], typer.Option("--replay-log", help="Episode report whose directives are replayed")
    ] = None,
    no_social_layer: Annotated[bool, typer.Option("--no-social-layer", help="Ablation: skip the social layer")] = False,
    controller: Annotated[
        str, typer.Option("--controller", help="sfm | direct (hold each directive's discrete move)")
    ] = "sfm",
):
    """Run one episode and write its report and trajectory csv."""
    try:
        spec, grid = load_scenario_with_grid(scenario)
        config = ModulatorConfig(
            source=modulator,
            injected_latency=latency / 1000.0,
            replay_log=str(replay_log_path) if replay_log_path else None,
        )
        fast = FastLoopConfig(costmap=CostmapConfig(social_layer_enabled=not no_social_layer), controller=controller)
        report = run_episode(spec, config, seed, grid=grid, fast_config=fast)
        report_path = save_report(report, out / f"{spec.id}_seed{report.seed}.json")
        csv_path = export_trajectory(report, "csv", out / f"{spec.id}_seed{report.seed}.csv")
    except (NavError, ValueError) as e:
        _fail(e)

    outcome = report.outcome
    verdict = "[green]success[/green]" if outcome.success else f"[red]{outcome.reason}[/red]"
    console.print(f"{spec.id} seed {report.seed}: {verdict} after {report.tick_count} ticks")
    console.print(_metrics_table("Metrics", report.metrics))
    stats = latency_stats(report.latency_log)
    if stats:
        table = Table(title="Latency (ms)")
        for column in ("component", "count", "mean", "p50", "p95", "max"):
            table.add_column(column, justify="right")
        for component, s in stats.items():
            table.add_row(component, str(s.count), f"{s.mean:.2f}", f"{s.p50:.2f}", f"{s.p95:.2f}", f"{s.max:.2f}")
        console.print(table)
    console.print(f"Report: {report_path}\nTrajectory: {csv_path}")


@app.command()
def batch(
    suite: Annotated[Path, typer.Option("--suite", help="Suite YAML file")],
    out: Annotated[Optional[Path], typer.Option("--out", help="Output directory")] = None,
):
    """Run a suite and write results.csv, episodes.csv and latency.csv."""
    try:
        config = load_suite(suite)
        result = run_batch(config, base_dir=suite.parent, output_dir=out)
    except NavError as e:
        _fail(e)

    frame = results_table(result)
    table = Table(title=f"Suite {result.suite}")
    for column in frame.columns:
        table.add_column(column, justify="right")
    for record in frame.itertuples(index=False):
        table.add_row(*[str(v) for v in record])
    console.print(table)


@app.command()
def replay(
    log: Annotated[Path, typer.Option("--log", help="Episode report (.json) or trajectory (.csv)")],
    scenario: Annotated[Optional[Path], typer.Option("--scenario", help="Scenario file, needed for csv input")] = None,
):
    """Recompute the metrics of a logged episode."""
    try:
        result = replay_log(log, scenario)
    except NavError as e:
        _fail(e)
    console.print(_metrics_table(f"Replay of {log.name}", result.metrics))
    if result.config_mismatch:
        console.print("[yellow]config-mismatch:[/yellow] log was scored under a different metrics config")
    if result.matches is False:
        console.print("[red]Recomputed metrics differ from the logged values[/red]")
        raise typer.Exit(code=1)


@app.command()
def export(
    log: Annotated[Path, typer.Option("--log", help="Episode report (.json)")],
    format: Annotated[str, typer.Option("--format", help="csv | svg")] = "csv",
    out: Annotated[Optional[Path], typer.Option("--out", help="Output file")] = None,
):
    """Export an episode trajectory as csv rows or an svg plot."""
    try:
        report = load_report(log)
        path = export_trajectory(report, format, out or log.with_suffix(f".{format}"))
    except (NavError, ValueError) as e:
        _fail(e)
    console.print(f"Wrote {path}")


@app.command()
def serve(
    host: Annotated[str, typer.Option(help="Bind address")] = "127.0.0.1",
    port: Annotated[int, typer.Option(help="Port")] = 8000,
):
    """Serve the HTTP API (modulator wire protocol and episode runner)."""
    import uvicorn

    uvicorn.run("app.main:app", host=host, port=port)


if __name__ == "__main__":
    app()
