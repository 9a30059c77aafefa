"""CLI entry point for crossadapt."""

import logging
from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Any, NoReturn

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from crossadapt import __version__
from crossadapt.config import Profile, RunConfig, load_config
from crossadapt.engine import pipeline
from crossadapt.engine.modes import registry
from crossadapt.errors import CrossAdaptError
from crossadapt.path_display import get_display_artifacts, get_display_path

console = Console()
app = typer.Typer(
    name="crossadapt",
    help="crossadapt - two-stage knowledge transfer between CTR/CVR model architectures",
    add_completion=False,
    no_args_is_help=True,
    context_settings={"help_option_names": ["-h", "--help"]},
)

ConfigOpt = Annotated[
    Path | None, typer.Option("--config", "-c", help="JSON run config (defaults if omitted)")
]
SeedOpt = Annotated[int | None, typer.Option("--seed", help="Training seed")]
OutOpt = Annotated[Path | None, typer.Option("--out", "-o", help="Output directory")]
ProfileOpt = Annotated[
    Profile, typer.Option("--profile", help="full = default batch sizes, desk = batch 256")
]
OverrideOpt = Annotated[
    list[str] | None,
    typer.Option("--override", help="Dotted KEY=VALUE override, repeatable"),
]
VerboseOpt = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")]


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=verbose, show_path=verbose)],
        force=True,
    )


def _fail(exc: CrossAdaptError) -> NoReturn:
    console.print(f"[red]Error ({type(exc).__name__}): {exc}[/red]")
    raise typer.Exit(exc.exit_code) from exc


def _prepare(
    config: Path | None,
    profile: Profile,
    overrides: list[str] | None,
    verbose: bool,
    seed: int | None = None,
) -> RunConfig:
    setup_logging(verbose)
    try:
        cfg = load_config(config, profile=profile, overrides=overrides or [])
    except CrossAdaptError as exc:
        _fail(exc)
    if seed is not None:
        cfg = cfg.model_copy(update={"seeds": [seed]})
    return cfg


def _header(title: str, cfg: RunConfig, out: Path | None = None) -> None:
    console.print()
    console.print(
        Panel(
            f"[bold]crossadapt[/bold] {title}\n"
            f"[dim]mode {cfg.mode.value} | seeds {cfg.seeds} | "
            f"out {get_display_path(out or cfg.out_dir)}[/dim]",
            border_style="blue",
        )
    )


def _execute(
    description: str, fn: Callable[[], pipeline.CommandResult]
) -> pipeline.CommandResult:
    """Run a pipeline command under a spinner; crossadapt errors become exit codes."""
    try:
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            progress.add_task(description, total=None)
            return fn()
    except CrossAdaptError as exc:
        _fail(exc)


def _format(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return "-"
    return str(value)


def _show(result: pipeline.CommandResult, title: str) -> None:
    table = Table(title=title, show_header=False, box=None)
    table.add_column("key", style="bold")
    table.add_column("value")
    for key, value in result.summary.items():
        table.add_row(key, _format(value))
    console.print(table)
    console.print("\n[bold]Written:[/bold]")
    for name, path in get_display_artifacts(result.artifacts).items():
        console.print(f"  • {name}: [green]{path}[/green]")
    console.print(f"\n[dim]Run folder: {get_display_path(result.run_dir)}[/dim]\n")


@app.command("gen-data")
def gen_data(
    config: ConfigOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Generate a synthetic click/conversion stream with its schema and split manifest."""
    cfg = _prepare(config, profile, override, verbose)
    _header("gen-data", cfg, out)
    result = _execute("Generating stream...", lambda: pipeline.cmd_gen_data(cfg, out))
    _show(result, "Synthetic stream")


@app.command("train-teacher")
def train_teacher(
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Train the deployed teacher on hist + train and evaluate it on test."""
    cfg = _prepare(config, profile, override, verbose, seed)
    _header("train-teacher", cfg, out)
    result = _execute("Training teacher...", lambda: pipeline.cmd_train_teacher(cfg, out, seed))
    _show(result, "Teacher")


@app.command()
def transfer(
    teacher: Annotated[Path, typer.Option("--teacher", "-t", help="Teacher checkpoint")],
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Stage 1: project the teacher table and distill into the student."""
    cfg = _prepare(config, profile, override, verbose, seed)
    _header("transfer", cfg, out)
    result = _execute(
        "Offline transfer...", lambda: pipeline.cmd_transfer(cfg, teacher, out, seed)
    )
    _show(result, "Stage 1")


@app.command()
def online(
    teacher: Annotated[Path, typer.Option("--teacher", "-t", help="Teacher checkpoint")],
    student: Annotated[Path, typer.Option("--student", "-s", help="Stage-1 student checkpoint")],
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Stage 2: co-evolve teacher and student over the online stream."""
    cfg = _prepare(config, profile, override, verbose, seed)
    _header("online", cfg, out)
    result = _execute(
        "Online co-distillation...",
        lambda: pipeline.cmd_online(cfg, teacher, student, out, seed),
    )
    _show(result, "Stage 2")


@app.command("eval")
def eval_checkpoint(
    checkpoint: Annotated[Path, typer.Option("--checkpoint", "-k", help="Model checkpoint")],
    split: Annotated[str, typer.Option("--split", help="train, online or test")] = "test",
    reference: Annotated[
        Path | None, typer.Option("--reference", help="Reference model for ranking metrics")
    ] = None,
    config: ConfigOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Evaluate a checkpoint on one split."""
    cfg = _prepare(config, profile, override, verbose)
    _header("eval", cfg, out)
    result = _execute(
        "Evaluating...",
        lambda: pipeline.cmd_eval(cfg, checkpoint, split, out, reference),
    )
    _show(result, f"Report ({split})")


@app.command()
def project(
    teacher: Annotated[Path, typer.Option("--teacher", "-t", help="Teacher checkpoint")],
    dim: Annotated[int, typer.Option("--dim", "-d", help="Student embedding dimension")],
    trials: Annotated[
        int, typer.Option("--trials", help="Random orthonormal projections to compare against")
    ] = 0,
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Project a teacher table to --dim and report the Gram distortion."""
    cfg = _prepare(config, profile, override, verbose)
    _header("project", cfg, out)
    result = _execute(
        "Projecting...",
        lambda: pipeline.cmd_project(cfg, teacher, dim, out, seed or 0, trials),
    )
    _show(result, "Projection")


@app.command()
def shift(
    split: Annotated[str, typer.Option("--split", help="train, online or test")] = "train",
    config: ConfigOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Measure distribution shift across windows and derive the enhancement ratio."""
    cfg = _prepare(config, profile, override, verbose)
    _header("shift", cfg, out)
    result = _execute("Measuring shift...", lambda: pipeline.cmd_shift(cfg, out, split))
    _show(result, "Shift")


@app.command()
def experiment(
    teacher: Annotated[
        Path | None, typer.Option("--teacher", "-t", help="Reuse this teacher checkpoint")
    ] = None,
    config: ConfigOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    profile: ProfileOpt = Profile.FULL,
    override: OverrideOpt = None,
    verbose: VerboseOpt = False,
):
    """Compare training modes over seeds and write a mean/std table."""
    cfg = _prepare(config, profile, override, verbose, seed)
    _header("experiment", cfg, out)
    total = len(cfg.modes) * len(cfg.seeds) * (len(cfg.sweep.values) if cfg.sweep else 1)
    try:
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
        ) as progress:
            task = progress.add_task("Preparing data and teacher...", total=total)

            def on_cell(mode, cell_seed):
                progress.update(task, description=f"{mode.value} (seed {cell_seed})")
                progress.advance(task)

            result = pipeline.cmd_experiment(cfg, out, teacher, on_cell=on_cell)
    except CrossAdaptError as exc:
        _fail(exc)

    if result.table is not None and not result.table.empty:
        table = Table(title="Mode comparison (mean ± std over seeds)")
        swept = "sweep_value" in result.table.columns
        if swept:
            table.add_column(str(result.summary["sweep"]), style="cyan")
        table.add_column("Method", style="bold")
        table.add_column("Seeds", justify="right")
        for metric in ("auc", "logloss", "time_s", "steps"):
            table.add_column(metric, justify="right")
        for _, row in result.table.iterrows():
            cells = [
                f"{_format(row.get(f'{m}_mean'))} ± {_format(row.get(f'{m}_std'))}"
                for m in ("auc", "logloss", "time_s", "steps")
            ]
            keys = [str(row["sweep_value"])] if swept else []
            table.add_row(*keys, str(row["method"]), str(row["n_seeds"]), *cells)
        console.print(table)
    _show(result, "Experiment")


@app.command()
def modes():
    """List the registered training modes."""
    table = Table(title="Training modes")
    table.add_column("Mode", style="bold")
    table.add_column("Description")
    for entry in registry.info():
        table.add_row(entry["name"], entry["description"])
    console.print(table)


@app.command()
def version():
    """Show version information."""
    console.print(f"crossadapt v{__version__}")


def main():
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
