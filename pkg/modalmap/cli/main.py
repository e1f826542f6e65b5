"""CLI entry point for modalmap."""

import logging
import math
from pathlib import Path
from typing import Callable, NoReturn, Optional, TypeVar

import click
from rich.console import Console
from rich.table import Table

from modalmap import __version__
from modalmap.core.experiment import DEFAULT_EVAL_SPLITS, Experiment
from modalmap.core.trainer import TrainResult, latest_checkpoint
from modalmap.data.splits import SPLIT_NAMES
from modalmap.errors import CheckpointError
from modalmap.eval.identification import ProbeSource
from modalmap.eval.metrics import MetricsReport
from modalmap.utils.config import load_config
from modalmap.utils.logging import get_logger, setup_logging

console = Console()

DEFAULT_CONFIG = Path("config/desk.yaml")

T = TypeVar("T")


def _fail(ctx: click.Context, message: str) -> NoReturn:
    console.print(f"[red]Error: {message}[/red]")
    ctx.exit(1)


def load_experiment(ctx: click.Context, command: str) -> Experiment:
    """Resolve the configuration for ``command`` and set up logging."""
    config = load_config(
        ctx.obj["config_path"], seed=ctx.obj["seed"], output_dir=ctx.obj["out"]
    )
    level = getattr(logging, config.log_level, logging.INFO)
    if ctx.obj["verbose"]:
        level = logging.DEBUG
    setup_logging(log_dir=config.output_dir, level=level, log_to_file=command != "status")
    return Experiment(config, command)


def run_command(ctx: click.Context, command: str, action: Callable[[Experiment], T]) -> T:
    """Run ``action`` holding the run directory lock; errors exit with status 1."""
    try:
        experiment = load_experiment(ctx, command)
        with experiment.run:
            return action(experiment)
    except click.exceptions.Exit:
        raise
    except Exception as e:
        get_logger("modalmap.cli").debug(f"{command} failed", exc_info=True)
        _fail(ctx, str(e))


def _fmt(value: float, digits: int = 4) -> str:
    return "inf" if math.isinf(value) else f"{value:.{digits}f}"


def _metrics_table(title: str, reports: dict[str, MetricsReport]) -> Table:
    table = Table(title=title)
    table.add_column("Split", style="cyan")
    table.add_column("Pairs", justify="right")
    table.add_column("Pixel", justify="right")
    table.add_column("Feature", justify="right")
    table.add_column("Style", justify="right")
    table.add_column("PSNR (dB)", justify="right")
    table.add_column("SSIM", justify="right")
    for name, report in reports.items():
        psnr = _fmt(report.psnr_db, 2)
        if report.psnr_excluded:
            psnr += f" [dim]({report.psnr_excluded} excl.)[/dim]"
        table.add_row(
            name,
            str(report.n_pairs),
            _fmt(report.pixel_diff),
            _fmt(report.feature_diff),
            _fmt(report.style_diff),
            psnr,
            _fmt(report.ssim),
        )
    return table


@click.group()
@click.version_option(version=__version__, prog_name="modalmap")
@click.option(
    "--config",
    "config_path",
    type=click.Path(path_type=Path),
    default=DEFAULT_CONFIG,
    show_default=True,
    help="Experiment YAML file",
)
@click.option("--seed", type=int, default=None, help="Override the experiment seed")
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    default=None,
    help="Override the output (run) directory",
)
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
@click.pass_context
def cli(
    ctx: click.Context,
    config_path: Path,
    seed: Optional[int],
    out: Optional[Path],
    verbose: bool,
) -> None:
    """modalmap - paired ear-to-face mapping experiments."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["seed"] = seed
    ctx.obj["out"] = out
    ctx.obj["verbose"] = verbose


@cli.command()
@click.pass_context
def status(ctx: click.Context) -> None:
    """Show the resolved configuration and run directory contents."""
    try:
        summary = load_experiment(ctx, "status").status()
    except Exception as e:
        _fail(ctx, str(e))

    table = Table(title="modalmap Status")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Config", summary["config"])
    table.add_row("Output dir", summary["output_dir"])
    table.add_row("Dataset", summary["dataset"])
    table.add_row("Seed", str(summary["seed"]))
    lock = "[yellow]LOCKED[/yellow]" if summary["locked"] else "free"
    table.add_row("Run lock", lock)
    if "splits" in summary:
        counts = ", ".join(f"{k} {v}" for k, v in summary["splits"].items())
        table.add_row("Splits (pairs)", counts)
    else:
        table.add_row("Splits (pairs)", "[red]Not prepared[/red]")
    table.add_row("Latest checkpoint", summary["latest_checkpoint"] or "-")
    console.print(table)

    if summary["files"]:
        files = Table(title="Run Directory")
        files.add_column("File", style="cyan")
        files.add_column("Bytes", justify="right")
        for name, size in summary["files"]:
            files.add_row(name, f"{size:,}")
        console.print(files)


@cli.command()
@click.pass_context
def prepare(ctx: click.Context) -> None:
    """Generate or validate the dataset and build the splits."""
    result = run_command(ctx, "prepare", lambda e: e.prepare())

    table = Table(title=f"Splits: {result.manifest.dataset_name}")
    table.add_column("Split", style="cyan")
    table.add_column("Pairs", justify="right")
    table.add_column("Subjects", justify="right")
    for name in SPLIT_NAMES:
        table.add_row(
            name,
            str(len(result.assignment.get(name))),
            str(len(result.assignment.subjects(result.manifest, name))),
        )
    console.print(table)
    console.print(f"[green]Splits written to {result.splits_path}[/green]")


@cli.command()
@click.option(
    "--resume",
    default=None,
    help="Checkpoint to continue from ('latest' for the newest in the run directory)",
)
@click.option("--max-steps", type=int, default=None, help="Stop after this many total steps")
@click.pass_context
def train(ctx: click.Context, resume: Optional[str], max_steps: Optional[int]) -> None:
    """Train the generator and discriminator on the training split."""

    def action(experiment: Experiment) -> TrainResult:
        checkpoint: Optional[Path] = None
        if resume == "latest":
            checkpoint = latest_checkpoint(experiment.root)
            if checkpoint is None:
                raise CheckpointError(f"no checkpoint to resume in {experiment.root}")
        elif resume:
            checkpoint = Path(resume)
        return experiment.train(resume=checkpoint, max_steps=max_steps, handle_signals=True)

    result = run_command(ctx, "train", action)
    if result.interrupted:
        console.print(
            f"[yellow]Interrupted at step {result.final_step}; "
            f"resume with --resume {result.checkpoints[-1]}[/yellow]"
        )
    else:
        console.print(f"[green]Training finished at step {result.final_step}[/green]")
    console.print(f"Checkpoint: {result.checkpoints[-1]}")
    console.print(f"Step log:   {result.log_path}")


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None,
              help="Generator checkpoint (default: latest)")
@click.option("--split", "splits", multiple=True, type=click.Choice(SPLIT_NAMES),
              help="Split to evaluate (repeatable; default: the three test splits)")
@click.pass_context
def evaluate(ctx: click.Context, checkpoint: Optional[Path], splits: tuple[str, ...]) -> None:
    """Reconstruction metrics on the test splits."""
    reports = run_command(
        ctx, "evaluate", lambda e: e.evaluate(checkpoint, splits or DEFAULT_EVAL_SPLITS)
    )
    console.print(_metrics_table("Reconstruction Metrics", reports))


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None,
              help="Generator checkpoint (default: latest)")
@click.option("--split", type=click.Choice(SPLIT_NAMES), default="sid_test", show_default=True,
              help="Split whose ears give the probes")
@click.option("--gallery", type=click.Choice(SPLIT_NAMES), default=None,
              help="Split whose real faces form the gallery (default: same split)")
@click.option("--rank", "ranks", type=int, multiple=True,
              help="Rank to report (repeatable; default 1 2 5 10 20)")
@click.option("--probes", type=click.Choice([p.value for p in ProbeSource]), default=None,
              help="Reconstructed faces or real faces as probes")
@click.option("--dump-matrix", is_flag=True, help="Write the similarity matrix as CSV")
@click.pass_context
def identify(
    ctx: click.Context,
    checkpoint: Optional[Path],
    split: str,
    gallery: Optional[str],
    ranks: tuple[int, ...],
    probes: Optional[str],
    dump_matrix: bool,
) -> None:
    """Closed-set identification (CMC) of reconstructed faces."""
    curve = run_command(
        ctx,
        "identify",
        lambda e: e.identify(
            checkpoint,
            split=split,
            gallery=gallery,
            ks=ranks or None,
            probes=ProbeSource(probes) if probes else None,
            dump_matrix=dump_matrix,
        ),
    )

    title = f"Identification: {curve.labels['split']} vs {curve.labels['gallery']} gallery"
    table = Table(title=title)
    table.add_column("Rank", style="cyan", justify="right")
    table.add_column("Accuracy", style="green", justify="right")
    for k, accuracy in zip(curve.ranks, curve.accuracies):
        table.add_row(str(k), f"{accuracy:.2%}")
    console.print(table)
    console.print(
        f"Probes: {curve.n_probe} ({curve.excluded_probes} excluded) | Gallery: {curve.n_gallery}"
    )


@cli.command("cross-eval")
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None,
              help="Generator checkpoint of this experiment (default: latest)")
@click.option("--data-config", type=click.Path(path_type=Path), required=True,
              help="Experiment YAML of the (prepared) dataset to test on")
@click.option("--split", "splits", multiple=True, type=click.Choice(SPLIT_NAMES),
              help="Split of the other dataset (repeatable; default: its test splits)")
@click.pass_context
def cross_eval(
    ctx: click.Context, checkpoint: Optional[Path], data_config: Path, splits: tuple[str, ...]
) -> None:
    """Evaluate this experiment's model on another dataset."""

    def action(experiment: Experiment) -> dict[str, MetricsReport]:
        other = load_config(data_config)
        return experiment.cross_eval(other, checkpoint, splits or DEFAULT_EVAL_SPLITS)

    reports = run_command(ctx, "cross-eval", action)
    first = next(iter(reports.values()))
    title = f"Cross-dataset: model={first.labels['model']} data={first.labels['data']}"
    console.print(_metrics_table(title, reports))


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None,
              help="Generator checkpoint (default: latest)")
@click.option("--split", type=click.Choice(SPLIT_NAMES), default="sid_test", show_default=True)
@click.option("--count", type=int, default=8, show_default=True, help="Number of pairs")
@click.option("--output", type=click.Path(path_type=Path), default=None,
              help="PNG path (default: reports/grid_<split>.png)")
@click.option("--save-individual", is_flag=True, help="Also save each reconstruction")
@click.pass_context
def grid(
    ctx: click.Context,
    checkpoint: Optional[Path],
    split: str,
    count: int,
    output: Optional[Path],
    save_individual: bool,
) -> None:
    """Write an ear | reconstruction | target image grid."""
    result = run_command(
        ctx, "grid", lambda e: e.grid(checkpoint, split, count, output, save_individual)
    )
    console.print(f"[green]Grid of {len(result.pair_ids)} pairs written to {result.path}[/green]")
    if result.individual:
        console.print(f"Individual reconstructions: {result.individual[0].parent}")


if __name__ == "__main__":
    cli()
