"""Command-line entry point.

Subcommands cover the whole pipeline: ``map-gen``, ``collect``, ``filter``,
``train``, ``eval``, ``bench`` and ``gradcheck``. Every command resolves one
``Settings`` object from ``--config`` plus flags, writes the resolved
configuration next to its artifacts and maps domain errors to exit codes.
"""

import functools
import logging
import sys
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import structlog
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from minehaul import __version__
from minehaul.config import Settings, config_hash, write_run_config
from minehaul.dependencies import (
    eval_task_spec,
    get_benchmark_runner,
    get_collection_service,
    get_maps,
    get_truck_params,
    resolve_settings,
)
from minehaul.errors import ConfigMismatchError, InvalidInputError, MinehaulError
from minehaul.schemas.common import FusionMode, TaskKind
from minehaul.schemas.driving import AugmentationParams, DatasetManifest, DemoFrame, TrainingSample
from minehaul.services.benchmark_service import (
    bootstrap_gap,
    enforce_thresholds,
    episode_success,
    run_disturbance,
    run_lane_stable,
    run_navigation,
    seed_list,
)
from minehaul.services.dataset_service import (
    build_training_set,
    filter_bias,
    fit_thresholds,
    read_dataset,
    threshold_report,
    write_dataset,
    write_threshold_report,
)
from minehaul.services.gradcheck_service import require_passing, run_gradcheck
from minehaul.services.map_service import save_map, validate_map
from minehaul.services.report_service import emit_report, write_events, write_trajectory
from minehaul.services.training_service import train as train_planner

logger = logging.getLogger(__name__)
console = Console()

cli = typer.Typer(name="minehaul", help="Haul-road truck simulator and evidential lookahead planner.")

TASKS = ("lane-stable", "disturbance", "navigation")

ConfigOpt = typer.Option(None, "--config", "-c", help="TOML or JSON config file")
SeedOpt = typer.Option(None, "--seed", help="Master seed (overrides the config)")


def configure_logging(settings: Settings) -> None:
    """Route stdlib logging through structlog's renderer (JSON or console)."""
    renderer = (
        structlog.processors.JSONRenderer()
        if settings.log_format == "json"
        else structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty())
    )
    formatter = structlog.stdlib.ProcessorFormatter(
        processors=[structlog.stdlib.ProcessorFormatter.remove_processors_meta, renderer],
        foreign_pre_chain=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.ExtraAdder(),
            structlog.processors.TimeStamper(fmt="iso"),
        ],
    )
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(settings.log_level)


def handle_errors(func: Callable) -> Callable:
    """Map domain errors to their exit codes; anything else exits 1 with a traceback."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except MinehaulError as e:
            logger.error(f"{e.error_code}: {e.message}", extra={"details": e.details})
            console.print(f"[red]error[/red] {e.error_code}: {e.message}")
            raise typer.Exit(code=e.exit_code) from e
        except typer.Exit:
            raise
        except Exception as e:
            logger.error(f"Unhandled exception: {e}", exc_info=True)
            raise typer.Exit(code=1) from e

    return wrapper


def _settings(config: Optional[Path], **flags) -> Settings:
    settings = resolve_settings(config, **flags)
    configure_logging(settings)
    logger.debug(f"minehaul {__version__}, config {config_hash(settings)[:12]}")
    return settings


def _out(settings: Settings, out: Optional[Path], name: str) -> Path:
    return out if out is not None else Path(settings.out_dir) / name


@cli.callback()
def main() -> None:
    """Load ``.env`` before any command reads the environment."""
    load_dotenv()


@cli.command("map-gen")
@handle_errors
def map_gen(
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
) -> None:
    """Generate and validate the loop and network test maps."""
    settings = _settings(config)
    out_dir = _out(settings, out, "maps")
    maps = get_maps(settings)
    params = get_truck_params(settings)
    table = Table(title="Test maps")
    for column in ("map", "length (m)", "edges", "intersections", "file"):
        table.add_column(column)
    for key, mine_map in maps.items():
        validate_map(mine_map, params)
        path = save_map(mine_map, out_dir / f"{key}.json")
        table.add_row(
            mine_map.name,
            f"{mine_map.total_length:.0f}",
            str(len(mine_map.edges)),
            str(len(mine_map.intersections)),
            str(path),
        )
    write_run_config(settings, out_dir)
    console.print(table)


@cli.command()
@handle_errors
def collect(
    config: Optional[Path] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    maps_dir: Optional[Path] = typer.Option(None, "--maps", help="Directory written by map-gen"),
) -> None:
    """Roll the scripted expert and record demonstrations."""
    settings = _settings(config, seed=seed)
    out_dir = _out(settings, out, "demos")
    maps = get_maps(settings, maps_dir)
    frames = get_collection_service(settings, maps).collect()
    manifest = DatasetManifest(
        kind="demonstrations",
        seed=settings.seed,
        config_hash=config_hash(settings),
        count=len(frames),
        episodes=sorted({f.episode for f in frames}),
    )
    path = write_dataset(out_dir / "demos.jsonl", frames, manifest)
    write_run_config(settings, out_dir)
    console.print(f"Recorded {len(frames)} frames in {len(manifest.episodes)} episodes -> {path}")


@cli.command("filter")
@handle_errors
def filter_cmd(
    demos: Path = typer.Argument(..., help="Demonstrations written by collect"),
    config: Optional[Path] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
) -> None:
    """Fit bias thresholds, filter, build lookahead labels and augment."""
    settings = _settings(config, seed=seed)
    out_dir = _out(settings, out, "dataset")
    data = settings.data
    frames, _ = read_dataset(demos, DemoFrame)
    thresholds = fit_thresholds(frames, data.ci, data.min_frames)
    report = threshold_report(frames, thresholds, data.ci)
    kept = filter_bias(frames, thresholds)
    samples = build_training_set(
        kept,
        data.k_lookahead,
        data.spacing_m,
        np.random.default_rng(settings.seed),
        data.aug,
        data.k_yaw,
        settings.sensors,
    )
    manifest = DatasetManifest(
        kind="training",
        seed=settings.seed,
        config_hash=config_hash(settings),
        count=len(samples),
        k_lookahead=data.k_lookahead,
        spacing_m=data.spacing_m,
        thresholds=thresholds,
        augmentation=AugmentationParams(**data.aug.model_dump(), k_yaw=data.k_yaw),
        episodes=sorted({s.episode for s in samples}),
    )
    write_dataset(out_dir / "train.jsonl", samples, manifest)
    write_threshold_report(out_dir / "thresholds.json", report)
    write_run_config(settings, out_dir)
    console.print(
        f"Removed {report.removed_frames}/{report.total_frames} frames "
        f"({100.0 * report.removed_fraction:.2f}%); {len(samples)} training samples"
    )


@cli.command()
@handle_errors
def train(
    dataset: Path = typer.Argument(..., help="Training set written by filter"),
    config: Optional[Path] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Override training.epochs"),
    out: Optional[Path] = typer.Option(None, "--out", help="Checkpoint directory"),
) -> None:
    """Train the FusionPlanner; writes checkpoints and the loss trace."""
    settings = _settings(config, seed=seed, epochs=epochs)
    out_dir = _out(settings, out, "train")
    samples, manifest = read_dataset(dataset, TrainingSample)
    if manifest.k_lookahead is not None and manifest.k_lookahead != settings.data.k_lookahead:
        raise ConfigMismatchError(
            f"dataset has K={manifest.k_lookahead}, config has K={settings.data.k_lookahead}",
            details={"dataset": str(dataset)},
        )
    write_run_config(settings, out_dir)
    final, trace = train_planner(samples, settings, out_dir)
    last = trace[-1]
    console.print(f"Final loss {last['total']:.4f} after {int(last['epoch'])} epochs -> {final}")


@cli.command("eval")
@handle_errors
def eval_cmd(
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Planner checkpoint"),
    config: Optional[Path] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    mode: Optional[FusionMode] = typer.Option(None, "--mode", help="Fusion mode"),
    policy: str = typer.Option("planner", "--policy", help="planner or expert"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    force: bool = typer.Option(False, "--force", help="Accept a checkpoint from another model config"),
) -> None:
    """Run one closed-loop episode and write its trajectory and event logs."""
    settings = _settings(config, seed=seed, mode=mode)
    out_dir = _out(settings, out, "eval")
    maps = get_maps(settings)
    runner = get_benchmark_runner(settings, maps, policy, checkpoint, force)
    spec = eval_task_spec(settings, maps)
    result, trace = runner.run_task(spec)
    write_trajectory(out_dir / "trajectory.csv", trace.rows)
    write_events(out_dir / "events.jsonl", trace.events)
    (out_dir / "episode.json").write_text(result.model_dump_json(indent=2) + "\n")
    write_run_config(settings, out_dir)
    table = Table(title=f"{spec.task.value} / {spec.mode.value}")
    table.add_column("metric")
    table.add_column("value", justify="right")
    for name, value in (
        ("completion", f"{result.completion:.3f}"),
        ("collisions", str(result.collisions)),
        ("interventions", str(result.interventions)),
        ("gnss losses", str(result.gnss_losses)),
        ("max speed (km/h)", f"{result.max_speed * 3.6:.1f}"),
        ("safety stop", str(result.safety_stop)),
    ):
        table.add_row(name, value)
    console.print(table)


@cli.command()
@handle_errors
def bench(
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Planner checkpoint"),
    config: Optional[Path] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    task: List[str] = typer.Option(list(TASKS), "--task", help="lane-stable, disturbance, navigation"),
    mode: List[FusionMode] = typer.Option(None, "--mode", help="Fusion modes (default: deployment.mode)"),
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Seeds per lane-stable configuration"),
    trials: Optional[int] = typer.Option(None, "--trials", help="Disturbance trials per scenario class"),
    jobs: Optional[int] = typer.Option(None, "--jobs", help="Worker processes"),
    policy: str = typer.Option("planner", "--policy", help="planner or expert"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report directory"),
    strict: bool = typer.Option(False, "--strict", help="Exit 5 when a threshold is missed"),
    force: bool = typer.Option(False, "--force", help="Accept a checkpoint from another model config"),
) -> None:
    """Run MiningNav tasks and write benchmark reports."""
    settings = _settings(config, seed=seed, jobs=jobs)
    out_dir = _out(settings, out, "bench")
    unknown = [t for t in task if t not in TASKS]
    if unknown:
        raise InvalidInputError(f"unknown task(s): {', '.join(unknown)}")
    modes = list(mode) if mode else [FusionMode(settings.deployment.mode)]
    maps = get_maps(settings)
    runner = get_benchmark_runner(settings, maps, policy, checkpoint, force)
    seed_values = seed_list(settings, seeds)
    workers = settings.jobs
    reports = []
    for m in modes:
        for name in task:
            kind = TaskKind(name)
            if kind is TaskKind.LANE_STABLE:
                report, outcomes = run_lane_stable(runner, m, seed_values, workers, checkpoint, force)
            elif kind is TaskKind.DISTURBANCE:
                report, outcomes = run_disturbance(runner, m, trials, workers, checkpoint, force)
            else:
                report, outcomes = run_navigation(runner, m, workers, checkpoint, force)
            for result, trace in outcomes:
                if trace.rows:
                    stem = (
                        f"{kind.value}_{m.value}_{result.direction.value}_"
                        f"gnss{result.gnss_failure_prob:g}_seed{result.seed}"
                    )
                    write_trajectory(out_dir / "trajectories" / f"{stem}.csv", trace.rows)
                    write_events(out_dir / "trajectories" / f"{stem}.events.jsonl", trace.events)
            reports.append(report)
    emit_report(reports, out_dir)
    write_run_config(settings, out_dir)

    table = Table(title="MiningNav")
    for column in ("task", "mode", "episodes", "completion", "interventions", "collisions", "success"):
        table.add_column(column)
    for report in reports:
        agg = report.aggregates
        table.add_row(
            report.task.value,
            report.mode.value,
            f"{agg.get('episodes', 0):.0f}",
            f"{agg.get('completion', 0.0):.3f}",
            f"{agg.get('interventions', 0.0):.2f}",
            f"{agg.get('collisions', 0.0):.2f}",
            f"{agg.get('success', 0.0):.3f}",
        )
    console.print(table)

    disturbance = {r.mode: r for r in reports if r.task is TaskKind.DISTURBANCE}
    if FusionMode.EVIDENTIAL in disturbance and FusionMode.INSTANTANEOUS in disturbance:
        success = {
            m: [float(episode_success(r)) for r in rep.episodes]
            for m, rep in disturbance.items()
        }
        gap = bootstrap_gap(
            success[FusionMode.EVIDENTIAL], success[FusionMode.INSTANTANEOUS], rng=np.random.default_rng(settings.seed)
        )
        console.print(f"Evidential minus instantaneous recovery: 90% lower bound {gap:+.3f}")

    if strict:
        for report in reports:
            enforce_thresholds(report, settings.bench)


@cli.command()
@handle_errors
def gradcheck(
    seed: int = typer.Option(0, "--seed", help="Probe seed"),
    probes: int = typer.Option(64, "--probes", help="Probes per case"),
    tolerance: float = typer.Option(1e-4, "--tolerance", help="Maximum relative error"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the report as JSON"),
) -> None:
    """Finite-difference check of every loss and layer; exits 4 on failure."""
    configure_logging(resolve_settings())
    report = run_gradcheck(seed=seed, n_probes=probes, tolerance=tolerance)
    table = Table(title="Gradient check")
    for column in ("case", "probes", "skipped", "max rel. error", "status"):
        table.add_column(column)
    for r in report.results:
        status = "ok" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, str(r.probes), str(r.skipped), f"{r.max_rel_error:.2e}", status)
    console.print(table)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.model_dump_json(indent=2) + "\n")
    require_passing(report)


if __name__ == "__main__":
    cli()
