#!/usr/bin/env python3
"""River UAV path-planning simulator CLI."""

from pathlib import Path

import click

from src.campaign import CampaignOrchestrator
from src.config import PLANNERS, ConfigError, ExperimentConfig, load_config
from src.environment import ScenarioError
from src.plots import PlotDataError, emit_plots
from src.simulator import SimulationError

EXIT_CONFIG = 2
EXIT_FAILURE = 3


def common_options(command):
    """Options shared by every simulation subcommand."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False, path_type=Path),
            default=None,
            help="Flat key = value configuration file. Default: built-in defaults",
        ),
        click.option("--seed", type=int, default=None, help="Base scenario seed"),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output root"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def load(config_path: Path | None, **flags) -> ExperimentConfig:
    """Load the configuration with CLI flags on top; exits with code 2 on bad input."""
    keys = {
        "seed": "harness.seed",
        "out": "harness.output",
        "runs": "harness.runs",
        "planner": "harness.planner",
        "horizons": "harness.horizons",
        "sigmas": "harness.sigmas",
    }
    overrides = {keys[name]: str(value) for name, value in flags.items() if value is not None}
    try:
        return load_config(config_path, overrides)
    except ConfigError as e:
        click.echo(f"✗ {e}", err=True)
        raise SystemExit(EXIT_CONFIG) from e


@click.group()
def cli():
    """Shadow-aware UAV river inspection path planning."""
    pass


@cli.command()
@common_options
@click.option("--planner", type=click.Choice(PLANNERS), default=None, help="Planner to fly")
def simulate(config_path, seed, out, planner):
    """Fly one closed-loop mission and write its CSV and plot files."""
    config = load(config_path, seed=seed, out=out, planner=planner)
    try:
        result = CampaignOrchestrator(config, config_path).simulate()
    except SimulationError as e:
        click.echo(f"✗ {e}", err=True)
        raise SystemExit(EXIT_FAILURE) from e
    if not result.metrics.success:
        click.echo("✗ Mission failed", err=True)
        raise SystemExit(EXIT_FAILURE)
    click.echo("✓ Mission complete")


@cli.command()
@common_options
@click.option("--runs", type=int, default=None, help="Paired seeds per planner")
@click.option(
    "--planner",
    "planners",
    type=click.Choice(PLANNERS),
    multiple=True,
    help="Planner to compare (repeatable). Default: pid, ifds, ifds_mpc",
)
def montecarlo(config_path, seed, out, runs, planners):
    """Compare planners over paired Monte Carlo seeds.

    Every planner flies the same scenario realization for each run index, so
    differences in the summary reflect the planner rather than the draw.
    """
    config = load(config_path, seed=seed, out=out, runs=runs)
    CampaignOrchestrator(config, config_path).monte_carlo(list(planners) or None)


@cli.command()
@common_options
@click.option("--runs", type=int, default=None, help="Paired seeds per horizon")
@click.option("--horizons", default=None, help="Comma-separated horizons, e.g. 5,10,20")
def sweep(config_path, seed, out, runs, horizons):
    """Sweep the MPC prediction horizon N."""
    config = load(config_path, seed=seed, out=out, runs=runs, horizons=horizons)
    CampaignOrchestrator(config, config_path).sweep_horizon()


@cli.command(name="ablate-dfaa")
@common_options
@click.option("--runs", type=int, default=None, help="Paired seeds per variant")
@click.option("--planner", type=click.Choice(PLANNERS), default=None, help="Planner to fly")
def ablate_dfaa(config_path, seed, out, runs, planner):
    """Compare runs with and without altitude adjustment on a narrow-corridor preset."""
    config = load(config_path, seed=seed, out=out, runs=runs, planner=planner)
    try:
        CampaignOrchestrator(config, config_path).ablate_dfaa()
    except ScenarioError as e:
        click.echo(f"✗ {e}", err=True)
        click.echo("\nRun with a config setting: scenario.preset = narrow", err=True)
        raise SystemExit(EXIT_CONFIG) from e


@cli.command()
@common_options
@click.option("--runs", type=int, default=None, help="Seeds per noise level")
@click.option("--planner", type=click.Choice(PLANNERS), default=None, help="Planner to fly")
@click.option("--sigmas", default=None, help="Comma-separated noise levels in meters, e.g. 0,1,3")
def robustness(config_path, seed, out, runs, planner, sigmas):
    """Success rate under Gaussian noise on the observed obstacle centers."""
    config = load(config_path, seed=seed, out=out, runs=runs, planner=planner, sigmas=sigmas)
    CampaignOrchestrator(config, config_path).robustness()


@cli.command()
@click.argument("run_dir", type=click.Path(file_okay=False, path_type=Path))
def plots(run_dir):
    """Write SVG and gnuplot files for a run directory."""
    try:
        written = emit_plots(run_dir)
    except PlotDataError as e:
        click.echo(f"✗ {e}", err=True)
        raise SystemExit(EXIT_FAILURE) from e
    for path in written:
        click.echo(f"✓ {path}")


if __name__ == "__main__":
    cli()
