import logging
import traceback
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import click

from .errors import PlannerError
from .experiments import RUNNERS, default_plan, run_single
from .gridworld import generate, render_spec
from .mdp_core import save_mdp
from .settings import configure_logging, load_settings

logger = logging.getLogger('DiversePlanner')

LAYOUT_CHOICES = {"four": "four_room", "nine": "nine_room"}
SOLVER_CHOICES = {"fw": ("fw",), "pga": ("pga",), "both": ("fw", "pga")}


def parse_grid(raw: Optional[str]) -> Optional[Tuple[float, ...]]:
    """'0,2,4' -> (0.0, 2.0, 4.0)"""
    if raw is None:
        return None
    try:
        values = tuple(float(token) for token in raw.split(",") if token.strip())
    except ValueError:
        raise click.BadParameter(f"grid must be comma-separated numbers, got {raw!r}")
    if not values:
        raise click.BadParameter("grid must contain at least one value")
    return values


def plan_options(command):
    """Flags shared by every experiment verb"""
    options = [
        click.option("--layout", type=click.Choice(sorted(LAYOUT_CHOICES)), default=None),
        click.option("--trials", type=int, default=None),
        click.option("--k", "k", type=int, default=None),
        click.option("--lambda", "lam", type=float, default=None),
        click.option("--alpha", type=float, default=None),
        click.option("--grid", type=str, default=None, help="Comma-separated swept values"),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--max-iters", "max_iterations", type=int, default=None),
        click.option("--fw-tol", "fw_gap_tolerance", type=float, default=None),
        click.option("--pga-tol", "pga_step_tolerance", type=float, default=None),
        click.option("--solver", type=click.Choice(sorted(SOLVER_CHOICES)), default=None),
        click.option("--out", "output_dir", type=click.Path(file_okay=False, path_type=Path), default=None),
        click.option("--workers", type=int, default=None),
        click.option("--timing", is_flag=True, default=False, help="Report mean runtimes in summary.csv"),
        click.option("--lp-method", type=click.Choice(["simplex", "highs"]), default=None),
        click.option("--slip-model", type=click.Choice(["others", "lateral", "others_and_stay"]), default=None),
        click.option("--wall-model", type=click.Choice(["barrier", "enterable"]), default=None),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def build_plan(ctx: click.Context, experiment: str, options: Dict[str, Any]):
    settings = ctx.obj["settings"]
    layout = options.pop("layout")
    solver = options.pop("solver")
    overrides = dict(options)
    overrides["layout"] = LAYOUT_CHOICES[layout] if layout else None
    overrides["solvers"] = SOLVER_CHOICES[solver] if solver else None
    overrides["grid"] = parse_grid(overrides["grid"])
    overrides["output_dir"] = overrides["output_dir"] or settings.output_dir / experiment
    overrides["workers"] = overrides["workers"] or settings.workers
    overrides["lp_method"] = overrides["lp_method"] or settings.lp_method
    return default_plan(experiment, **overrides)


def run_experiment(ctx: click.Context, experiment: str, options: Dict[str, Any]) -> None:
    try:
        plan = build_plan(ctx, experiment, options)
        result = RUNNERS[experiment](plan)
    except (PlannerError, ValueError) as e:
        logger.error(f"{experiment} failed: {str(e)}")
        logger.error(traceback.format_exc())
        raise click.ClickException(str(e))
    click.echo(result.summary.to_string(index=False))
    click.echo(f"Results written to {plan.output_dir}")


@click.group()
@click.option("--log-level", default=None, help="Overrides DIVERSE_PLANNER_LOG_LEVEL")
@click.option("--env-file", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], env_file: Optional[Path]):
    """Diverse near-optimal policy planning for average-reward MDPs"""
    try:
        settings = load_settings(env_file)
    except ValueError as e:
        raise click.ClickException(str(e))
    configure_logging(log_level.upper() if log_level else settings.log_level, settings.log_file)
    ctx.ensure_object(dict)
    ctx.obj["settings"] = settings


@cli.command()
@plan_options
@click.pass_context
def compare(ctx: click.Context, **options):
    """FW versus PGA on four-room worlds (k=2, lambda=8, alpha=.95)"""
    run_experiment(ctx, "compare", options)


@cli.command("sweep-lambda")
@plan_options
@click.pass_context
def sweep_lambda(ctx: click.Context, **options):
    """Reward and diversity as functions of lambda on nine-room worlds"""
    run_experiment(ctx, "sweep_lambda", options)


@cli.command("sweep-k")
@plan_options
@click.pass_context
def sweep_k(ctx: click.Context, **options):
    """Reward and diversity as functions of the set size k"""
    run_experiment(ctx, "sweep_k", options)


@cli.command("sweep-alpha")
@plan_options
@click.pass_context
def sweep_alpha(ctx: click.Context, **options):
    """Reward and diversity as functions of the correct-transition probability"""
    run_experiment(ctx, "sweep_alpha", options)


@cli.command()
@plan_options
@click.option("--emit-monitor", is_flag=True, default=False, help="Write the scaled minimal-gap series")
@click.pass_context
def single(ctx: click.Context, emit_monitor: bool, **options):
    """One world, one solver, with per-iteration trace and heatmaps"""
    try:
        plan = build_plan(ctx, "single", {**options, "emit_monitor": emit_monitor})
        result = run_single(plan)
    except (PlannerError, ValueError) as e:
        logger.error(f"single failed: {str(e)}")
        logger.error(traceback.format_exc())
        raise click.ClickException(str(e))
    report = result.report
    click.echo(f"solver: {report.solver}  termination: {report.termination_reason}  iterations: {report.iterations}")
    click.echo(f"reward/policy: {report.mean_reward_per_policy:.4f}  optimal: {result.optimal_reward:.4f}")
    click.echo(f"average pairwise JSD: {report.average_pairwise_jsd:.4f}")
    click.echo(f"Results written to {plan.output_dir}")


@cli.command()
@click.option("--layout", type=click.Choice(sorted(LAYOUT_CHOICES)), default="four", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--alpha", type=float, default=0.95, show_default=True)
@click.option("--slip-model", type=click.Choice(["others", "lateral", "others_and_stay"]), default="others")
@click.option("--wall-model", type=click.Choice(["barrier", "enterable"]), default="barrier")
@click.option("--out", "output_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
def render(ctx: click.Context, layout: str, seed: int, alpha: float, slip_model: str, wall_model: str,
           output_dir: Optional[Path]):
    """Generate a world and write its SVG, spec JSON and MDP JSON"""
    output_dir = output_dir or ctx.obj["settings"].output_dir / "render"
    try:
        spec, m = generate(LAYOUT_CHOICES[layout], seed, alpha, slip_model, wall_model)
    except (PlannerError, ValueError) as e:
        logger.error(f"render failed: {str(e)}")
        raise click.ClickException(str(e))
    render_spec(spec, output_dir / "world.svg")
    spec.to_json(output_dir / "world.json")
    save_mdp(m, output_dir / "mdp.json")
    click.echo(f"Wrote world.svg, world.json and mdp.json to {output_dir}")


if __name__ == "__main__":
    cli(obj={})
