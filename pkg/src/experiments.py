"""
Experiment harness: randomized grid-world trials for the solver comparison and
the lambda, k and alpha sweeps, plus single annotated runs.
"""
import json
import logging
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .gridworld import GridWorldSpec, generate, render_occupancy, render_spec, resolve_layout
from .mdp_core import MdpModel
from .polytope_lp import optimal_policy_lp
from .solvers import SolveReport, SolverConfig, convergence_monitor, frank_wolfe, pga

logger = logging.getLogger('Experiments')

EXPERIMENTS = ("compare", "sweep_lambda", "sweep_k", "sweep_alpha", "single")
SOLVERS: Dict[str, Callable[[MdpModel, SolverConfig], SolveReport]] = {"fw": frank_wolfe, "pga": pga}

SWEPT_PARAMETER = {
    "compare": "lambda",
    "sweep_lambda": "lambda",
    "sweep_k": "k",
    "sweep_alpha": "alpha",
    "single": "lambda",
}

# Swept grids for compare/single are filled from the plan's fixed lambda
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "compare": dict(layout="four_room", trials=10, k=2, lam=8.0, alpha=0.95, solvers=("fw", "pga")),
    "sweep_lambda": dict(layout="nine_room", trials=10, k=6, lam=8.0, alpha=0.95,
                         grid=(0.0, 2.0, 4.0, 6.0, 8.0, 10.0), solvers=("fw",)),
    "sweep_k": dict(layout="nine_room", trials=10, k=6, lam=8.0, alpha=0.95,
                    grid=(2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0), solvers=("fw",)),
    "sweep_alpha": dict(layout="four_room", trials=20, k=2, lam=8.0, alpha=0.95,
                        grid=(0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0), solvers=("fw",)),
    "single": dict(layout="nine_room", trials=1, k=6, lam=8.0, alpha=0.95, solvers=("fw",)),
}

SUMMARY_COLUMNS = ["swept_value", "solver", "mean_reward_per_policy", "sd_reward", "mean_pairwise_jsd",
                   "sd_jsd", "mean_runtime_s", "optimal_reward_ref"]
SEED_VALUE_SCALE = 1e6


@dataclass(frozen=True)
class ExperimentPlan:
    experiment: str
    layout: str
    trials: int
    grid: Tuple[float, ...]
    k: int
    lam: float
    alpha: float
    seed: int = 0
    max_iterations: int = 30
    fw_gap_tolerance: float = 1e-3
    pga_step_tolerance: float = 0.01
    solvers: Tuple[str, ...] = ("fw",)
    output_dir: Path = Path("./results")
    workers: int = 1
    timing: bool = False
    lp_method: str = "simplex"
    slip_model: str = "others"
    wall_model: str = "barrier"
    emit_monitor: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        object.__setattr__(self, 'layout', resolve_layout(self.layout))
        object.__setattr__(self, 'grid', tuple(float(value) for value in self.grid))
        object.__setattr__(self, 'solvers', tuple(self.solvers))
        object.__setattr__(self, 'output_dir', Path(self.output_dir))
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not self.grid:
            raise ValueError("the swept grid must not be empty")
        if list(self.grid) != sorted(self.grid):
            raise ValueError(f"the swept grid must be sorted, got {self.grid}")
        unknown = [solver for solver in self.solvers if solver not in SOLVERS]
        if not self.solvers or unknown:
            raise ValueError(f"solvers must be drawn from {sorted(SOLVERS)}, got {self.solvers}")
        if self.experiment == "single" and len(self.solvers) != 1:
            raise ValueError(f"single runs exactly one solver, got {self.solvers}")
        if self.swept_parameter == "k" and any(value != int(value) or value < 1 for value in self.grid):
            raise ValueError(f"k values must be positive integers, got {self.grid}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    @property
    def swept_parameter(self) -> str:
        return SWEPT_PARAMETER[self.experiment]

    def alpha_for(self, value: float) -> float:
        return value if self.swept_parameter == "alpha" else self.alpha

    def solver_config(self, value: float, seed: int) -> SolverConfig:
        k, lam = self.k, self.lam
        if self.swept_parameter == "lambda":
            lam = value
        elif self.swept_parameter == "k":
            k = int(value)
        return SolverConfig(
            k=k,
            lam=lam,
            max_iterations=self.max_iterations,
            fw_gap_tolerance=self.fw_gap_tolerance,
            pga_step_tolerance=self.pga_step_tolerance,
            seed=seed,
            lp_method=self.lp_method,
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["output_dir"] = str(self.output_dir)
        data["grid"] = list(self.grid)
        data["solvers"] = list(self.solvers)
        data["swept_parameter"] = self.swept_parameter
        return data


@dataclass
class TrialRecord:
    trial: int
    swept_value: float
    solver: str
    seed: int
    world_seed: int
    mean_reward_per_policy: float = float("nan")
    average_pairwise_jsd: float = float("nan")
    runtime_s: float = float("nan")
    termination_reason: str = ""
    iterations: int = 0
    objective_value: float = float("nan")
    optimal_reward_ref: float = float("nan")
    heatmaps: List[str] = field(default_factory=list)
    trace_path: str = ""
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    records: List[TrialRecord]
    summary: pd.DataFrame


def default_plan(experiment: str, **overrides: Any) -> ExperimentPlan:
    """Plan with the experiment's defaults; None-valued overrides are ignored"""
    if experiment not in DEFAULTS:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    values = dict(DEFAULTS[experiment])
    values.update({key: value for key, value in overrides.items() if value is not None})
    if "grid" not in values or experiment in ("compare", "single"):
        values["grid"] = (values["lam"],)
    values["grid"] = tuple(sorted(float(value) for value in values["grid"]))
    return ExperimentPlan(experiment=experiment, **values)


def trial_seeds(base_seed: int, trial: int, value: float) -> Tuple[int, int]:
    """(world seed, solver seed) derived from the base seed, trial index and swept value"""
    sequence = np.random.SeedSequence([int(base_seed), int(trial), int(round(value * SEED_VALUE_SCALE))])
    world_seed, solver_seed = sequence.generate_state(2)
    return int(world_seed), int(solver_seed)


def _value_directory(plan: ExperimentPlan, value: float, solver: str) -> Path:
    return plan.output_dir / f"{plan.swept_parameter}={value:g}" / solver


def emit_artifacts(report: SolveReport, spec: GridWorldSpec, m: MdpModel, directory: Path, trial: int,
                   emit_monitor: bool = False) -> Tuple[Path, List[Path]]:
    """Trace CSV, one occupancy heatmap per member and the policy menu"""
    directory.mkdir(parents=True, exist_ok=True)
    trace_path = report.write_trace_csv(directory / f"trace_{trial}.csv", emit_monitor=emit_monitor)
    heatmaps = []
    for member, rho in enumerate(report.final_set):
        path = directory / f"occupancy_{trial}_{member}.svg"
        render_occupancy(spec, rho, path)
        heatmaps.append(path)
    (directory / f"policies_{trial}.json").write_text(json.dumps(report.policies_to_dict(m)))
    return trace_path, heatmaps


def run_trial(plan: ExperimentPlan, trial: int, value: float) -> List[TrialRecord]:
    """Generate one world and run every requested solver on it"""
    world_seed, solver_seed = trial_seeds(plan.seed, trial, value)
    records = [TrialRecord(trial, value, solver, solver_seed, world_seed) for solver in plan.solvers]

    try:
        spec, m = generate(plan.layout, world_seed, plan.alpha_for(value), plan.slip_model,
                           plan.wall_model)
        _, optimal_reward = optimal_policy_lp(m, method=plan.lp_method)
    except Exception as e:
        logger.error(f"Trial {trial} ({plan.swept_parameter}={value:g}) failed to set up: {str(e)}")
        logger.error(traceback.format_exc())
        for record in records:
            record.error = f"{type(e).__name__}: {e}"
        return records

    for record in records:
        record.optimal_reward_ref = optimal_reward
        try:
            cfg = plan.solver_config(value, solver_seed)
            started = time.perf_counter()
            report = SOLVERS[record.solver](m, cfg)
            record.runtime_s = time.perf_counter() - started

            directory = _value_directory(plan, value, record.solver)
            trace_path, heatmaps = emit_artifacts(report, spec, m, directory, trial, plan.emit_monitor)
            spec.to_json(directory / f"world_{trial}.json")
            record.trace_path = str(trace_path.relative_to(plan.output_dir))
            record.heatmaps = [str(path.relative_to(plan.output_dir)) for path in heatmaps]
            record.mean_reward_per_policy = report.mean_reward_per_policy
            record.average_pairwise_jsd = report.average_pairwise_jsd
            record.termination_reason = report.termination_reason
            record.iterations = report.iterations
            record.objective_value = report.objective_value
        except Exception as e:
            logger.error(f"Trial {trial} {record.solver} ({plan.swept_parameter}={value:g}) failed: {str(e)}")
            logger.error(traceback.format_exc())
            record.error = f"{type(e).__name__}: {e}"
    return records


def summarize(records: List[TrialRecord], plan: ExperimentPlan) -> pd.DataFrame:
    """Per (swept value, solver) means and unbiased standard deviations over successful trials"""
    rows = []
    for value in plan.grid:
        for solver in plan.solvers:
            group = [r for r in records if r.swept_value == value and r.solver == solver and r.error is None]
            rewards = pd.Series([r.mean_reward_per_policy for r in group], dtype=float)
            diversity = pd.Series([r.average_pairwise_jsd for r in group], dtype=float)
            runtimes = pd.Series([r.runtime_s for r in group], dtype=float)
            optimal = pd.Series([r.optimal_reward_ref for r in group], dtype=float)
            rows.append({
                "swept_value": value,
                "solver": solver,
                "mean_reward_per_policy": rewards.mean(),
                "sd_reward": rewards.std(ddof=1),
                "mean_pairwise_jsd": diversity.mean(),
                "sd_jsd": diversity.std(ddof=1),
                "mean_runtime_s": runtimes.mean() if plan.timing else None,
                "optimal_reward_ref": optimal.mean(),
            })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def records_frame(records: List[TrialRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(record) for record in records])
    if len(frame):
        frame["heatmaps"] = frame["heatmaps"].map(";".join)
    return frame


def write_outputs(plan: ExperimentPlan, records: List[TrialRecord], summary: pd.DataFrame) -> None:
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    (plan.output_dir / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    records_frame(records).to_csv(plan.output_dir / "trials.csv", index=False)
    summary.to_csv(plan.output_dir / "summary.csv", index=False)
    logger.info(f"Wrote summary.csv and trials.csv to {plan.output_dir}")


def run_plan(plan: ExperimentPlan) -> ExperimentResult:
    """Run every (trial, swept value) job on a bounded worker pool, aggregating in a stable order"""
    jobs = [(trial, value) for value in plan.grid for trial in range(plan.trials)]
    logger.info(f"Running {plan.experiment}: {len(jobs)} jobs, solvers {plan.solvers}, {plan.workers} workers")

    # Results stream back in submission order; the bar counts finished jobs
    pending = Parallel(n_jobs=plan.workers, return_as="generator")(
        delayed(run_trial)(plan, trial, value) for trial, value in jobs
    )
    results = list(tqdm(pending, total=len(jobs), desc=plan.experiment, unit="trial"))
    solver_order = {solver: index for index, solver in enumerate(plan.solvers)}
    records = sorted(
        (record for batch in results for record in batch),
        key=lambda r: (r.swept_value, solver_order[r.solver], r.trial),
    )
    failures = sum(record.error is not None for record in records)
    if failures:
        logger.warning(f"{failures} of {len(records)} trial runs failed; see trials.csv")

    summary = summarize(records, plan)
    write_outputs(plan, records, summary)
    return ExperimentResult(plan, records, summary)


def _require(plan: ExperimentPlan, experiment: str) -> None:
    if plan.experiment != experiment:
        raise ValueError(f"plan is for {plan.experiment!r}, expected {experiment!r}")


def run_compare(plan: ExperimentPlan) -> ExperimentResult:
    """FW and PGA on fresh worlds with identical initialization seeds"""
    _require(plan, "compare")
    return run_plan(plan)


def run_sweep_lambda(plan: ExperimentPlan) -> ExperimentResult:
    _require(plan, "sweep_lambda")
    return run_plan(plan)


def run_sweep_k(plan: ExperimentPlan) -> ExperimentResult:
    _require(plan, "sweep_k")
    return run_plan(plan)


def run_sweep_alpha(plan: ExperimentPlan) -> ExperimentResult:
    _require(plan, "sweep_alpha")
    return run_plan(plan)


@dataclass
class SingleRunResult:
    report: SolveReport
    spec: GridWorldSpec
    optimal_reward: float
    trace_path: Path
    heatmaps: List[Path]


def run_single(plan: ExperimentPlan) -> SingleRunResult:
    """One world, one solver: full trace, heatmaps, policy menu and monitor output"""
    _require(plan, "single")
    value = plan.grid[0]
    solver = plan.solvers[0]
    world_seed, solver_seed = trial_seeds(plan.seed, 0, value)
    output_dir = plan.output_dir

    try:
        spec, m = generate(plan.layout, world_seed, plan.alpha_for(value), plan.slip_model,
                           plan.wall_model)
        _, optimal_reward = optimal_policy_lp(m, method=plan.lp_method)
        report = SOLVERS[solver](m, plan.solver_config(value, solver_seed))
    except Exception as e:
        logger.error(f"Single {solver} run failed: {str(e)}")
        logger.error(traceback.format_exc())
        raise

    trace_path, heatmaps = emit_artifacts(report, spec, m, output_dir, 0, plan.emit_monitor)
    (output_dir / "policies.json").write_text(json.dumps(report.policies_to_dict(m)))
    report.to_json(output_dir / "report.json")
    render_spec(spec, output_dir / "world.svg")
    spec.to_json(output_dir / "world.json")
    (output_dir / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    if plan.emit_monitor:
        convergence_monitor(report).to_frame().to_csv(output_dir / "monitor.csv", index=False)

    logger.info(
        f"Single {solver} run: reward/policy {report.mean_reward_per_policy:.4f} "
        f"(optimal {optimal_reward:.4f}), diversity {report.average_pairwise_jsd:.4f}"
    )
    return SingleRunResult(report, spec, optimal_reward, trace_path, heatmaps)


RUNNERS = {
    "compare": run_compare,
    "sweep_lambda": run_sweep_lambda,
    "sweep_k": run_sweep_k,
    "sweep_alpha": run_sweep_alpha,
}
