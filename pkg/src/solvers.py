"""
Frank-Wolfe and projected gradient ascent over the product of occupancy
polytopes, the Euclidean projection PGA relies on, and an empirical monitor for
the O(1/sqrt(T)) decay of the minimal FW gap / gradient mapping.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .errors import DomainError, InitializationError, MultichainError, ProjectionFailure
from .mdp_core import (MdpModel, OccupancyMeasure, OccupancySet, StationaryPolicy,
                       occupancy_to_policy, state_occupancy)
from .objective import (DEFAULT_LOG_EPSILON, ObjectiveConfig, evaluate_members, lipschitz_bound,
                        pairwise_jsd_matrix)
from .polytope_lp import (LP_METHODS, PIVOT_RULES, LpBasis, PolytopeSpec, build_polytope,
                          sample_feasible, solve_lp)

logger = logging.getLogger('Solvers')

SUFFICIENT_INCREASE = 1e-4
MAX_SHRINKS = 50
FW_GAP_ROUNDING = 1e-9
MEMBER_SEED_STRIDE = 10007

PROJECTION_GAP_TOLERANCE = 1e-8
PROJECTION_MAX_ITERATIONS = 500
PROJECTION_FEASIBILITY_TOLERANCE = 1e-6
FEASIBLE_INPUT_TOLERANCE = 1e-10
POLISH_MAX_ROUNDS = 50
POLISH_TOLERANCE = 1e-10
POLISH_RESIDUAL_TOLERANCE = 1e-9

PGA_STEP_DELTA = 1e-6
PGA_MIN_STEP = 1e-6
PGA_MAX_STEP = 1.0

MONITOR_REFERENCE_INDEX = 5
MONITOR_MAX_RATIO = 3.0
MONITOR_GROWTH_LIMIT = 0.4

TERMINATION_GAP = "gap"
TERMINATION_MAPPING = "mapping"
TERMINATION_STEP = "step"
TERMINATION_MAX_ITERATIONS = "max-iterations"

STEP_SCHEDULES = ("constant", "sqrt")
GRADIENT_MAPPINGS = ("nesterov", "half_step")
PGA_STOPPING_RULES = ("mapping", "step")


@dataclass(frozen=True)
class SolverConfig:
    k: int = 2
    lam: float = 8.0
    max_iterations: int = 30
    fw_gap_tolerance: float = 1e-3
    pga_step_tolerance: float = 0.01
    step_size_eta: Optional[float] = None  # None: 1/L at delta = 1e-6, clipped to [1e-6, 1]
    step_schedule: str = "constant"
    gradient_mapping: str = "nesterov"
    pga_stopping: str = "mapping"
    backtracking_shrink: float = 0.5
    sufficient_increase: float = SUFFICIENT_INCREASE
    seed: int = 0
    member_seeds: Optional[Tuple[int, ...]] = None
    delta_floor: float = 0.0
    log_epsilon: float = DEFAULT_LOG_EPSILON
    lp_method: str = "simplex"
    pivot_rule: str = "bland"
    member_workers: int = 1
    record_iterates: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        if self.lam < 0.0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")
        if self.max_iterations < 0:
            raise DomainError(f"max_iterations must be nonnegative, got {self.max_iterations}")
        if self.fw_gap_tolerance <= 0.0 or self.pga_step_tolerance <= 0.0:
            raise DomainError("tolerances must be positive")
        if not 0.0 < self.backtracking_shrink < 1.0:
            raise DomainError(f"backtracking_shrink must lie in (0, 1), got {self.backtracking_shrink}")
        if not 0.0 < self.sufficient_increase < 1.0:
            raise DomainError(f"sufficient_increase must lie in (0, 1), got {self.sufficient_increase}")
        if self.step_size_eta is not None and self.step_size_eta <= 0.0:
            raise DomainError(f"step_size_eta must be positive, got {self.step_size_eta}")
        if self.step_schedule not in STEP_SCHEDULES:
            raise DomainError(f"step_schedule must be one of {STEP_SCHEDULES}")
        if self.gradient_mapping not in GRADIENT_MAPPINGS:
            raise DomainError(f"gradient_mapping must be one of {GRADIENT_MAPPINGS}")
        if self.pga_stopping not in PGA_STOPPING_RULES:
            raise DomainError(f"pga_stopping must be one of {PGA_STOPPING_RULES}")
        if self.lp_method not in LP_METHODS:
            raise DomainError(f"lp_method must be one of {LP_METHODS}")
        if self.pivot_rule not in PIVOT_RULES:
            raise DomainError(f"pivot_rule must be one of {PIVOT_RULES}")
        if self.member_seeds is not None:
            object.__setattr__(self, 'member_seeds', tuple(int(seed) for seed in self.member_seeds))
            if len(self.member_seeds) != self.k:
                raise DomainError(f"{len(self.member_seeds)} member seeds given for k={self.k}")
        if self.member_workers < 1:
            raise DomainError(f"member_workers must be >= 1, got {self.member_workers}")

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(lam=self.lam, k=self.k, log_epsilon=self.log_epsilon)

    def seeds(self) -> Tuple[int, ...]:
        if self.member_seeds is not None:
            return self.member_seeds
        return tuple(self.seed + i * MEMBER_SEED_STRIDE for i in range(self.k))


@dataclass(frozen=True)
class IterationRecord:
    t: int
    objective: float
    gap_or_mapping: float  # FW gap g^t or gradient-mapping norm ||h^t||
    step: float  # gamma^t for FW, eta^t for PGA
    elapsed_seconds: float
    reward_term: float = 0.0
    average_diversity: float = 0.0
    displacement: float = 0.0  # ||rho^{t+1} - rho^t||


@dataclass(eq=False)
class SolveReport:
    solver: str
    final_set: OccupancySet
    final_policies: List[StationaryPolicy]
    per_iteration: List[IterationRecord]
    reward_per_policy: np.ndarray
    pairwise_jsd: np.ndarray
    wall_time: float
    termination_reason: str
    objective_value: float
    config: SolverConfig = field(default_factory=SolverConfig)
    iterates: List[np.ndarray] = field(default_factory=list)

    @property
    def mean_reward_per_policy(self) -> float:
        return float(np.mean(self.reward_per_policy))

    @property
    def average_pairwise_jsd(self) -> float:
        k = self.final_set.k
        if k < 2:
            return 0.0
        return float(self.pairwise_jsd[np.triu_indices(k, 1)].mean())

    @property
    def iterations(self) -> int:
        return len(self.per_iteration)

    @property
    def gap_label(self) -> str:
        return "fw_gap" if self.solver == "fw" else "mapping_norm"

    def trace_frame(self, emit_monitor: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame(
            [(r.t, r.objective, r.gap_or_mapping, r.step, r.elapsed_seconds) for r in self.per_iteration],
            columns=["t", "objective", "gap_or_mapping", "step", "elapsed_seconds"],
        )
        if emit_monitor and len(frame):
            summary = convergence_monitor(self)
            frame["prefix_min"] = summary.prefix_minimum
            frame["scaled_prefix_min"] = summary.scaled
        return frame

    def write_trace_csv(self, path: Union[str, Path], emit_monitor: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.trace_frame(emit_monitor).to_csv(path, index=False)
        return path

    def policies_to_dict(self, m: Optional[MdpModel] = None) -> List[Dict[str, Any]]:
        """The policy menu: each member's policy, reward and state occupancy"""
        menu = []
        for index, (rho, policy) in enumerate(zip(self.final_set, self.final_policies)):
            entry = {
                "member": index,
                "average_reward": float(self.reward_per_policy[index]),
                "policy": policy.probs.tolist(),
                "state_occupancy": state_occupancy(rho).tolist(),
            }
            if m is not None and m.labels is not None:
                entry["labels"] = list(m.labels)
            menu.append(entry)
        return menu

    def to_dict(self) -> Dict[str, Any]:
        return {
            "solver": self.solver,
            "termination_reason": self.termination_reason,
            "objective_value": self.objective_value,
            "reward_per_policy": self.reward_per_policy.tolist(),
            "mean_reward_per_policy": self.mean_reward_per_policy,
            "pairwise_jsd": self.pairwise_jsd.tolist(),
            "average_pairwise_jsd": self.average_pairwise_jsd,
            "wall_time": self.wall_time,
            "iterations": self.iterations,
            "config": asdict(self.config),
            "per_iteration": [asdict(record) for record in self.per_iteration],
        }

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
        return text


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    measure: np.ndarray
    inner_gap: float
    iterations: int
    polished: bool
    basis: Optional[LpBasis] = None


@dataclass(frozen=True, eq=False)
class MonitorSummary:
    values: np.ndarray
    prefix_minimum: np.ndarray
    scaled: np.ndarray  # prefix minimum times sqrt(T + 1)
    reference_index: int
    max_ratio: float
    growth_exponent: float
    bounded: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": np.arange(len(self.values)),
            "value": self.values,
            "prefix_min": self.prefix_minimum,
            "scaled_prefix_min": self.scaled,
        })


def _elapsed(start: float) -> float:
    return time.perf_counter() - start


def initialize_members(m: MdpModel, cfg: SolverConfig, spec: Optional[PolytopeSpec] = None) -> np.ndarray:
    """k random feasible starting points, member i drawn from its own sub-seed"""
    members = []
    for index, seed in enumerate(cfg.seeds()):
        try:
            rho = sample_feasible(m, seed).values
        except MultichainError as e:
            raise InitializationError(f"sampling member {index} with seed {seed} failed: {e}") from e
        if spec is not None and spec.floor > 0.0:
            rho = project_point(spec, rho, lp_method=cfg.lp_method, pivot_rule=cfg.pivot_rule).measure
        members.append(rho)
    return np.stack(members)


def _starting_members(m: MdpModel, cfg: SolverConfig, spec: PolytopeSpec,
                      initial: Optional[OccupancySet]) -> np.ndarray:
    if initial is None:
        return initialize_members(m, cfg, spec)
    if initial.k != cfg.k or (initial.num_states, initial.num_actions) != (m.num_states, m.num_actions):
        raise InitializationError(
            f"initial set is {initial.k} x ({initial.num_states}, {initial.num_actions}), "
            f"expected {cfg.k} x ({m.num_states}, {m.num_actions})"
        )
    return np.array(initial.members)


def _solve_member_lps(spec: PolytopeSpec, gradient: np.ndarray, bases: List[Optional[LpBasis]],
                      cfg: SolverConfig) -> Tuple[np.ndarray, List[Optional[LpBasis]]]:
    def solve(index):
        return solve_lp(spec, gradient[index], sense="max", basis=bases[index],
                        method=cfg.lp_method, pivot_rule=cfg.pivot_rule)

    if cfg.member_workers > 1:
        solutions = Parallel(n_jobs=cfg.member_workers, prefer="threads")(
            delayed(solve)(index) for index in range(gradient.shape[0])
        )
    else:
        solutions = [solve(index) for index in range(gradient.shape[0])]

    logger.debug(f"Member LPs took {[solution.iterations for solution in solutions]} pivots")
    return np.stack([solution.point for solution in solutions]), [solution.basis for solution in solutions]


def backtracking_step(phi: Callable[[float], float], slope: float, shrink: float = 0.5,
                      c1: float = SUFFICIENT_INCREASE, max_shrinks: int = MAX_SHRINKS) -> float:
    """
    Largest gamma in {1, shrink, shrink^2, ...} with phi(gamma) >= phi(0) + c1 gamma slope.
    Returns 0 when no candidate is accepted within max_shrinks tries.
    """
    base = phi(0.0)
    gamma = 1.0
    for _ in range(max_shrinks):
        if phi(gamma) >= base + c1 * gamma * slope:
            return gamma
        gamma *= shrink
    logger.debug(f"Line search rejected {max_shrinks} steps, returning 0")
    return 0.0


def _line_search_members(members: np.ndarray, direction: np.ndarray, reward: np.ndarray,
                         ocfg: ObjectiveConfig, slope: float, cfg: SolverConfig) -> float:
    if not np.any(direction):
        return 1.0

    def phi(gamma: float) -> float:
        return evaluate_members(members + gamma * direction, reward, ocfg, with_gradient=False).value

    return backtracking_step(phi, slope, cfg.backtracking_shrink, cfg.sufficient_increase)


def line_search(occupancy_set: OccupancySet, direction: np.ndarray, m: MdpModel, cfg: SolverConfig,
                slope: Optional[float] = None) -> float:
    """Backtracking step gamma in [0, 1] along a set-shaped direction"""
    members = occupancy_set.members
    direction = np.asarray(direction, dtype=float).reshape(members.shape)
    ocfg = cfg.objective_config()
    if slope is None:
        gradient = evaluate_members(members, m.reward_vector, ocfg).gradient
        slope = float(np.sum(direction * gradient))
    return _line_search_members(members, direction, m.reward_vector, ocfg, slope, cfg)


def _finish(solver: str, m: MdpModel, cfg: SolverConfig, members: np.ndarray,
            records: List[IterationRecord], start: float, reason: str,
            iterates: List[np.ndarray]) -> SolveReport:
    final_set = OccupancySet(members, m.num_states, m.num_actions)
    evaluation = evaluate_members(members, m.reward_vector, cfg.objective_config(), with_gradient=False)
    report = SolveReport(
        solver=solver,
        final_set=final_set,
        final_policies=[occupancy_to_policy(rho) for rho in final_set],
        per_iteration=records,
        reward_per_policy=members @ m.reward_vector,
        pairwise_jsd=pairwise_jsd_matrix(members, cfg.log_epsilon),
        wall_time=_elapsed(start),
        termination_reason=reason,
        objective_value=evaluation.value,
        config=cfg,
        iterates=iterates,
    )
    logger.info(
        f"{solver.upper()} finished ({reason}) after {len(records)} iterations in {report.wall_time:.2f}s: "
        f"reward/policy {report.mean_reward_per_policy:.4f}, diversity {report.average_pairwise_jsd:.4f}"
    )
    return report


def frank_wolfe(m: MdpModel, cfg: SolverConfig, initial: Optional[OccupancySet] = None) -> SolveReport:
    """Frank-Wolfe with per-member LP oracles, backtracking line search and FW-gap stopping"""
    start = time.perf_counter()
    logger.info(f"Starting Frank-Wolfe: k={cfg.k}, lambda={cfg.lam}, T={cfg.max_iterations}")
    ocfg = cfg.objective_config()
    reward = m.reward_vector
    spec = build_polytope(m, cfg.delta_floor)
    members = _starting_members(m, cfg, spec, initial)
    iterates = [members] if cfg.record_iterates else []
    bases: List[Optional[LpBasis]] = [None] * cfg.k
    records: List[IterationRecord] = []
    reason = TERMINATION_MAX_ITERATIONS

    for t in range(cfg.max_iterations + 1):
        evaluation = evaluate_members(members, reward, ocfg)
        vertices, bases = _solve_member_lps(spec, evaluation.gradient, bases, cfg)
        direction = vertices - members
        # Each vertex maximizes the linearization, so only rounding may push the gap below zero
        raw_gap = float(np.sum(direction * evaluation.gradient))
        if raw_gap < -FW_GAP_ROUNDING:
            logger.warning(f"FW iteration {t}: negative gap {raw_gap:.3e}, the LP oracle returned a non-optimal vertex")
            gap = raw_gap
        else:
            gap = max(raw_gap, 0.0)

        converged = 0.0 <= gap <= cfg.fw_gap_tolerance
        if converged or t == cfg.max_iterations:
            if converged:
                reason = TERMINATION_GAP
            records.append(IterationRecord(t, evaluation.value, gap, 0.0, _elapsed(start),
                                           evaluation.reward_term, evaluation.average_diversity))
            break

        # A negative gap means the direction does not ascend; keep the iterate
        step = _line_search_members(members, direction, reward, ocfg, gap, cfg) if gap >= 0.0 else 0.0
        displacement = step * float(np.linalg.norm(direction))
        records.append(IterationRecord(t, evaluation.value, gap, step, _elapsed(start),
                                       evaluation.reward_term, evaluation.average_diversity, displacement))
        logger.info(f"FW iteration {t}: objective {evaluation.value:.6f}, gap {gap:.3e}, step {step:.4g}")
        members = members + step * direction
        if cfg.record_iterates:
            iterates.append(members)

    return _finish("fw", m, cfg, members, records, start, reason, iterates)


def pga_step_size(lam: float, delta: float = PGA_STEP_DELTA) -> float:
    """eta = 1/L from the Lipschitz bound, clipped to [1e-6, 1]"""
    bound = lipschitz_bound(lam, delta)
    if bound <= 0.0:
        return PGA_MAX_STEP
    return float(np.clip(1.0 / bound, PGA_MIN_STEP, PGA_MAX_STEP))


def _polish(spec: PolytopeSpec, target: np.ndarray, point: np.ndarray) -> Optional[np.ndarray]:
    """
    Active-set refinement of an approximate projection. Solves the equality-constrained
    least-squares problem on the free coordinates, adjusting the free set until the
    KKT conditions hold. Returns None when they cannot be verified.
    """
    matrix = spec.equality_matrix
    rhs = spec.shifted_rhs
    shifted_target = target - spec.lower_bounds
    free = (point - spec.lower_bounds) > POLISH_TOLERANCE

    for _ in range(POLISH_MAX_ROUNDS):
        if not np.any(free):
            return None
        sub = matrix[:, free]
        multipliers = np.linalg.lstsq(sub @ sub.T, sub @ shifted_target[free] - rhs, rcond=None)[0]
        values = shifted_target[free] - sub.T @ multipliers

        if values.min() < -POLISH_TOLERANCE:
            indices = np.flatnonzero(free)
            free[indices[values < -POLISH_TOLERANCE]] = False
            continue

        bound_multipliers = matrix.T @ multipliers - shifted_target
        bound_multipliers[free] = 0.0
        worst = int(np.argmin(bound_multipliers))
        if bound_multipliers[worst] < -POLISH_TOLERANCE:
            free[worst] = True
            continue

        shifted = np.zeros_like(point)
        shifted[free] = np.clip(values, 0.0, None)
        candidate = spec.lower_bounds + shifted
        equality, _ = spec.residuals(candidate)
        if equality > POLISH_RESIDUAL_TOLERANCE:
            return None
        return candidate
    return None


def project_point(spec: PolytopeSpec, rho_tilde: np.ndarray, start: Optional[np.ndarray] = None,
                  basis: Optional[LpBasis] = None, gap_tolerance: float = PROJECTION_GAP_TOLERANCE,
                  max_iterations: int = PROJECTION_MAX_ITERATIONS, lp_method: str = "simplex",
                  pivot_rule: str = "bland") -> ProjectionResult:
    """
    Euclidean projection onto a polytope by Frank-Wolfe on 1/2 ||x - rho_tilde||^2.

    The inner loop uses the LP oracle with the exact quadratic step and stops once
    the inner FW gap is at most gap_tolerance. A given start point (PGA passes its
    current iterate) seeds an active-set polish that often certifies the answer
    with a single LP.
    """
    target = np.asarray(rho_tilde, dtype=float).reshape(-1)
    if target.size != spec.num_variables or not np.all(np.isfinite(target)):
        raise DomainError(f"projection input must be a finite vector of length {spec.num_variables}")

    polished = False
    if start is not None:
        point = np.asarray(start, dtype=float).reshape(-1).copy()
        candidate = _polish(spec, target, point)
        if candidate is not None:
            point, polished = candidate, True
    else:
        equality, bound = spec.residuals(target)
        if equality <= FEASIBLE_INPUT_TOLERANCE and bound <= 0.0:
            point = target.copy()
        else:
            vertex = solve_lp(spec, target, sense="max", basis=basis, method=lp_method, pivot_rule=pivot_rule)
            point, basis = vertex.point, vertex.basis

    gap = float("inf")
    iterations = 0
    moved = False
    for iterations in range(1, max_iterations + 1):
        gradient = point - target
        solution = solve_lp(spec, gradient, sense="min", basis=basis, method=lp_method, pivot_rule=pivot_rule)
        basis = solution.basis
        direction = solution.point - point
        gap = float(-gradient @ direction)
        if gap <= gap_tolerance:
            break
        curvature = float(direction @ direction)
        point = point + min(1.0, gap / curvature) * direction
        moved = True

    # an inner FW point is only sqrt(2 gap)-close to the projection
    if moved or gap > gap_tolerance:
        candidate = _polish(spec, target, point)
        if candidate is not None and np.linalg.norm(candidate - target) <= np.linalg.norm(point - target):
            point, polished = candidate, True
            gradient = point - target
            solution = solve_lp(spec, gradient, sense="min", basis=basis, method=lp_method, pivot_rule=pivot_rule)
            basis = solution.basis
            gap = max(float(-gradient @ (solution.point - point)), 0.0)
    if gap > gap_tolerance:
        logger.warning(f"Projection stopped at inner gap {gap:.3e} after {iterations} iterations")

    logger.debug(f"Projection inner gap {gap:.3e} after {iterations} iterations (polished={polished})")
    return ProjectionResult(point, max(gap, 0.0), iterations, polished, basis)


def project(rho_tilde: np.ndarray, m: MdpModel, floor: float = 0.0,
            start: Optional[np.ndarray] = None) -> OccupancyMeasure:
    """Closest occupancy measure to rho_tilde in Euclidean distance"""
    spec = build_polytope(m, floor)
    result = project_point(spec, rho_tilde, start=start)
    return OccupancyMeasure.for_model(result.measure, m)


def pga(m: MdpModel, cfg: SolverConfig, initial: Optional[OccupancySet] = None) -> SolveReport:
    """Projected gradient ascent with gradient-mapping (or step-norm) stopping"""
    start = time.perf_counter()
    base_eta = cfg.step_size_eta if cfg.step_size_eta is not None else pga_step_size(cfg.lam)
    logger.info(f"Starting PGA: k={cfg.k}, lambda={cfg.lam}, T={cfg.max_iterations}, eta={base_eta:.3g}")
    ocfg = cfg.objective_config()
    reward = m.reward_vector
    spec = build_polytope(m, cfg.delta_floor)
    members = _starting_members(m, cfg, spec, initial)
    iterates = [members] if cfg.record_iterates else []
    bases: List[Optional[LpBasis]] = [None] * cfg.k
    records: List[IterationRecord] = []
    reason = TERMINATION_MAX_ITERATIONS

    for t in range(cfg.max_iterations + 1):
        evaluation = evaluate_members(members, reward, ocfg)
        eta = base_eta / np.sqrt(t + 1) if cfg.step_schedule == "sqrt" else base_eta
        half_step = members + eta * evaluation.gradient

        projected = []
        for index in range(cfg.k):
            result = project_point(spec, half_step[index], start=members[index], basis=bases[index],
                                   lp_method=cfg.lp_method, pivot_rule=cfg.pivot_rule)
            equality, bound = spec.residuals(result.measure)
            if max(equality, bound) > PROJECTION_FEASIBILITY_TOLERANCE:
                raise ProjectionFailure(
                    f"projection of member {index} at iteration {t} missed feasibility "
                    f"(equality {equality:.3e}, bound {bound:.3e})"
                )
            bases[index] = result.basis
            projected.append(result.measure)
        updated = np.stack(projected)

        if cfg.gradient_mapping == "nesterov":
            mapping = (updated - members) / eta
        else:
            mapping = (updated - half_step) / eta
        mapping_norm = float(np.linalg.norm(mapping))
        displacement = float(np.linalg.norm(updated - members))
        measure = mapping_norm if cfg.pga_stopping == "mapping" else displacement

        records.append(IterationRecord(t, evaluation.value, mapping_norm, eta, _elapsed(start),
                                       evaluation.reward_term, evaluation.average_diversity, displacement))
        logger.info(f"PGA iteration {t}: objective {evaluation.value:.6f}, "
                    f"mapping {mapping_norm:.3e}, step norm {displacement:.3e}")

        if measure <= cfg.pga_step_tolerance:
            reason = TERMINATION_MAPPING if cfg.pga_stopping == "mapping" else TERMINATION_STEP
            break
        if t == cfg.max_iterations:
            break
        members = updated
        if cfg.record_iterates:
            iterates.append(members)

    return _finish("pga", m, cfg, members, records, start, reason, iterates)


def convergence_monitor(report: Union[SolveReport, Sequence[float]],
                        reference_index: int = MONITOR_REFERENCE_INDEX,
                        max_ratio: float = MONITOR_MAX_RATIO) -> MonitorSummary:
    """
    Prefix minima of the FW gaps (or mapping norms) scaled by sqrt(T + 1).

    The scaled sequence counts as bounded when it never exceeds max_ratio times
    its value at reference_index and its fitted log-log growth exponent stays
    below 0.4 (a constant sequence grows with exponent 0.5).
    """
    if isinstance(report, SolveReport):
        values = np.array([record.gap_or_mapping for record in report.per_iteration], dtype=float)
    else:
        values = np.asarray(report, dtype=float).reshape(-1)
    if values.size == 0:
        empty = np.zeros(0)
        return MonitorSummary(empty, empty, empty, 0, 1.0, 0.0, True)

    prefix_minimum = np.minimum.accumulate(values)
    horizon = np.arange(values.size) + 1.0
    scaled = prefix_minimum * np.sqrt(horizon)

    reference = min(reference_index, values.size - 1)
    if scaled[reference] > 0.0:
        ratio = float(np.max(scaled[reference:]) / scaled[reference])
    else:
        ratio = 1.0 if not np.any(scaled[reference:] > 0.0) else float("inf")

    positive = scaled > 0.0
    if np.count_nonzero(positive) >= 2:
        exponent = float(np.polyfit(np.log(horizon[positive]), np.log(scaled[positive]), 1)[0])
    else:
        exponent = 0.0

    bounded = ratio <= max_ratio and exponent < MONITOR_GROWTH_LIMIT
    if not bounded:
        logger.info(f"Convergence monitor flags growth: ratio {ratio:.3f}, exponent {exponent:.3f}")
    return MonitorSummary(values, prefix_minimum, scaled, reference, ratio, exponent, bounded)
