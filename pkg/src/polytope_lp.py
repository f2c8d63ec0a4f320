"""
The occupancy-measure polytope in standard form and a two-phase revised simplex
method over it. The same oracle serves the optimal-policy LP and the linear
subproblems of the Frank-Wolfe solvers.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple, Union

import networkx as nx
import numpy as np
from scipy.optimize import linprog

from .errors import (DimensionMismatch, FloorInfeasible, LpInfeasible, LpIterationLimit,
                     LpNumericalError, LpUnbounded)
from .mdp_core import (MdpModel, OccupancyMeasure, StationaryPolicy, check_weak_accessibility,
                       policy_to_occupancy, support_graph)

logger = logging.getLogger('PolytopeLP')

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_ITERATION_LIMIT = "iteration-limit"

LP_METHODS = ("simplex", "highs")
PIVOT_RULES = ("bland", "dantzig")

REDUCED_COST_TOLERANCE = 1e-10  # relative to the largest cost
PIVOT_TOLERANCE = 1e-9  # relative to the largest direction entry
ABSOLUTE_PIVOT_FLOOR = 1e-11
HARRIS_TOLERANCE = 1e-9
PIVOT_TIE_TOLERANCE = 1e-9
DRIVE_OUT_TOLERANCE = 1e-7
INVERSE_DRIFT_TOLERANCE = 1e-6
PRIMAL_TOLERANCE = 1e-9
PHASE_ONE_TOLERANCE = 1e-9
EQUALITY_TOLERANCE = 1e-8
BOUND_TOLERANCE = 1e-9
REFACTOR_INTERVAL = 64
DEGENERATE_SWITCH = 50
DEFAULT_MAX_PIVOTS = 100_000
DIRICHLET_CONCENTRATION = 1.0


@dataclass(frozen=True, eq=False)
class LpBasis:
    """A basis of the equality system: kept constraint rows and one basic column per row"""
    rows: Tuple[int, ...]
    columns: Tuple[int, ...]
    inverse: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class LpSolution:
    point: np.ndarray
    objective_value: float
    status: str
    iterations: int = 0
    basis: Optional[LpBasis] = None


@dataclass(frozen=True, eq=False)
class PolytopeSpec:
    """
    {x : equality_matrix x = equality_rhs, x >= lower_bounds}. The balance row of
    the highest-index state is dropped; the last row is the normalization.

    crash_columns, when known, are the pairs of a deterministic unichain policy;
    they index a nonsingular basis that is tried before phase one.
    """
    equality_matrix: np.ndarray
    equality_rhs: np.ndarray
    lower_bounds: np.ndarray
    num_states: int
    num_actions: int
    floor: float
    dropped_row: int
    crash_columns: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        for name in ('equality_matrix', 'equality_rhs', 'lower_bounds'):
            array = np.array(getattr(self, name), dtype=float, copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def num_variables(self) -> int:
        return self.equality_matrix.shape[1]

    @cached_property
    def shifted_rhs(self) -> np.ndarray:
        """Right-hand side after substituting x = lower_bounds + y, y >= 0"""
        return self.equality_rhs - self.equality_matrix @ self.lower_bounds

    @cached_property
    def feasible_basis(self) -> LpBasis:
        basis = crash_basis(self)
        return basis if basis is not None else phase_one(self)

    def residuals(self, point: np.ndarray) -> Tuple[float, float]:
        """(max equality residual, max lower-bound violation) of a candidate point"""
        equality = float(np.max(np.abs(self.equality_matrix @ point - self.equality_rhs)))
        bound = float(max(0.0, np.max(self.lower_bounds - point)))
        return equality, bound


def reaching_policy(m: MdpModel) -> Optional[Tuple[int, ...]]:
    """
    Deterministic policy that moves every state one support-graph step closer to
    the smallest recurrent state, so the induced chain has a single recurrent
    class. None when the MDP fails the weak accessibility check.
    """
    report = check_weak_accessibility(m)
    if not report.weakly_accessible:
        return None

    target = min(report.recurrent_states)
    distances = nx.single_source_shortest_path_length(support_graph(m).reverse(copy=False), target)
    if len(distances) < m.num_states:
        return None
    distance = np.array([distances[state] for state in range(m.num_states)])

    actions = [0] * m.num_states
    for state in range(m.num_states):
        if state == target:
            continue
        closer = distance == distance[state] - 1
        reach = m.transition[state][:, closer].sum(axis=1)
        actions[state] = int(np.flatnonzero(reach > 0.0)[0])
    return tuple(actions)


def build_polytope(m: MdpModel, floor: float = 0.0) -> PolytopeSpec:
    """Standard-form constraints of the occupancy polytope, optionally with rho >= floor"""
    num_variables = m.num_pairs
    if floor < 0.0:
        raise FloorInfeasible(f"floor must be nonnegative, got {floor}")
    if floor * num_variables > 1.0:
        raise FloorInfeasible(
            f"floor {floor} times {num_variables} state-action pairs exceeds the unit mass"
        )

    outflow = np.repeat(np.eye(m.num_states), m.num_actions, axis=1)
    inflow = m.pair_transition.T
    balance = outflow - inflow

    dropped_row = m.num_states - 1
    matrix = np.vstack([balance[:dropped_row], np.ones((1, num_variables))])
    rhs = np.zeros(matrix.shape[0])
    rhs[-1] = 1.0

    actions = reaching_policy(m)
    crash_columns = None
    if actions is not None:
        crash_columns = tuple(state * m.num_actions + action for state, action in enumerate(actions))

    logger.debug(f"Built polytope with {matrix.shape[0]} rows, {num_variables} columns, floor {floor}")
    return PolytopeSpec(
        equality_matrix=matrix,
        equality_rhs=rhs,
        lower_bounds=np.full(num_variables, float(floor)),
        num_states=m.num_states,
        num_actions=m.num_actions,
        floor=float(floor),
        dropped_row=dropped_row,
        crash_columns=crash_columns,
    )


def _refactor(matrix: np.ndarray, columns: List[int]) -> np.ndarray:
    """Fresh inverse of the basis matrix; LpNumericalError if it is singular or ill-conditioned"""
    basis_matrix = matrix[:, columns]
    try:
        binv = np.linalg.inv(basis_matrix)
    except np.linalg.LinAlgError as e:
        raise LpNumericalError(f"basis of {len(columns)} columns is singular") from e
    drift = float(np.max(np.abs(binv @ basis_matrix - np.eye(len(columns)))))
    if not np.isfinite(drift) or drift > INVERSE_DRIFT_TOLERANCE:
        raise LpNumericalError(f"basis of {len(columns)} columns is ill-conditioned (inverse drift {drift:.3e})")
    return binv


def _pivot(binv: np.ndarray, direction: np.ndarray, row: int) -> None:
    """Product-form update of the basis inverse, in place"""
    pivot_row = binv[row] / direction[row]
    binv -= np.outer(direction, pivot_row)
    binv[row] = pivot_row


def _leaving_row(direction: np.ndarray, basic_values: np.ndarray, columns: List[int]) -> Optional[int]:
    """
    Two-pass Harris ratio test. Pass one bounds the step so that no basic value
    drops below -HARRIS_TOLERANCE; pass two picks, among the rows blocking within
    that bound, the largest pivot element. Remaining ties go to the basic
    variable with the smallest index.
    """
    scale = float(np.max(np.abs(direction)))
    eligible = np.flatnonzero(direction > max(PIVOT_TOLERANCE * scale, ABSOLUTE_PIVOT_FLOOR))
    if eligible.size == 0:
        return None

    pivots = direction[eligible]
    values = basic_values[eligible]
    bound = float(np.min((values + HARRIS_TOLERANCE) / pivots))
    blocking = eligible[values / pivots <= bound]
    largest = float(direction[blocking].max())
    strongest = blocking[direction[blocking] >= largest * (1.0 - PIVOT_TIE_TOLERANCE)]
    return int(min(strongest, key=lambda row: columns[row]))


def _run_simplex(matrix: np.ndarray, rhs: np.ndarray, cost: np.ndarray, columns: List[int],
                 binv: np.ndarray, max_iterations: int,
                 pivot_rule: str) -> Tuple[str, List[int], np.ndarray, int]:
    """Primal revised simplex for min cost.y, matrix y = rhs, y >= 0 from a feasible basis"""
    num_variables = matrix.shape[1]
    is_basic = np.zeros(num_variables, dtype=bool)
    is_basic[columns] = True
    use_bland = pivot_rule == "bland"
    optimality_tolerance = REDUCED_COST_TOLERANCE * max(1.0, float(np.max(np.abs(cost))))
    iterations = 0
    since_refactor = 0
    degenerate_run = 0

    while True:
        basic_values = binv @ rhs
        duals = cost[columns] @ binv
        reduced = cost - duals @ matrix
        reduced[is_basic] = 0.0
        candidates = np.flatnonzero(reduced < -optimality_tolerance)
        if candidates.size == 0:
            return STATUS_OPTIMAL, columns, binv, iterations
        if iterations >= max_iterations:
            return STATUS_ITERATION_LIMIT, columns, binv, iterations

        if use_bland:
            entering = int(candidates[0])
        else:
            entering = int(candidates[np.argmin(reduced[candidates])])

        direction = binv @ matrix[:, entering]
        leaving_row = _leaving_row(direction, basic_values, columns)
        if leaving_row is None:
            return STATUS_UNBOUNDED, columns, binv, iterations
        step = basic_values[leaving_row] / direction[leaving_row]

        _pivot(binv, direction, leaving_row)
        is_basic[columns[leaving_row]] = False
        is_basic[entering] = True
        columns[leaving_row] = entering
        iterations += 1

        since_refactor += 1
        if since_refactor >= REFACTOR_INTERVAL:
            binv = _refactor(matrix, columns)
            since_refactor = 0

        if not use_bland:
            degenerate_run = degenerate_run + 1 if step <= PRIMAL_TOLERANCE else 0
            if degenerate_run >= DEGENERATE_SWITCH:
                logger.debug(f"{degenerate_run} degenerate pivots in a row, switching to Bland's rule")
                use_bland = True


def crash_basis(spec: PolytopeSpec) -> Optional[LpBasis]:
    """Basis of the polytope's crash columns when it factors cleanly and is primal feasible"""
    if spec.crash_columns is None:
        return None
    columns = list(spec.crash_columns)
    try:
        inverse = _refactor(spec.equality_matrix, columns)
    except LpNumericalError as error:
        logger.debug(f"Crash basis rejected: {error}")
        return None
    if np.min(inverse @ spec.shifted_rhs) < -PRIMAL_TOLERANCE:
        logger.debug("Crash basis is not primal feasible under the floor, falling back to phase one")
        return None
    inverse.setflags(write=False)
    return LpBasis(rows=tuple(range(spec.equality_matrix.shape[0])), columns=tuple(columns), inverse=inverse)


def phase_one(spec: PolytopeSpec) -> LpBasis:
    """Find a feasible basis with artificial variables, removing redundant rows"""
    matrix = spec.equality_matrix
    rhs = spec.shifted_rhs
    num_rows, num_variables = matrix.shape

    signs = np.where(rhs < 0.0, -1.0, 1.0)
    signed_matrix = matrix * signs[:, None]
    signed_rhs = rhs * signs
    auxiliary = np.hstack([signed_matrix, np.eye(num_rows)])
    cost = np.concatenate([np.zeros(num_variables), np.ones(num_rows)])

    def search(pivot_rule: str) -> Tuple[str, List[int], np.ndarray, int]:
        columns = list(range(num_variables, num_variables + num_rows))
        return _run_simplex(auxiliary, signed_rhs, cost, columns, np.eye(num_rows), DEFAULT_MAX_PIVOTS, pivot_rule)

    try:
        status, columns, binv, iterations = search("bland")
    except LpNumericalError as error:
        logger.warning(f"Phase one lost its basis ({error}), restarting with Dantzig pricing")
        status, columns, binv, iterations = search("dantzig")
    if status == STATUS_ITERATION_LIMIT:
        raise LpIterationLimit(f"phase one stopped after {iterations} pivots")

    infeasibility = float(cost[columns] @ (binv @ signed_rhs))
    if infeasibility > PHASE_ONE_TOLERANCE:
        raise LpInfeasible(f"polytope is empty (phase-one infeasibility {infeasibility:.3e})")

    # Drive the remaining zero-level artificials out of the basis
    redundant_rows = []
    for row in range(num_rows):
        if columns[row] < num_variables:
            continue
        tableau_row = np.abs(binv[row] @ signed_matrix)
        entering = int(np.argmax(tableau_row))
        if tableau_row[entering] > DRIVE_OUT_TOLERANCE:
            _pivot(binv, binv @ auxiliary[:, entering], row)
            columns[row] = entering
        else:
            redundant_rows.append(columns[row] - num_variables)

    kept_rows = tuple(row for row in range(num_rows) if row not in set(redundant_rows))
    basic = [column for column in columns if column < num_variables]
    inverse = _refactor(matrix[list(kept_rows)], basic)
    inverse.setflags(write=False)

    logger.info(
        f"Phase one found a feasible basis after {iterations} pivots "
        f"({len(redundant_rows)} redundant rows removed)"
    )
    return LpBasis(rows=kept_rows, columns=tuple(basic), inverse=inverse)


def _solve_highs(spec: PolytopeSpec, objective: np.ndarray, cost: np.ndarray) -> LpSolution:
    result = linprog(
        cost,
        A_eq=spec.equality_matrix,
        b_eq=spec.equality_rhs,
        bounds=[(lower, None) for lower in spec.lower_bounds],
        method="highs-ds",
    )
    status = {0: STATUS_OPTIMAL, 1: STATUS_ITERATION_LIMIT, 2: STATUS_INFEASIBLE,
              3: STATUS_UNBOUNDED}.get(result.status, STATUS_INFEASIBLE)
    if status != STATUS_OPTIMAL:
        solution = LpSolution(np.full(spec.num_variables, np.nan), float("nan"), status,
                              int(getattr(result, "nit", 0)))
        _raise_for_status(solution, result.message)
    point = np.clip(result.x, spec.lower_bounds, None)
    return LpSolution(point, float(objective @ point), STATUS_OPTIMAL, int(result.nit))


def _raise_for_status(solution: LpSolution, detail: str = "") -> None:
    if solution.status == STATUS_UNBOUNDED:
        raise LpUnbounded(f"LP reported unbounded on a bounded polytope (internal error) {detail}", solution)
    if solution.status == STATUS_ITERATION_LIMIT:
        raise LpIterationLimit(f"LP stopped after {solution.iterations} pivots {detail}", solution)
    if solution.status == STATUS_INFEASIBLE:
        raise LpInfeasible(f"LP is infeasible {detail}", solution)


def _start_basis(spec: PolytopeSpec, basis: Optional[LpBasis]) -> Tuple[LpBasis, np.ndarray]:
    """Warm-start basis with a writable inverse, or the polytope's feasible basis"""
    fresh = spec.feasible_basis
    if basis is None:
        return fresh, np.array(fresh.inverse)

    matrix = spec.equality_matrix[list(basis.rows)]
    if basis.inverse is not None:
        binv = np.array(basis.inverse)
    else:
        try:
            binv = _refactor(matrix, list(basis.columns))
        except LpNumericalError as error:
            logger.debug(f"Warm-start basis rejected ({error}), using the feasible basis")
            return fresh, np.array(fresh.inverse)
    if np.min(binv @ spec.shifted_rhs[list(basis.rows)]) < -PRIMAL_TOLERANCE:
        logger.debug("Warm-start basis is not primal feasible, using the feasible basis")
        return fresh, np.array(fresh.inverse)
    return basis, binv


def _basic_point(spec: PolytopeSpec, rows: List[int], columns: List[int], binv: np.ndarray) -> np.ndarray:
    matrix = spec.equality_matrix[rows][:, columns]
    rhs = spec.shifted_rhs[rows]
    values = binv @ rhs
    # one step of iterative refinement against the unfactored basis
    values += binv @ (rhs - matrix @ values)
    shifted = np.zeros(spec.num_variables)
    shifted[columns] = np.clip(values, 0.0, None)
    return spec.lower_bounds + shifted


def solve_lp(spec: PolytopeSpec, objective: np.ndarray, sense: str = "max",
             basis: Optional[LpBasis] = None, method: str = "simplex",
             pivot_rule: str = "bland", max_iterations: int = DEFAULT_MAX_PIVOTS) -> LpSolution:
    """
    Optimal vertex of the polytope for a linear objective.

    Without a warm-start basis the search starts from the polytope's feasible
    basis, so identical (spec, objective) inputs give identical solutions.
    """
    objective = np.asarray(objective, dtype=float).reshape(-1)
    if objective.size != spec.num_variables:
        raise DimensionMismatch(f"objective has {objective.size} entries, polytope has {spec.num_variables}")
    if sense not in ("max", "min"):
        raise ValueError(f"sense must be 'max' or 'min', got {sense!r}")
    if method not in LP_METHODS:
        raise ValueError(f"method must be one of {LP_METHODS}, got {method!r}")
    if pivot_rule not in PIVOT_RULES:
        raise ValueError(f"pivot_rule must be one of {PIVOT_RULES}, got {pivot_rule!r}")

    cost = -objective if sense == "max" else objective.copy()
    if method == "highs":
        return _solve_highs(spec, objective, cost)

    start, binv = _start_basis(spec, basis)
    rows = list(start.rows)
    matrix = spec.equality_matrix[rows]
    rhs = spec.shifted_rhs[rows]
    try:
        status, columns, binv, iterations = _run_simplex(
            matrix, rhs, cost, list(start.columns), binv, max_iterations, pivot_rule
        )
    except LpNumericalError as error:
        logger.warning(f"Simplex lost its basis ({error}), restarting from the feasible basis")
        start = spec.feasible_basis
        rows = list(start.rows)
        matrix = spec.equality_matrix[rows]
        rhs = spec.shifted_rhs[rows]
        status, columns, binv, iterations = _run_simplex(
            matrix, rhs, cost, list(start.columns), np.array(start.inverse), max_iterations, "bland"
        )

    point = _basic_point(spec, rows, columns, binv)
    if status == STATUS_OPTIMAL and spec.residuals(point)[0] > EQUALITY_TOLERANCE:
        binv = _refactor(matrix, columns)
        point = _basic_point(spec, rows, columns, binv)
        equality = spec.residuals(point)[0]
        if equality > EQUALITY_TOLERANCE:
            raise LpNumericalError(f"optimal vertex misses the equality constraints by {equality:.3e}")

    binv.setflags(write=False)
    solution = LpSolution(
        point=point,
        objective_value=float(objective @ point),
        status=status,
        iterations=iterations,
        basis=LpBasis(rows=tuple(rows), columns=tuple(columns), inverse=binv),
    )
    logger.debug(f"LP finished with status {status} after {iterations} pivots")
    if status != STATUS_OPTIMAL:
        _raise_for_status(solution)
    return solution


def optimal_policy_lp(m: MdpModel, method: str = "simplex") -> Tuple[OccupancyMeasure, float]:
    """Occupancy measure of an average-reward optimal policy and its reward"""
    accessibility = check_weak_accessibility(m)
    if not accessibility.weakly_accessible:
        logger.warning("MDP fails the weak accessibility check; the LP optimum may not be attained by a stationary policy")

    spec = build_polytope(m, 0.0)
    solution = solve_lp(spec, m.reward_vector, sense="max", method=method)
    rho = OccupancyMeasure.for_model(solution.point, m)
    logger.info(f"Optimal average reward {solution.objective_value:.6f} ({solution.iterations} pivots)")
    return rho, solution.objective_value


def sample_feasible(m: MdpModel, seed: int) -> OccupancyMeasure:
    """Occupancy measure of a random policy, each state's action distribution drawn from Dirichlet(1)"""
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(m.num_actions, DIRICHLET_CONCENTRATION), size=m.num_states)
    return policy_to_occupancy(m, StationaryPolicy(probs))


def dump_polytope(spec: PolytopeSpec, path: Union[str, Path]) -> Path:
    """Plain-text fixed-format dump: row-major equality matrix, rhs, lower bounds"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    num_rows, num_variables = spec.equality_matrix.shape
    with open(path, 'w') as handle:
        handle.write(f"ROWS {num_rows} COLUMNS {num_variables} FLOOR {spec.floor:.17e}\n")
        handle.write("EQUALITY\n")
        np.savetxt(handle, spec.equality_matrix, fmt="%.17e")
        handle.write("RHS\n")
        np.savetxt(handle, spec.equality_rhs[None, :], fmt="%.17e")
        handle.write("LOWER\n")
        np.savetxt(handle, spec.lower_bounds[None, :], fmt="%.17e")
    logger.info(f"Wrote polytope dump to {path}")
    return path
