import itertools

import numpy as np
import pytest

from src.errors import FloorInfeasible, LpInfeasible
from src.gridworld import generate
from src.mdp_core import (MdpModel, average_reward, deterministic_policy, occupancy_violations,
                          policy_to_occupancy)
from src.objective import jsd
from src.polytope_lp import (LpBasis, PolytopeSpec, _leaving_row, build_polytope, dump_polytope,
                             optimal_policy_lp, reaching_policy, sample_feasible, solve_lp)


def random_mdp(seed: int, num_states: int = 3, num_actions: int = 2) -> MdpModel:
    rng = np.random.default_rng(seed)
    transition = rng.random((num_states, num_actions, num_states)) + 0.05
    transition /= transition.sum(axis=2, keepdims=True)
    return MdpModel(transition, rng.normal(size=(num_states, num_actions)))


def cycle_mdp() -> MdpModel:
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 1] = 1.0
    transition[1, 0, 0] = 1.0
    return MdpModel(transition, np.array([[1.0], [2.0]]))


def enumerate_vertices(spec: PolytopeSpec):
    """Basic feasible solutions by brute force over column subsets"""
    matrix, rhs = spec.equality_matrix, spec.equality_rhs
    rows, columns = matrix.shape
    vertices = []
    for subset in itertools.combinations(range(columns), rows):
        basis = matrix[:, subset]
        if abs(np.linalg.det(basis)) < 1e-12:
            continue
        values = np.linalg.solve(basis, rhs)
        if values.min() < -1e-12:
            continue
        point = np.zeros(columns)
        point[list(subset)] = values
        vertices.append(point)
    return vertices


def best_deterministic_reward(m: MdpModel) -> float:
    return max(
        average_reward(policy_to_occupancy(m, deterministic_policy(m, actions)), m)
        for actions in itertools.product(range(m.num_actions), repeat=m.num_states)
    )


def test_polytope_shape_and_rhs():
    m = random_mdp(0, num_states=4, num_actions=3)
    spec = build_polytope(m)
    assert spec.equality_matrix.shape == (4, 12)
    assert np.array_equal(spec.equality_rhs, [0.0, 0.0, 0.0, 1.0])
    assert spec.dropped_row == 3
    assert np.all(spec.lower_bounds == 0.0)


def test_single_point_polytope():
    spec = build_polytope(cycle_mdp())
    solution = solve_lp(spec, np.array([1.0, 0.0]))
    assert np.allclose(solution.point, [0.5, 0.5])
    assert solution.status == "optimal"


def test_floor_above_uniform_mass_is_rejected():
    m = random_mdp(1)
    with pytest.raises(FloorInfeasible):
        build_polytope(m, floor=1.0 / 6.0 + 1e-6)


def test_constant_objective_returns_feasible_vertex():
    m = random_mdp(2)
    spec = build_polytope(m)
    solution = solve_lp(spec, np.zeros(6))
    assert solution.objective_value == 0.0
    equality, bound = spec.residuals(solution.point)
    assert equality < 1e-8
    assert bound <= 1e-9


def test_maximizing_one_pair_matches_vertex_enumeration():
    m = random_mdp(3, num_states=2, num_actions=2)
    spec = build_polytope(m)
    objective = np.array([1.0, 0.0, 0.0, 0.0])
    solution = solve_lp(spec, objective)
    best = max(vertex @ objective for vertex in enumerate_vertices(spec))
    assert solution.objective_value == pytest.approx(best, abs=1e-9)


def test_random_objectives_match_vertex_enumeration():
    rng = np.random.default_rng(4)
    m = random_mdp(5, num_states=3, num_actions=2)
    spec = build_polytope(m)
    vertices = enumerate_vertices(spec)
    for _ in range(20):
        objective = rng.normal(size=6)
        best_max = max(vertex @ objective for vertex in vertices)
        best_min = min(vertex @ objective for vertex in vertices)
        assert solve_lp(spec, objective, sense="max").objective_value == pytest.approx(best_max, abs=1e-9)
        assert solve_lp(spec, objective, sense="min").objective_value == pytest.approx(best_min, abs=1e-9)


def test_optimal_policy_matches_deterministic_enumeration():
    rng = np.random.default_rng(6)
    for trial in range(50):
        num_states = int(rng.integers(1, 6))
        num_actions = int(rng.integers(1, 4))
        m = random_mdp(100 + trial, num_states, num_actions)
        rho, value = optimal_policy_lp(m)
        assert value == pytest.approx(best_deterministic_reward(m), abs=1e-6)
        assert occupancy_violations(rho, m) == []


def test_single_action_mdp_has_unique_occupancy():
    m = random_mdp(7, num_states=4, num_actions=1)
    rho, _ = optimal_policy_lp(m)
    expected = policy_to_occupancy(m, deterministic_policy(m, [0, 0, 0, 0]))
    assert np.allclose(rho.values, expected.values, atol=1e-9)


def test_solutions_are_deterministic():
    m = random_mdp(8, num_states=5, num_actions=3)
    spec = build_polytope(m)
    objective = np.random.default_rng(9).normal(size=15)
    first = solve_lp(spec, objective)
    second = solve_lp(build_polytope(m), objective)
    assert np.array_equal(first.point, second.point)
    assert first.objective_value == second.objective_value


def test_floored_polytope_never_beats_full_polytope():
    m = random_mdp(10, num_states=4, num_actions=2)
    objective = np.random.default_rng(11).normal(size=8)
    full = solve_lp(build_polytope(m), objective)
    floored_spec = build_polytope(m, floor=0.01)
    floored = solve_lp(floored_spec, objective)
    assert floored.objective_value <= full.objective_value + 1e-12
    assert floored.point.min() >= 0.01 - 1e-9


def test_warm_start_reaches_same_optimum():
    m = random_mdp(12, num_states=5, num_actions=3)
    spec = build_polytope(m)
    rng = np.random.default_rng(13)
    previous = solve_lp(spec, rng.normal(size=15))
    objective = rng.normal(size=15)
    cold = solve_lp(spec, objective)
    warm = solve_lp(spec, objective, basis=previous.basis)
    assert warm.objective_value == pytest.approx(cold.objective_value, abs=1e-9)


def test_alternative_oracles_agree():
    m = random_mdp(14, num_states=5, num_actions=3)
    spec = build_polytope(m)
    objective = np.random.default_rng(15).normal(size=15)
    bland = solve_lp(spec, objective)
    dantzig = solve_lp(spec, objective, pivot_rule="dantzig")
    highs = solve_lp(spec, objective, method="highs")
    assert dantzig.objective_value == pytest.approx(bland.objective_value, abs=1e-9)
    assert highs.objective_value == pytest.approx(bland.objective_value, abs=1e-8)


def test_redundant_rows_are_removed():
    spec = PolytopeSpec(
        equality_matrix=np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]),
        equality_rhs=np.array([1.0, 2.0]),
        lower_bounds=np.zeros(3),
        num_states=1,
        num_actions=3,
        floor=0.0,
        dropped_row=0,
    )
    assert len(spec.feasible_basis.rows) == 1
    solution = solve_lp(spec, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(solution.point, [0.0, 0.0, 1.0])


def test_empty_polytope_is_infeasible():
    spec = PolytopeSpec(
        equality_matrix=np.array([[1.0, 1.0], [1.0, 1.0]]),
        equality_rhs=np.array([1.0, 2.0]),
        lower_bounds=np.zeros(2),
        num_states=1,
        num_actions=2,
        floor=0.0,
        dropped_row=0,
    )
    with pytest.raises(LpInfeasible):
        solve_lp(spec, np.ones(2))


def test_sample_feasible_is_reproducible_and_feasible():
    m = random_mdp(16, num_states=5, num_actions=3)
    first = sample_feasible(m, 21)
    again = sample_feasible(m, 21)
    other = sample_feasible(m, 22)
    assert np.array_equal(first.values, again.values)
    assert jsd(first.values, other.values) > 0.0
    assert occupancy_violations(first, m) == []


def test_dump_polytope(tmp_path):
    spec = build_polytope(random_mdp(17))
    path = dump_polytope(spec, tmp_path / "polytope.txt")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("ROWS 3 COLUMNS 6")
    assert lines[1] == "EQUALITY"
    assert "RHS" in lines and "LOWER" in lines
    assert len(lines) == 1 + 1 + 3 + 1 + 1 + 1 + 1


def test_ratio_test_prefers_largest_pivot_among_ties():
    columns = [0, 1, 2]
    assert _leaving_row(np.array([1e-8, 0.5, 1.0]), np.zeros(3), columns) == 2
    # the third row blocks only after a unit step, so the degenerate rows compete
    assert _leaving_row(np.array([1e-8, 0.5, 1.0]), np.array([0.0, 0.0, 1.0]), columns) == 1
    assert _leaving_row(np.array([-1.0, 0.0, 1e-15]), np.ones(3), columns) is None


def test_reaching_policy_gives_unichain_crash_basis():
    _, m = generate("four_room", seed=0, alpha=0.95)
    actions = reaching_policy(m)
    rho = policy_to_occupancy(m, deterministic_policy(m, actions))
    assert occupancy_violations(rho, m) == []

    spec = build_polytope(m)
    basis = spec.feasible_basis
    assert basis.columns == spec.crash_columns
    assert len(basis.rows) == m.num_states


def test_simplex_matches_highs_on_grid_worlds():
    worlds = [(layout, seed, wall_model) for layout in ("four_room", "nine_room") for seed in range(3)
              for wall_model in ("barrier", "enterable")]
    for layout, seed, wall_model in worlds:
        _, m = generate(layout, seed=seed, alpha=0.95, wall_model=wall_model)
        rho, value = optimal_policy_lp(m)
        _, reference = optimal_policy_lp(m, method="highs")
        assert value == pytest.approx(reference, abs=1e-6)
        equality, bound = build_polytope(m).residuals(rho.values)
        assert equality <= 1e-8
        assert bound == 0.0


def test_singular_warm_start_basis_is_replaced():
    m = random_mdp(18, num_states=3, num_actions=2)
    spec = build_polytope(m)
    objective = np.random.default_rng(19).normal(size=6)
    cold = solve_lp(spec, objective)
    singular = LpBasis(rows=(0, 1, 2), columns=(0, 0, 1))
    warm = solve_lp(spec, objective, basis=singular)
    assert warm.objective_value == pytest.approx(cold.objective_value, abs=1e-9)
