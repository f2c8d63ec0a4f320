import numpy as np
import pytest

from src.errors import DimensionMismatch, DomainError, GenerationFailure
from src.gridworld import (ACTIONS, MOVES, GridWorldSpec, build_mdp, generate, is_goal_reachable, render_occupancy,
                           render_spec, wall_segments)
from src.mdp_core import OccupancyMeasure, check_weak_accessibility, validate_mdp

UP, STOP = ACTIONS.index("up"), ACTIONS.index("stop")


def test_four_room_world_structure():
    spec, m = generate("four_room", seed=0, alpha=0.95)
    assert m.num_states == 361
    assert m.num_actions == 5
    assert len(wall_segments("four_room")) == 4
    assert len(spec.door_cells) == 4
    assert len(spec.obstacle_cells) == 4
    assert spec.rewards == (-200.0, 400.0, -4.0)


def test_nine_room_world_structure():
    spec, m = generate("nine", seed=3, alpha=0.95)
    assert spec.layout == "nine_room"
    assert len(wall_segments("nine_room")) == 12
    assert len(spec.door_cells) == 12
    assert len(spec.obstacle_cells) == 9
    assert spec.rewards == (-40.0, 200.0, -1.2)


def test_doors_obstacles_start_and_goal_placement():
    for seed in range(10):
        spec, _ = generate("nine_room", seed=seed, alpha=0.9)
        for door in spec.door_cells:
            assert door in spec.wall_cells
            assert 0 < door[0] < 18 and 0 < door[1] < 18
            assert door[0] % 6 == 0 or door[1] % 6 == 0
            assert (door[0] % 6, door[1] % 6) != (0, 0)
        for obstacle in spec.obstacle_cells:
            assert obstacle not in spec.wall_cells
            assert obstacle not in (spec.start_cell, spec.goal_cell)
            for door in spec.door_cells:
                assert abs(obstacle[0] - door[0]) + abs(obstacle[1] - door[1]) > 1
        assert spec.start_cell[0] < 6 and spec.start_cell[1] < 6
        assert spec.goal_cell[0] > 12 and spec.goal_cell[1] > 12
        assert is_goal_reachable(spec)


def is_open(spec: GridWorldSpec, cell) -> bool:
    row, column = cell
    inside = 0 <= row < spec.height and 0 <= column < spec.width
    return inside and cell not in spec.blocked_cells() and cell != spec.goal_cell


def open_cell(spec: GridWorldSpec):
    """First open cell whose four neighbours are open as well"""
    for row in range(spec.height):
        for column in range(spec.width):
            cell = (row, column)
            if is_open(spec, cell) and all(is_open(spec, (row + d_row, column + d_column))
                                           for d_row, d_column in MOVES[:4]):
                return cell
    raise AssertionError("no open cell")


def approach(spec: GridWorldSpec, target):
    """An open neighbour of target and the action that moves from it onto target"""
    for action in range(4):
        d_row, d_column = MOVES[action]
        cell = (target[0] - d_row, target[1] - d_column)
        if is_open(spec, cell):
            return cell, action
    raise AssertionError(f"no open neighbour of {target}")


def test_generated_worlds_are_valid_and_weakly_accessible():
    for layout in ("four_room", "nine_room"):
        for slip_model in ("others", "lateral", "others_and_stay"):
            for wall_model in ("barrier", "enterable"):
                _, m = generate(layout, seed=1, alpha=0.8, slip_model=slip_model, wall_model=wall_model)
                assert validate_mdp(m).ok
                assert check_weak_accessibility(m).weakly_accessible


def test_deterministic_world_has_one_hot_rows():
    spec, m = generate("four_room", seed=2, alpha=1.0)
    assert np.all(np.isclose(m.transition, 0.0) | np.isclose(m.transition, 1.0))
    assert np.allclose(m.transition.sum(axis=2), 1.0)

    middle = open_cell(spec)
    here = spec.state_index(middle)
    assert m.transition[here, STOP, here] == 1.0
    assert m.transition[here, UP, spec.state_index((middle[0] - 1, middle[1]))] == 1.0


def test_slip_models_spread_the_remaining_mass():
    spec, m = generate("four_room", seed=4, alpha=0.8, slip_model="lateral")
    row, column = open_cell(spec)
    middle = spec.state_index((row, column))
    transition = m.transition[middle, UP]
    assert transition[spec.state_index((row - 1, column))] == pytest.approx(0.8)
    assert transition[spec.state_index((row, column - 1))] == pytest.approx(0.1)
    assert transition[spec.state_index((row, column + 1))] == pytest.approx(0.1)
    assert transition[spec.state_index((row + 1, column))] == 0.0

    _, spread = generate("four_room", seed=4, alpha=0.8, slip_model="others_and_stay")
    assert spread.transition[middle, UP, middle] == pytest.approx(0.05)
    assert np.allclose(spread.transition.sum(axis=2), 1.0)


def test_barrier_walls_bounce_with_penalty():
    spec, m = generate("four_room", seed=5, alpha=1.0)
    penalty, _, _ = spec.rewards
    start = spec.state_index(spec.start_cell)

    obstacle = sorted(spec.obstacle_cells)[0]
    cell, action = approach(spec, obstacle)
    here = spec.state_index(cell)
    assert m.transition[here, action, here] == 1.0
    assert m.reward[here, action] == pytest.approx(penalty)

    # blocked cells are never entered; every action taken there restarts the episode
    wall = sorted(spec.wall_cells - spec.door_cells)[0]
    for blocked in (spec.state_index(obstacle), spec.state_index(wall)):
        assert np.all(m.transition[blocked, :, start] == 1.0)

    drift_spec, drifting = generate("four_room", seed=5, alpha=0.9)
    cell, action = approach(drift_spec, sorted(drift_spec.obstacle_cells)[0])
    here = drift_spec.state_index(cell)
    assert drifting.transition[here, action, here] >= 0.9 - 1e-12
    assert np.allclose(drifting.transition.sum(axis=2), 1.0)


def test_enterable_walls_keep_the_usual_dynamics():
    spec, m = generate("four_room", seed=5, alpha=1.0, wall_model="enterable")
    penalty, _, _ = spec.rewards
    obstacle = sorted(spec.obstacle_cells)[0]
    cell, action = approach(spec, obstacle)
    assert m.transition[spec.state_index(cell), action, spec.state_index(obstacle)] == 1.0
    assert m.reward[spec.state_index(obstacle), STOP] == pytest.approx(penalty)
    corner = spec.state_index((0, 0))
    assert m.transition[corner, UP, corner] == 1.0


def test_goal_returns_to_start_and_rewards_follow_landing_cell():
    spec, m = generate("four_room", seed=5, alpha=1.0)
    goal = spec.state_index(spec.goal_cell)
    start = spec.state_index(spec.start_cell)
    assert np.all(m.transition[goal, :, start] == 1.0)

    _, goal_reward, step_reward = spec.rewards
    assert np.all(m.reward[goal] == pytest.approx(step_reward))
    cell, action = approach(spec, spec.goal_cell)
    assert m.reward[spec.state_index(cell), action] == pytest.approx(goal_reward)


def test_generation_is_seed_deterministic():
    first, first_mdp = generate("nine_room", seed=11, alpha=0.95)
    second, second_mdp = generate("nine_room", seed=11, alpha=0.95)
    assert first == second
    assert np.array_equal(first_mdp.transition, second_mdp.transition)
    others = [generate("nine_room", seed=seed, alpha=0.95)[0] for seed in range(12, 16)]
    assert any(other.door_cells != first.door_cells for other in others)


def test_spec_json_round_trip():
    spec, m = generate("four_room", seed=6, alpha=0.9, slip_model="lateral")
    restored = GridWorldSpec.from_json(spec.to_json())
    assert restored == spec
    assert np.array_equal(build_mdp(restored).transition, m.transition)


def test_invalid_parameters():
    with pytest.raises(DomainError):
        generate("four_room", seed=0, alpha=0.0)
    with pytest.raises(DomainError):
        generate("four_room", seed=0, alpha=1.2)
    with pytest.raises(DomainError):
        generate("sixteen_room", seed=0, alpha=0.9)
    with pytest.raises(DomainError):
        generate("four_room", seed=0, alpha=0.9, slip_model="diagonal")
    with pytest.raises(DomainError):
        generate("four_room", seed=0, alpha=0.9, wall_model="porous")


def test_generation_gives_up_on_unreachable_goal(monkeypatch):
    monkeypatch.setattr("src.gridworld.MAX_GENERATION_ATTEMPTS", 3)
    monkeypatch.setattr("src.gridworld.is_goal_reachable", lambda spec: False)
    with pytest.raises(GenerationFailure):
        generate("four_room", seed=0, alpha=0.9)


def test_render_spec(tmp_path):
    spec, _ = generate("four_room", seed=7, alpha=0.95)
    svg = render_spec(spec, tmp_path / "world.svg")
    assert svg.count('class="cell ') == 361
    assert svg.count('class="cell door"') == 4
    assert svg.count('class="cell start"') == 1
    assert svg.count('class="cell goal"') == 1
    assert (tmp_path / "world.svg").read_text() == svg


def test_render_without_obstacles():
    spec, _ = generate("four_room", seed=8, alpha=0.95)
    bare = GridWorldSpec.from_dict({**spec.to_dict(), "obstacle_cells": []})
    svg = render_spec(bare)
    assert 'class="cell obstacle"' not in svg
    assert svg.count('class="cell ') == 361


def test_render_occupancy_overlays():
    spec, _ = generate("four_room", seed=9, alpha=0.95)
    uniform = OccupancyMeasure(np.full(361 * 5, 1.0 / (361 * 5)), 361, 5)
    svg = render_occupancy(spec, uniform)
    assert svg.count('class="occupancy"') == 361
    assert svg.count('fill-opacity="1.0000"') == 361
    assert 'class="marker start"' in svg and 'class="marker goal"' in svg

    point = np.zeros(361 * 5)
    point[spec.state_index((4, 4)) * 5 + 2] = 1.0
    svg = render_occupancy(spec, OccupancyMeasure(point, 361, 5))
    assert svg.count('class="occupancy"') == 1


def test_render_occupancy_rejects_wrong_shape():
    spec, _ = generate("four_room", seed=10, alpha=0.95)
    with pytest.raises(DimensionMismatch):
        render_occupancy(spec, OccupancyMeasure(np.full(361 * 4, 1.0 / (361 * 4)), 361, 4))
