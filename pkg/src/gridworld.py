"""
Procedural four-room and nine-room 19x19 grid worlds.

Every cell is a state, including walls and obstacles. Under the default
barrier model a move into a wall or obstacle pays the penalty and leaves the
agent where it was, so those cells are never occupied; any action taken from one
returns to the start. The enterable model instead treats them as penalty states
with the usual dynamics inside. Rewards follow the cell a transition lands in
(or the blocked cell it bounced off), and from the goal every action returns to
the start.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .errors import DimensionMismatch, DomainError, GenerationFailure
from .mdp_core import MdpModel, OccupancyMeasure, state_occupancy

logger = logging.getLogger('GridWorld')

Cell = Tuple[int, int]  # (row, column), row 0 at the top

GRID_SIZE = 19
MAX_GENERATION_ATTEMPTS = 1000

# down, left, up, right, stop
ACTIONS = ("down", "left", "up", "right", "stop")
MOVES = ((1, 0), (0, -1), (-1, 0), (0, 1), (0, 0))
DIRECTIONAL = (0, 1, 2, 3)
LATERAL = {0: (1, 3), 1: (0, 2), 2: (1, 3), 3: (0, 2)}
SLIP_MODELS = ("others", "lateral", "others_and_stay")
WALL_MODELS = ("barrier", "enterable")

LAYOUT_ALIASES = {"four": "four_room", "nine": "nine_room", "four_room": "four_room", "nine_room": "nine_room"}


@dataclass(frozen=True)
class LayoutGeometry:
    wall_lines: Tuple[int, ...]  # rows (and columns) that are entirely wall
    rewards: Tuple[float, float, float]  # (wall/obstacle penalty, goal reward, step reward)

    @property
    def room_spans(self) -> List[Tuple[int, int]]:
        return [(low + 1, high - 1) for low, high in zip(self.wall_lines, self.wall_lines[1:])]


LAYOUTS = {
    "four_room": LayoutGeometry(wall_lines=(0, 9, 18), rewards=(-200.0, 400.0, -4.0)),
    "nine_room": LayoutGeometry(wall_lines=(0, 6, 12, 18), rewards=(-40.0, 200.0, -1.2)),
}

COLORS = {
    "wall": "black",
    "obstacle": "black",
    "start": "red",
    "goal": "purple",
    "door": "white",
    "free": "white",
}
CELL_PIXELS = 20
OCCUPANCY_COLOR = "blue"


@dataclass(frozen=True)
class WallSegment:
    orientation: str  # "horizontal": a wall row between vertically stacked rooms
    line: int
    span: Tuple[int, int]

    def cells(self) -> List[Cell]:
        low, high = self.span
        if self.orientation == "horizontal":
            return [(self.line, column) for column in range(low, high + 1)]
        return [(row, self.line) for row in range(low, high + 1)]


@dataclass(frozen=True)
class GridWorldSpec:
    layout: str
    wall_cells: FrozenSet[Cell]
    obstacle_cells: FrozenSet[Cell]
    door_cells: FrozenSet[Cell]
    start_cell: Cell
    goal_cell: Cell
    alpha: float
    rewards: Tuple[float, float, float]
    seed: int
    slip_model: str = "others"
    wall_model: str = "barrier"
    width: int = GRID_SIZE
    height: int = GRID_SIZE

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def state_index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell_of(self, state: int) -> Cell:
        return divmod(state, self.width)

    def cell_kind(self, cell: Cell) -> str:
        if cell == self.start_cell:
            return "start"
        if cell == self.goal_cell:
            return "goal"
        if cell in self.door_cells:
            return "door"
        if cell in self.wall_cells:
            return "wall"
        if cell in self.obstacle_cells:
            return "obstacle"
        return "free"

    def blocked_cells(self) -> FrozenSet[Cell]:
        return (self.wall_cells - self.door_cells) | self.obstacle_cells

    def cell_rewards(self) -> np.ndarray:
        """Reward for landing in each cell, as a (height, width) grid"""
        penalty, goal_reward, step_reward = self.rewards
        grid = np.full((self.height, self.width), step_reward)
        for row, column in self.blocked_cells():
            grid[row, column] = penalty
        grid[self.goal_cell] = goal_reward
        return grid

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layout": self.layout,
            "width": self.width,
            "height": self.height,
            "wall_cells": sorted(list(cell) for cell in self.wall_cells),
            "obstacle_cells": sorted(list(cell) for cell in self.obstacle_cells),
            "door_cells": sorted(list(cell) for cell in self.door_cells),
            "start_cell": list(self.start_cell),
            "goal_cell": list(self.goal_cell),
            "alpha": self.alpha,
            "rewards": list(self.rewards),
            "seed": self.seed,
            "slip_model": self.slip_model,
            "wall_model": self.wall_model,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridWorldSpec":
        def cells(key):
            return frozenset(tuple(cell) for cell in data[key])

        return cls(
            layout=data["layout"],
            wall_cells=cells("wall_cells"),
            obstacle_cells=cells("obstacle_cells"),
            door_cells=cells("door_cells"),
            start_cell=tuple(data["start_cell"]),
            goal_cell=tuple(data["goal_cell"]),
            alpha=float(data["alpha"]),
            rewards=tuple(float(value) for value in data["rewards"]),
            seed=int(data["seed"]),
            slip_model=data.get("slip_model", "others"),
            wall_model=data.get("wall_model", "barrier"),
            width=int(data.get("width", GRID_SIZE)),
            height=int(data.get("height", GRID_SIZE)),
        )

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "GridWorldSpec":
        return cls.from_dict(json.loads(text))


def resolve_layout(layout: str) -> str:
    try:
        return LAYOUT_ALIASES[layout]
    except KeyError:
        raise DomainError(f"unknown layout {layout!r}; expected one of {sorted(LAYOUT_ALIASES)}")


def room_spans(layout: str) -> List[Tuple[int, int]]:
    return LAYOUTS[resolve_layout(layout)].room_spans


def wall_cells(layout: str) -> FrozenSet[Cell]:
    lines = set(LAYOUTS[resolve_layout(layout)].wall_lines)
    return frozenset(
        (row, column)
        for row in range(GRID_SIZE)
        for column in range(GRID_SIZE)
        if row in lines or column in lines
    )


def wall_segments(layout: str) -> List[WallSegment]:
    """Interior wall pieces shared by exactly two adjacent rooms"""
    geometry = LAYOUTS[resolve_layout(layout)]
    interior = geometry.wall_lines[1:-1]
    segments = []
    for line in interior:
        for span in geometry.room_spans:
            segments.append(WallSegment("horizontal", line, span))
    for line in interior:
        for span in geometry.room_spans:
            segments.append(WallSegment("vertical", line, span))
    return segments


def room_cells(layout: str) -> Dict[Tuple[int, int], List[Cell]]:
    """Cells of each room keyed by (room row, room column)"""
    spans = room_spans(layout)
    rooms = {}
    for room_row, (row_low, row_high) in enumerate(spans):
        for room_column, (column_low, column_high) in enumerate(spans):
            rooms[(room_row, room_column)] = [
                (row, column)
                for row in range(row_low, row_high + 1)
                for column in range(column_low, column_high + 1)
            ]
    return rooms


def is_goal_reachable(spec: GridWorldSpec) -> bool:
    """Breadth-first reachability from start to goal through unblocked cells"""
    graph = nx.grid_2d_graph(spec.height, spec.width)
    graph.remove_nodes_from(spec.blocked_cells())
    if spec.start_cell not in graph or spec.goal_cell not in graph:
        return False
    return spec.goal_cell in nx.node_connected_component(graph, spec.start_cell)


def _neighbors(cell: Cell) -> List[Cell]:
    return [(cell[0] + d_row, cell[1] + d_column) for d_row, d_column in MOVES]


def _sample_candidate(layout: str, rng: np.random.Generator, alpha: float, seed: int,
                      slip_model: str, wall_model: str) -> GridWorldSpec:
    geometry = LAYOUTS[layout]
    doors = []
    for segment in wall_segments(layout):
        interior = segment.cells()[1:-1]
        doors.append(interior[rng.integers(len(interior))])
    door_set = frozenset(doors)

    rooms = room_cells(layout)
    last = len(geometry.room_spans) - 1
    start_room = rooms[(0, 0)]
    start = start_room[rng.integers(len(start_room))]
    goal_room = rooms[(last, last)]
    goal = goal_room[rng.integers(len(goal_room))]

    near_doors = {neighbor for door in door_set for neighbor in _neighbors(door)}
    obstacles = []
    for key in sorted(rooms):
        allowed = [cell for cell in rooms[key] if cell not in near_doors and cell not in (start, goal)]
        obstacles.append(allowed[rng.integers(len(allowed))])

    return GridWorldSpec(
        layout=layout,
        wall_cells=wall_cells(layout),
        obstacle_cells=frozenset(obstacles),
        door_cells=door_set,
        start_cell=start,
        goal_cell=goal,
        alpha=float(alpha),
        rewards=geometry.rewards,
        seed=int(seed),
        slip_model=slip_model,
        wall_model=wall_model,
    )


def _slip_outcomes(action: int, alpha: float, slip_model: str) -> List[Tuple[int, float]]:
    """(move index, probability) pairs for a directional action"""
    if slip_model == "lateral":
        others = list(LATERAL[action])
    elif slip_model == "others_and_stay":
        others = [other for other in DIRECTIONAL if other != action] + [4]
    else:
        others = [other for other in DIRECTIONAL if other != action]
    slip = (1.0 - alpha) / len(others)
    return [(action, alpha)] + [(other, slip) for other in others]


def build_mdp(spec: GridWorldSpec) -> MdpModel:
    """Transition and per-transition reward arrays for a grid-world spec"""
    if spec.slip_model not in SLIP_MODELS:
        raise DomainError(f"slip_model must be one of {SLIP_MODELS}, got {spec.slip_model!r}")
    if spec.wall_model not in WALL_MODELS:
        raise DomainError(f"wall_model must be one of {WALL_MODELS}, got {spec.wall_model!r}")
    num_states = spec.num_states
    shape = (num_states, len(ACTIONS), num_states)
    transition = np.zeros(shape)
    reward_mass = np.zeros(shape)  # sum of probability * reward per (s, a, s')

    landing_reward = spec.cell_rewards().reshape(-1)
    penalty = spec.rewards[0]
    blocked = {spec.state_index(cell) for cell in spec.blocked_cells()}
    barrier = spec.wall_model == "barrier"

    def destination(cell: Cell, move: int) -> int:
        d_row, d_column = MOVES[move]
        row, column = cell[0] + d_row, cell[1] + d_column
        if not (0 <= row < spec.height and 0 <= column < spec.width):
            row, column = cell
        return spec.state_index((row, column))

    def add(state: int, action: int, target: int, probability: float, reward: float) -> None:
        transition[state, action, target] += probability
        reward_mass[state, action, target] += probability * reward

    outcomes = {action: _slip_outcomes(action, spec.alpha, spec.slip_model) for action in DIRECTIONAL}
    goal_state = spec.state_index(spec.goal_cell)
    start_state = spec.state_index(spec.start_cell)
    for state in range(num_states):
        if state == goal_state or (barrier and state in blocked):
            for action in range(len(ACTIONS)):
                add(state, action, start_state, 1.0, landing_reward[start_state])
            continue
        cell = spec.cell_of(state)
        for action in DIRECTIONAL:
            for move, probability in outcomes[action]:
                if probability <= 0.0:
                    continue
                target = destination(cell, move)
                if barrier and target in blocked:
                    add(state, action, state, probability, penalty)
                else:
                    add(state, action, target, probability, landing_reward[target])
        add(state, 4, state, 1.0, landing_reward[state])

    # R(s,a,s') is the mean reward of the outcomes landing in s'; landing reward where P is zero
    raw_reward = np.broadcast_to(landing_reward, shape).copy()
    reachable = transition > 0.0
    raw_reward[reachable] = reward_mass[reachable] / transition[reachable]
    labels = [f"r{row}c{column}" for row, column in map(spec.cell_of, range(num_states))]
    return MdpModel.from_arrays(transition, raw_reward, labels=labels)


def generate(layout: str, seed: int, alpha: float, slip_model: str = "others",
             wall_model: str = "barrier") -> Tuple[GridWorldSpec, MdpModel]:
    """Random doors, obstacles, start and goal; resampled until the goal is reachable"""
    layout = resolve_layout(layout)
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if slip_model not in SLIP_MODELS:
        raise DomainError(f"slip_model must be one of {SLIP_MODELS}, got {slip_model!r}")
    if wall_model not in WALL_MODELS:
        raise DomainError(f"wall_model must be one of {WALL_MODELS}, got {wall_model!r}")

    rng = np.random.default_rng(seed)
    for attempt in range(1, MAX_GENERATION_ATTEMPTS + 1):
        spec = _sample_candidate(layout, rng, alpha, seed, slip_model, wall_model)
        if is_goal_reachable(spec):
            logger.debug(f"Generated {layout} world (seed {seed}) after {attempt} attempts")
            return spec, build_mdp(spec)
    raise GenerationFailure(f"no {layout} world with a reachable goal after {MAX_GENERATION_ATTEMPTS} attempts")


def _rect(cell: Cell, fill: str, css_class: str, opacity: Optional[float] = None) -> str:
    row, column = cell
    extra = f' fill-opacity="{opacity:.4f}"' if opacity is not None else ''
    return (
        f'<rect class="{css_class}" x="{column * CELL_PIXELS}" y="{row * CELL_PIXELS}" '
        f'width="{CELL_PIXELS}" height="{CELL_PIXELS}" fill="{fill}"{extra} />'
    )


def _svg(spec: GridWorldSpec, body: List[str]) -> str:
    width, height = spec.width * CELL_PIXELS, spec.height * CELL_PIXELS
    header = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([header] + body + ["</svg>"]) + "\n"


def _cell_layer(spec: GridWorldSpec) -> List[str]:
    rects = []
    for row in range(spec.height):
        for column in range(spec.width):
            kind = spec.cell_kind((row, column))
            rects.append(_rect((row, column), COLORS[kind], f"cell {kind}"))
    return rects


def _write(svg: str, path: Optional[Union[str, Path]]) -> str:
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg)
    return svg


def render_spec(spec: GridWorldSpec, path: Optional[Union[str, Path]] = None) -> str:
    """SVG of the layout: black walls and obstacles, red start, purple goal"""
    return _write(_svg(spec, _cell_layer(spec)), path)


def render_occupancy(spec: GridWorldSpec, rho: OccupancyMeasure,
                     path: Optional[Union[str, Path]] = None) -> str:
    """State occupancy drawn as blue opacity scaled by the largest marginal"""
    if rho.num_states != spec.num_states or rho.num_actions != len(ACTIONS):
        raise DimensionMismatch(
            f"occupancy measure is ({rho.num_states}, {rho.num_actions}), "
            f"world has ({spec.num_states}, {len(ACTIONS)})"
        )
    marginal = np.clip(state_occupancy(rho), 0.0, None)
    peak = float(marginal.max())

    body = _cell_layer(spec)
    if peak > 0.0:
        for state in np.flatnonzero(marginal > 0.0):
            body.append(_rect(spec.cell_of(int(state)), OCCUPANCY_COLOR, "occupancy", marginal[state] / peak))
    body.append(_rect(spec.start_cell, COLORS["start"], "marker start"))
    body.append(_rect(spec.goal_cell, COLORS["goal"], "marker goal"))
    return _write(_svg(spec, body), path)
