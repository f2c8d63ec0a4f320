"""
MDP data model, occupancy measures and the conversions between policies and
occupancy measures for the long-run average-reward criterion.

State-action pairs are flattened row-major: pair (s, a) lives at index
s * num_actions + a in every occupancy vector.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .errors import DimensionMismatch, MdpValidationError, MultichainError

logger = logging.getLogger('MdpCore')

PROBABILITY_TOLERANCE = 1e-9
MASS_TOLERANCE = 1e-8
FLOW_TOLERANCE = 1e-7
NEGATIVITY_TOLERANCE = 1e-9
TRANSIENT_THRESHOLD = 1e-12
DIRECT_SOLVE_LIMIT = 2000
POWER_ITERATION_TOLERANCE = 1e-12
POWER_ITERATION_MAX_STEPS = 200_000


def _frozen_array(values: Any) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class MdpModel:
    """A finite MDP M = (S, A, P, R) with expected one-step rewards r(s, a)"""
    transition: np.ndarray  # P(s'|s,a), shape (S, A, S)
    reward: np.ndarray  # r(s,a), shape (S, A)
    raw_reward: Optional[np.ndarray] = None  # R(s,a,s'), shape (S, A, S)
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'transition', _frozen_array(self.transition))
        object.__setattr__(self, 'reward', _frozen_array(self.reward))
        if self.raw_reward is not None:
            object.__setattr__(self, 'raw_reward', _frozen_array(self.raw_reward))
        if self.labels is not None:
            object.__setattr__(self, 'labels', tuple(str(label) for label in self.labels))

        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise DimensionMismatch(f"transition must have shape (S, A, S), got {self.transition.shape}")
        if self.transition.shape[0] < 1 or self.transition.shape[1] < 1:
            raise DimensionMismatch("an MDP needs at least one state and one action")
        if self.reward.shape != self.transition.shape[:2]:
            raise DimensionMismatch(
                f"reward must have shape {self.transition.shape[:2]}, got {self.reward.shape}"
            )
        if self.raw_reward is not None and self.raw_reward.shape != self.transition.shape:
            raise DimensionMismatch(
                f"raw_reward must have shape {self.transition.shape}, got {self.raw_reward.shape}"
            )

    @classmethod
    def from_arrays(cls, transition: Any, reward: Any, labels: Optional[Sequence[str]] = None) -> "MdpModel":
        """Build an MDP from r(s,a) or from per-transition rewards R(s,a,s')"""
        transition = np.asarray(transition, dtype=float)
        reward = np.asarray(reward, dtype=float)
        if reward.ndim == 3:
            if reward.shape != transition.shape:
                raise DimensionMismatch(
                    f"per-transition reward must have shape {transition.shape}, got {reward.shape}"
                )
            expected = np.einsum('sat,sat->sa', transition, reward)
            return cls(transition=transition, reward=expected, raw_reward=reward, labels=labels)
        return cls(transition=transition, reward=reward, labels=labels)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    @property
    def pair_transition(self) -> np.ndarray:
        """P as a (S*A, S) matrix, rows indexed by flattened pairs"""
        return self.transition.reshape(self.num_pairs, self.num_states)

    @property
    def reward_vector(self) -> np.ndarray:
        return self.reward.reshape(-1)


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    values: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen_array(self.values).reshape(-1))
        if self.values.size != self.num_states * self.num_actions:
            raise DimensionMismatch(
                f"occupancy vector has {self.values.size} entries, "
                f"expected {self.num_states} x {self.num_actions}"
            )

    @classmethod
    def for_model(cls, values: Any, m: MdpModel) -> "OccupancyMeasure":
        return cls(values=values, num_states=m.num_states, num_actions=m.num_actions)

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(self.num_states, self.num_actions)

    def clamped(self) -> "OccupancyMeasure":
        """Copy with numerical negatives clipped to zero"""
        return OccupancyMeasure(np.clip(self.values, 0.0, None), self.num_states, self.num_actions)


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    probs: np.ndarray  # pi(s,a), shape (S, A)

    def __post_init__(self):
        object.__setattr__(self, 'probs', _frozen_array(self.probs))
        if self.probs.ndim != 2:
            raise DimensionMismatch(f"policy must be a (S, A) matrix, got shape {self.probs.shape}")

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def row_sum_errors(self) -> np.ndarray:
        return np.abs(self.probs.sum(axis=1) - 1.0)


@dataclass(frozen=True, eq=False)
class OccupancySet:
    """Ordered collection of k occupancy measures over the same MDP, stored as a (k, S*A) array"""
    members: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        object.__setattr__(self, 'members', _frozen_array(self.members))
        if self.members.ndim != 2 or self.members.shape[1] != self.num_states * self.num_actions:
            raise DimensionMismatch(
                f"occupancy set must have shape (k, {self.num_states * self.num_actions}), "
                f"got {self.members.shape}"
            )
        if self.members.shape[0] < 1:
            raise DimensionMismatch("an occupancy set needs at least one member")

    @classmethod
    def from_measures(cls, measures: Sequence[OccupancyMeasure]) -> "OccupancySet":
        if not measures:
            raise DimensionMismatch("an occupancy set needs at least one member")
        shapes = {(rho.num_states, rho.num_actions) for rho in measures}
        if len(shapes) != 1:
            raise DimensionMismatch(f"members disagree on (num_states, num_actions): {sorted(shapes)}")
        num_states, num_actions = shapes.pop()
        return cls(np.stack([rho.values for rho in measures]), num_states, num_actions)

    @property
    def k(self) -> int:
        return self.members.shape[0]

    def __len__(self) -> int:
        return self.k

    def member(self, index: int) -> OccupancyMeasure:
        return OccupancyMeasure(self.members[index], self.num_states, self.num_actions)

    def __iter__(self) -> Iterator[OccupancyMeasure]:
        for index in range(self.k):
            yield self.member(index)


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class AccessibilityReport:
    weakly_accessible: bool
    recurrent_states: FrozenSet[int]
    transient_states: FrozenSet[int]


def validate_mdp(m: MdpModel) -> ValidationReport:
    """List every violated MdpModel invariant with its indices; empty iff valid"""
    violations: List[str] = []
    transition = m.transition

    if not np.all(np.isfinite(transition)):
        for s, a, t in np.argwhere(~np.isfinite(transition)):
            violations.append(f"transition[{s},{a},{t}] is not finite")
    for s, a, t in np.argwhere((transition < 0.0) | (transition > 1.0)):
        violations.append(f"transition[{s},{a},{t}] = {transition[s, a, t]:.12g} outside [0, 1]")

    row_sums = transition.sum(axis=2)
    for s, a in np.argwhere(np.abs(row_sums - 1.0) > PROBABILITY_TOLERANCE):
        violations.append(f"P(.|{s},{a}) sums to {row_sums[s, a]:.12g}, expected 1")

    for s, a in np.argwhere(~np.isfinite(m.reward)):
        violations.append(f"reward[{s},{a}] is not finite")

    if m.raw_reward is not None:
        expected = np.einsum('sat,sat->sa', transition, m.raw_reward)
        for s, a in np.argwhere(np.abs(expected - m.reward) > PROBABILITY_TOLERANCE):
            violations.append(
                f"reward[{s},{a}] = {m.reward[s, a]:.12g} differs from the expected "
                f"per-transition reward {expected[s, a]:.12g}"
            )

    if m.labels is not None and len(m.labels) != m.num_states:
        violations.append(f"{len(m.labels)} labels for {m.num_states} states")

    if violations:
        logger.debug(f"MDP validation found {len(violations)} violations")
    return ValidationReport(tuple(violations))


def flow_residual(values: np.ndarray, m: MdpModel) -> float:
    """Largest violation of sum_a rho(s,a) = sum_{s',a'} P(s|s',a') rho(s',a')"""
    outflow = values.reshape(m.num_states, m.num_actions).sum(axis=1)
    inflow = m.pair_transition.T @ values
    return float(np.max(np.abs(outflow - inflow)))


def occupancy_violations(rho: OccupancyMeasure, m: MdpModel,
                         flow_tolerance: float = FLOW_TOLERANCE) -> List[str]:
    """Check the three OccupancyMeasure invariants against an MDP"""
    _check_dimensions(rho, m)
    violations = []
    smallest = float(rho.values.min())
    if smallest < -NEGATIVITY_TOLERANCE:
        violations.append(f"negative mass {smallest:.3e}")
    total = float(rho.values.sum())
    if abs(total - 1.0) > MASS_TOLERANCE:
        violations.append(f"total mass {total:.12g}, expected 1")
    residual = flow_residual(rho.values, m)
    if residual > flow_tolerance:
        violations.append(f"flow balance residual {residual:.3e}")
    return violations


def support_graph(m: MdpModel) -> nx.DiGraph:
    """Digraph with edge s -> s' iff some action moves s to s' with positive probability"""
    adjacency = (m.transition.max(axis=1) > 0.0).astype(np.int8)
    return nx.from_numpy_array(adjacency, create_using=nx.DiGraph)


def _cyclic_components(graph: nx.DiGraph) -> List[FrozenSet[int]]:
    components = []
    for component in nx.strongly_connected_components(graph):
        node = next(iter(component))
        if len(component) > 1 or graph.has_edge(node, node):
            components.append(frozenset(component))
    return sorted(components, key=min)


def check_weak_accessibility(m: MdpModel) -> AccessibilityReport:
    """
    Sufficient check for weak accessibility: the states lying on some cycle of the
    support graph must form one strongly connected component reachable from
    every state. The states outside that component are the transient candidates.
    """
    graph = support_graph(m)
    all_states = frozenset(range(m.num_states))
    cyclic = _cyclic_components(graph)

    if len(cyclic) == 1:
        core = cyclic[0]
        representative = next(iter(core))
        reaching = nx.ancestors(graph, representative) | core
        if reaching == all_states:
            logger.debug(f"WA check passed: {len(core)} recurrent states, {m.num_states - len(core)} transient")
            return AccessibilityReport(True, core, all_states - core)

    # Report the closed cyclic components as recurrent candidates
    closed = frozenset().union(*[
        component for component in cyclic
        if all(successor in component for node in component for successor in graph.successors(node))
    ]) if cyclic else frozenset()
    logger.info(f"WA check failed: {len(cyclic)} cyclic components in the support graph")
    return AccessibilityReport(False, closed, all_states - closed)


def induced_chain(m: MdpModel, pi: StationaryPolicy) -> np.ndarray:
    """State transition matrix P_pi(s, s') = sum_a pi(s,a) P(s'|s,a)"""
    if pi.probs.shape != (m.num_states, m.num_actions):
        raise DimensionMismatch(
            f"policy shape {pi.probs.shape} does not match MDP ({m.num_states}, {m.num_actions})"
        )
    return np.einsum('sa,sat->st', pi.probs, m.transition)


def recurrent_classes(chain: np.ndarray) -> List[FrozenSet[int]]:
    """Closed communicating classes of a Markov chain, found from its support graph"""
    graph = nx.from_numpy_array((chain > 0.0).astype(np.int8), create_using=nx.DiGraph)
    condensed = nx.condensation(graph)
    classes = [
        frozenset(condensed.nodes[node]['members'])
        for node in condensed.nodes
        if condensed.out_degree(node) == 0
    ]
    return sorted(classes, key=min)


def stationary_distribution(chain: np.ndarray) -> np.ndarray:
    """Solve d = d P, sum(d) = 1 for a unichain transition matrix"""
    num_states = chain.shape[0]
    if num_states <= DIRECT_SOLVE_LIMIT:
        system = chain.T - np.eye(num_states)
        system[-1, :] = 1.0
        rhs = np.zeros(num_states)
        rhs[-1] = 1.0
        distribution = np.linalg.solve(system, rhs)
    else:
        # Lazy chain: same stationary distribution, aperiodic
        lazy = 0.5 * (chain + np.eye(num_states))
        distribution = np.full(num_states, 1.0 / num_states)
        for step in range(POWER_ITERATION_MAX_STEPS):
            updated = distribution @ lazy
            if np.max(np.abs(updated - distribution)) < POWER_ITERATION_TOLERANCE:
                distribution = updated
                break
            distribution = updated
        else:
            logger.warning(f"power iteration hit {POWER_ITERATION_MAX_STEPS} steps without converging")

    distribution = np.clip(distribution, 0.0, None)
    return distribution / distribution.sum()


def policy_to_occupancy(m: MdpModel, pi: StationaryPolicy) -> OccupancyMeasure:
    """rho(s,a) = d(s) pi(s,a) with d the stationary distribution of the induced chain"""
    chain = induced_chain(m, pi)
    classes = recurrent_classes(chain)
    if len(classes) > 1:
        raise MultichainError(
            f"policy induces {len(classes)} recurrent classes; the occupancy measure is not unique",
            recurrent_classes=classes,
        )
    distribution = stationary_distribution(chain)
    values = (distribution[:, None] * pi.probs).reshape(-1)
    return OccupancyMeasure.for_model(values, m)


def occupancy_to_policy(rho: OccupancyMeasure) -> StationaryPolicy:
    """
    pi(s,a) = rho(s,a) / sum_a' rho(s,a') on states with mass above the transient
    threshold; uniform over actions elsewhere.
    """
    matrix = np.clip(rho.as_matrix(), 0.0, None)
    marginal = matrix.sum(axis=1)
    probs = np.full(matrix.shape, 1.0 / rho.num_actions)
    recurrent = marginal > TRANSIENT_THRESHOLD
    probs[recurrent] = matrix[recurrent] / marginal[recurrent, None]
    return StationaryPolicy(probs)


def _check_dimensions(rho: OccupancyMeasure, m: MdpModel) -> None:
    if (rho.num_states, rho.num_actions) != (m.num_states, m.num_actions):
        raise DimensionMismatch(
            f"occupancy measure is ({rho.num_states}, {rho.num_actions}), "
            f"MDP is ({m.num_states}, {m.num_actions})"
        )


def average_reward(rho: OccupancyMeasure, m: MdpModel) -> float:
    """Long-run average reward <rho, r>"""
    _check_dimensions(rho, m)
    return float(rho.values @ m.reward_vector)


def state_occupancy(rho: OccupancyMeasure) -> np.ndarray:
    """State marginal rho(s) = sum_a rho(s,a)"""
    return rho.as_matrix().sum(axis=1)


def uniform_policy(m: MdpModel) -> StationaryPolicy:
    return StationaryPolicy(np.full((m.num_states, m.num_actions), 1.0 / m.num_actions))


def deterministic_policy(m: MdpModel, actions: Sequence[int]) -> StationaryPolicy:
    if len(actions) != m.num_states:
        raise DimensionMismatch(f"{len(actions)} actions given for {m.num_states} states")
    probs = np.zeros((m.num_states, m.num_actions))
    probs[np.arange(m.num_states), np.asarray(actions, dtype=int)] = 1.0
    return StationaryPolicy(probs)


def simulate_occupancy(m: MdpModel, pi: StationaryPolicy, steps: int, seed: int,
                       start_state: int = 0) -> np.ndarray:
    """Empirical state-action visit frequencies of one simulated trajectory"""
    rng = np.random.default_rng(seed)
    policy_cdf = np.cumsum(pi.probs, axis=1)
    transition_cdf = np.cumsum(m.pair_transition, axis=1)
    action_draws = rng.random(steps)
    state_draws = rng.random(steps)
    last_action = m.num_actions - 1
    last_state = m.num_states - 1

    counts = np.zeros(m.num_pairs)
    state = start_state
    for step in range(steps):
        action = min(int(np.searchsorted(policy_cdf[state], action_draws[step], side='right')), last_action)
        pair = state * m.num_actions + action
        counts[pair] += 1.0
        state = min(int(np.searchsorted(transition_cdf[pair], state_draws[step], side='right')), last_state)
    return counts / steps


def mdp_to_dict(m: MdpModel) -> Dict[str, Any]:
    """Interchange form: dense [s][a][s'] transition, reward as [s][a][s'] when known"""
    data: Dict[str, Any] = {
        "num_states": m.num_states,
        "num_actions": m.num_actions,
        "transition": m.transition.tolist(),
        "reward": (m.raw_reward if m.raw_reward is not None else m.reward).tolist(),
    }
    if m.labels is not None:
        data["labels"] = list(m.labels)
    return data


def mdp_from_dict(data: Dict[str, Any]) -> MdpModel:
    missing = [key for key in ("num_states", "num_actions", "transition", "reward") if key not in data]
    if missing:
        raise MdpValidationError(f"MDP file is missing fields: {missing}")

    m = MdpModel.from_arrays(data["transition"], data["reward"], labels=data.get("labels"))
    if (m.num_states, m.num_actions) != (int(data["num_states"]), int(data["num_actions"])):
        raise MdpValidationError(
            f"declared size ({data['num_states']}, {data['num_actions']}) does not match "
            f"arrays ({m.num_states}, {m.num_actions})"
        )
    report = validate_mdp(m)
    if not report.ok:
        raise MdpValidationError(f"MDP violates {len(report.violations)} invariants", list(report.violations))
    return m


def load_mdp(path: Union[str, Path]) -> MdpModel:
    logger.info(f"Loading MDP from {path}")
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise MdpValidationError(f"MDP file {path} is not valid JSON: {e}")
    return mdp_from_dict(data)


def save_mdp(m: MdpModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(mdp_to_dict(m)))
    logger.info(f"Wrote MDP with {m.num_states} states and {m.num_actions} actions to {path}")
    return path
