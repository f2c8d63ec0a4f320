"""
Compound reward + diversity objective over a set of occupancy measures.

    f(rho_1..k) = (1/k) sum_i <rho_i, r> + (2 lambda / (k (k - 1))) sum_{i<j} JSD(rho_i || rho_j)

All logarithms are base 2, so every JSD lies in [0, 1]. Log arguments are
floored at log_epsilon, which keeps gradients finite on the polytope boundary.
"""
import logging
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
from scipy.special import xlogy

from .errors import CardinalityMismatch, DimensionMismatch, DomainError
from .mdp_core import MdpModel, OccupancySet

logger = logging.getLogger('Objective')

DEFAULT_LOG_EPSILON = 1e-12
LOG_BASE = 2.0
_LN_BASE = np.log(LOG_BASE)


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float
    k: int
    log_epsilon: float = DEFAULT_LOG_EPSILON
    log_base: float = LOG_BASE

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0.0:
            raise DomainError(f"lambda must be a nonnegative real, got {self.lam}")
        if self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        if not 0.0 < self.log_epsilon < 1e-6:
            raise DomainError(f"log_epsilon must lie in (0, 1e-6), got {self.log_epsilon}")
        if self.log_base != LOG_BASE:
            raise DomainError(f"log_base is fixed at 2, got {self.log_base}")


@dataclass(frozen=True, eq=False)
class ObjectiveEval:
    value: float
    reward_term: float
    diversity_term: float  # sum of pairwise JSDs
    diversity_weight: float  # 2 lambda / (k (k - 1)), 0 when k < 2
    gradient: np.ndarray  # (k, S*A), one row per member
    average_diversity: float

    def reconstruct(self) -> float:
        return self.reward_term + self.diversity_weight * self.diversity_term


def _check_pair(p: np.ndarray, q: np.ndarray) -> None:
    if p.shape != q.shape:
        raise DimensionMismatch(f"distributions have shapes {p.shape} and {q.shape}")


def _kl(p: np.ndarray, m: np.ndarray, log_epsilon: float) -> float:
    terms = xlogy(p, p) - xlogy(p, np.maximum(m, log_epsilon))
    return max(float(np.sum(terms)) / _LN_BASE, 0.0)


def _jsd(p: np.ndarray, q: np.ndarray, log_epsilon: float) -> float:
    mixture = 0.5 * (p + q)
    value = 0.5 * _kl(p, mixture, log_epsilon) + 0.5 * _kl(q, mixture, log_epsilon)
    return min(max(value, 0.0), 1.0)


def kl(p, m, log_epsilon: float = DEFAULT_LOG_EPSILON) -> float:
    """KL(p || m) in bits, with 0 log 0 = 0"""
    p = np.asarray(p, dtype=float).reshape(-1)
    m = np.asarray(m, dtype=float).reshape(-1)
    _check_pair(p, m)
    return _kl(p, m, log_epsilon)


def jsd(p, q, log_epsilon: float = DEFAULT_LOG_EPSILON) -> float:
    """Jensen-Shannon divergence in bits; symmetric and in [0, 1]"""
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    _check_pair(p, q)
    return _jsd(p, q, log_epsilon)


def member_pairs(k: int) -> Iterator[Tuple[int, int]]:
    """Pairs i < j in the fixed lexicographic order used for every reduction"""
    for i in range(k):
        for j in range(i + 1, k):
            yield i, j


def pairwise_jsd_matrix(members: np.ndarray, log_epsilon: float = DEFAULT_LOG_EPSILON) -> np.ndarray:
    """Symmetric k x k matrix of JSDs with a zero diagonal"""
    members = np.asarray(members, dtype=float)
    k = members.shape[0]
    matrix = np.zeros((k, k))
    for i, j in member_pairs(k):
        matrix[i, j] = matrix[j, i] = _jsd(members[i], members[j], log_epsilon)
    return matrix


def cumulative_reward(occupancy_set: OccupancySet, m: MdpModel) -> float:
    """Sum of the members' average rewards"""
    _check_set(occupancy_set, m)
    return float(np.sum(occupancy_set.members @ m.reward_vector))


def cumulative_diversity(occupancy_set: OccupancySet, log_epsilon: float = DEFAULT_LOG_EPSILON) -> float:
    """Sum of pairwise JSDs over i < j"""
    members = occupancy_set.members
    total = 0.0
    for i, j in member_pairs(occupancy_set.k):
        total += _jsd(members[i], members[j], log_epsilon)
    return total


def diversity_weight(lam: float, k: int) -> float:
    if k < 2:
        return 0.0
    return 2.0 * lam / (k * (k - 1))


def average_pairwise_jsd(members: np.ndarray, log_epsilon: float = DEFAULT_LOG_EPSILON) -> float:
    """Cumulative diversity scaled by 2 / (k (k - 1)); 0 for a single member"""
    k = members.shape[0]
    if k < 2:
        return 0.0
    total = sum(_jsd(members[i], members[j], log_epsilon) for i, j in member_pairs(k))
    return 2.0 * total / (k * (k - 1))


def _check_set(occupancy_set: OccupancySet, m: MdpModel) -> None:
    if (occupancy_set.num_states, occupancy_set.num_actions) != (m.num_states, m.num_actions):
        raise DimensionMismatch(
            f"occupancy set is ({occupancy_set.num_states}, {occupancy_set.num_actions}), "
            f"MDP is ({m.num_states}, {m.num_actions})"
        )


def evaluate_members(members: np.ndarray, reward: np.ndarray, cfg: ObjectiveConfig,
                     with_gradient: bool = True) -> ObjectiveEval:
    """
    Array-level evaluation used inside the solvers' inner loops.

    Args:
        members: (k, S*A) occupancy vectors
        reward: flattened r(s, a)
        cfg: objective parameters; cfg.k must equal the number of rows

    Returns:
        ObjectiveEval; gradient is an empty (0, S*A) array when with_gradient is False
    """
    k = members.shape[0]
    if k != cfg.k:
        raise CardinalityMismatch(f"set has {k} members, objective expects k={cfg.k}")

    weight = diversity_weight(cfg.lam, k)
    reward_term = float(np.sum(members @ reward)) / k

    floored_log = np.log2(np.maximum(members, cfg.log_epsilon)) if with_gradient else None
    gradient = np.tile(reward / k, (k, 1)) if with_gradient else np.zeros((0, members.shape[1]))

    diversity_term = 0.0
    for i, j in member_pairs(k):
        diversity_term += _jsd(members[i], members[j], cfg.log_epsilon)
        if with_gradient and weight > 0.0:
            log_mixture = np.log2(np.maximum(0.5 * (members[i] + members[j]), cfg.log_epsilon))
            # d JSD / d rho_i = 1/2 log2(rho_i / m), and symmetrically for rho_j
            gradient[i] += weight * 0.5 * (floored_log[i] - log_mixture)
            gradient[j] += weight * 0.5 * (floored_log[j] - log_mixture)

    average = 2.0 * diversity_term / (k * (k - 1)) if k >= 2 else 0.0
    return ObjectiveEval(
        value=reward_term + weight * diversity_term,
        reward_term=reward_term,
        diversity_term=diversity_term,
        diversity_weight=weight,
        gradient=gradient,
        average_diversity=average,
    )


def eval_f(occupancy_set: OccupancySet, m: MdpModel, cfg: ObjectiveConfig,
           with_gradient: bool = True) -> ObjectiveEval:
    """Objective value, its two terms and the per-member gradient"""
    _check_set(occupancy_set, m)
    return evaluate_members(occupancy_set.members, m.reward_vector, cfg, with_gradient)


def lipschitz_bound(lam: float, delta: float) -> float:
    """Gradient Lipschitz constant lambda (1 + delta) / (4 delta^2) over the delta-floored polytope"""
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if lam < 0.0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    return lam * (1.0 + delta) / (4.0 * delta ** 2)
