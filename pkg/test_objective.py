import itertools

import numpy as np
import pytest

from src.errors import CardinalityMismatch, DimensionMismatch, DomainError
from src.mdp_core import MdpModel, OccupancySet, average_reward
from src.objective import (ObjectiveConfig, cumulative_diversity, cumulative_reward, eval_f,
                           evaluate_members, jsd, kl, lipschitz_bound, pairwise_jsd_matrix)


def random_mdp(seed: int, num_states: int = 4, num_actions: int = 2) -> MdpModel:
    rng = np.random.default_rng(seed)
    transition = rng.random((num_states, num_actions, num_states)) + 0.05
    transition /= transition.sum(axis=2, keepdims=True)
    return MdpModel(transition, rng.normal(size=(num_states, num_actions)))


def random_distribution(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.dirichlet(np.ones(size))


def interior_set(rng: np.random.Generator, k: int, m: MdpModel) -> OccupancySet:
    """Members mixed with the uniform vector so every entry stays well inside the simplex"""
    size = m.num_pairs
    members = 0.8 * rng.dirichlet(np.ones(size), size=k) + 0.2 / size
    return OccupancySet(members, m.num_states, m.num_actions)


def test_kl_basic_values():
    p = np.array([0.2, 0.3, 0.5])
    assert kl(p, p) == 0.0
    assert kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-15)


def test_kl_matches_direct_summation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = random_distribution(rng, 7)
        m = random_distribution(rng, 7)
        direct = sum(p_x * np.log2(p_x / m_x) for p_x, m_x in zip(p, m))
        assert kl(p, m) == pytest.approx(direct, abs=1e-12)


def test_kl_rejects_mismatched_lengths():
    with pytest.raises(DimensionMismatch):
        kl([0.5, 0.5], [1.0])


def test_jsd_identity_disjoint_and_symmetry():
    p = np.array([0.1, 0.6, 0.3])
    assert jsd(p, p) == 0.0
    assert jsd([0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.3, 0.7]) == pytest.approx(1.0, abs=1e-15)

    rng = np.random.default_rng(1)
    for _ in range(50):
        p = random_distribution(rng, 6)
        q = random_distribution(rng, 6)
        assert jsd(p, q) == jsd(q, p)
        assert 0.0 <= jsd(p, q) <= 1.0


def test_jsd_rejects_mismatched_lengths():
    with pytest.raises(DimensionMismatch):
        jsd([0.5, 0.5], [0.2, 0.3, 0.5])


def test_cumulative_reward():
    m = random_mdp(2)
    rng = np.random.default_rng(3)
    member = random_distribution(rng, m.num_pairs)
    identical = OccupancySet(np.stack([member] * 3), m.num_states, m.num_actions)
    assert cumulative_reward(identical, m) == pytest.approx(3 * member @ m.reward_vector, abs=1e-12)

    zero = MdpModel(m.transition, np.zeros((4, 2)))
    assert cumulative_reward(identical, zero) == 0.0

    pair = interior_set(rng, 2, m)
    expected = sum(average_reward(rho, m) for rho in pair)
    assert cumulative_reward(pair, m) == pytest.approx(expected, abs=1e-12)


def test_cumulative_diversity():
    m = random_mdp(4)
    rng = np.random.default_rng(5)
    member = random_distribution(rng, m.num_pairs)
    assert cumulative_diversity(OccupancySet(np.stack([member] * 4), 4, 2)) == 0.0

    pair = interior_set(rng, 2, m)
    assert cumulative_diversity(pair) == jsd(pair.members[0], pair.members[1])

    triple = interior_set(rng, 3, m)
    explicit = sum(jsd(triple.members[i], triple.members[j]) for i, j in [(0, 1), (0, 2), (1, 2)])
    assert cumulative_diversity(triple) == pytest.approx(explicit, abs=1e-15)


def test_pairwise_matrix_is_symmetric_with_zero_diagonal():
    rng = np.random.default_rng(6)
    matrix = pairwise_jsd_matrix(rng.dirichlet(np.ones(8), size=4))
    assert np.array_equal(matrix, matrix.T)
    assert np.all(np.diag(matrix) == 0.0)


def test_reward_only_objective():
    m = random_mdp(7)
    occupancy_set = interior_set(np.random.default_rng(8), 3, m)
    evaluation = eval_f(occupancy_set, m, ObjectiveConfig(lam=0.0, k=3))
    rewards = [average_reward(rho, m) for rho in occupancy_set]
    assert evaluation.value == pytest.approx(np.mean(rewards), abs=1e-12)
    assert np.allclose(evaluation.gradient, m.reward_vector / 3)


def test_identical_members_have_no_diversity_gradient():
    m = random_mdp(9)
    member = random_distribution(np.random.default_rng(10), m.num_pairs)
    occupancy_set = OccupancySet(np.stack([member, member]), 4, 2)
    evaluation = eval_f(occupancy_set, m, ObjectiveConfig(lam=5.0, k=2))
    assert evaluation.diversity_term == 0.0
    assert np.allclose(evaluation.gradient, m.reward_vector / 2, atol=1e-15)


def test_value_reconstructs_from_terms():
    m = random_mdp(11)
    evaluation = eval_f(interior_set(np.random.default_rng(12), 4, m), m, ObjectiveConfig(lam=3.0, k=4))
    assert evaluation.value == pytest.approx(evaluation.reconstruct(), abs=1e-12)
    assert evaluation.average_diversity == pytest.approx(evaluation.diversity_term / 6, abs=1e-15)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(13)
    step = 1e-6
    for trial in range(100):
        k = int(rng.choice([2, 3, 4]))
        m = random_mdp(200 + trial, num_states=3, num_actions=2)
        cfg = ObjectiveConfig(lam=float(rng.uniform(0.5, 8.0)), k=k)
        members = np.array(interior_set(rng, k, m).members)
        analytic = evaluate_members(members, m.reward_vector, cfg).gradient

        numeric = np.zeros_like(members)
        for i, x in itertools.product(range(k), range(m.num_pairs)):
            forward, backward = members.copy(), members.copy()
            forward[i, x] += step
            backward[i, x] -= step
            numeric[i, x] = (
                evaluate_members(forward, m.reward_vector, cfg, with_gradient=False).value
                - evaluate_members(backward, m.reward_vector, cfg, with_gradient=False).value
            ) / (2 * step)

        relative = np.abs(numeric - analytic) / np.maximum(np.abs(analytic), 1.0)
        assert relative.max() < 1e-5


def test_gradient_satisfies_lipschitz_bound():
    rng = np.random.default_rng(14)
    lam, delta = 8.0, 0.01
    bound = lipschitz_bound(lam, delta)
    m = random_mdp(15, num_states=5, num_actions=4)
    cfg = ObjectiveConfig(lam=lam, k=2)
    for _ in range(1000):
        x = rng.uniform(delta, 1.0, size=(2, m.num_pairs))
        y = rng.uniform(delta, 1.0, size=(2, m.num_pairs))
        gap = np.linalg.norm(
            evaluate_members(x, m.reward_vector, cfg).gradient - evaluate_members(y, m.reward_vector, cfg).gradient
        )
        assert gap <= bound * np.linalg.norm(x - y)


def test_objective_is_permutation_invariant():
    m = random_mdp(16)
    occupancy_set = interior_set(np.random.default_rng(17), 4, m)
    cfg = ObjectiveConfig(lam=6.0, k=4)
    order = [2, 0, 3, 1]
    permuted = OccupancySet(occupancy_set.members[order], 4, 2)
    base = eval_f(occupancy_set, m, cfg)
    shuffled = eval_f(permuted, m, cfg)
    assert shuffled.value == pytest.approx(base.value, abs=1e-12)
    assert np.allclose(shuffled.gradient, base.gradient[order], atol=1e-12)


def test_objective_is_linear_in_lambda():
    m = random_mdp(18)
    occupancy_set = interior_set(np.random.default_rng(19), 3, m)
    unit = eval_f(occupancy_set, m, ObjectiveConfig(lam=1.0, k=3))
    for lam in (0.0, 2.5, 8.0):
        evaluation = eval_f(occupancy_set, m, ObjectiveConfig(lam=lam, k=3))
        expected = unit.reward_term + lam * unit.diversity_weight * unit.diversity_term
        assert evaluation.value == pytest.approx(expected, abs=1e-12)


def test_single_member_objective_has_no_diversity():
    m = random_mdp(20)
    occupancy_set = interior_set(np.random.default_rng(21), 1, m)
    evaluation = eval_f(occupancy_set, m, ObjectiveConfig(lam=8.0, k=1))
    assert evaluation.diversity_weight == 0.0
    assert evaluation.value == pytest.approx(occupancy_set.members[0] @ m.reward_vector)


def test_cardinality_mismatch():
    m = random_mdp(22)
    with pytest.raises(CardinalityMismatch):
        eval_f(interior_set(np.random.default_rng(23), 3, m), m, ObjectiveConfig(lam=1.0, k=2))


def test_config_validation():
    with pytest.raises(DomainError):
        ObjectiveConfig(lam=-1.0, k=2)
    with pytest.raises(DomainError):
        ObjectiveConfig(lam=1.0, k=2, log_epsilon=1e-3)
    with pytest.raises(DomainError):
        ObjectiveConfig(lam=1.0, k=2, log_base=10.0)


def test_lipschitz_bound_values():
    assert lipschitz_bound(8.0, 0.01) == pytest.approx(20200.0)
    assert lipschitz_bound(0.0, 0.3) == 0.0
    assert lipschitz_bound(1.0, 0.5) == pytest.approx(1.5)
    for delta in (0.0, 1.0, -0.2):
        with pytest.raises(DomainError):
            lipschitz_bound(1.0, delta)
