import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rollout_returns
from ube import (
    LayeredMdp,
    build_random_dag,
    build_two_path,
    evaluate_policy,
    make_rng,
    optimal_q,
    optimal_return,
    policy_value,
    q_max,
    sample_episode,
)
from ube.mdp import bellman_residual, deterministic_policy, unroll, uniform_policy


def random_policy(mdp, rng):
    return [rng.dirichlet(np.ones(mdp.n_actions), size=n) for n in mdp.layer_sizes]


def test_horizon_one_q_is_mean_reward():
    mdp = LayeredMdp([], [np.array([[1.0, 0.0]])])
    q = evaluate_policy(mdp, [np.array([[0.5, 0.5]])])
    np.testing.assert_allclose(q[0], [[1.0, 0.0]])


def test_two_path_root_q():
    mdp = build_two_path(H=10, sigma=1.0, mu1=1.0, mu2=0.0)
    q = evaluate_policy(mdp, uniform_policy(mdp))
    np.testing.assert_allclose(q[0][0], [1.0, 0.0], atol=1e-12)


def test_q_matches_monte_carlo_rollouts():
    mdp = build_random_dag(3, [2, 3, 2], 2, reward_noise=0.5)
    rng = make_rng(11)
    policy = random_policy(mdp, rng)
    q = evaluate_policy(mdp, policy)
    n = 10 ** 6
    for s in range(2):
        for a in range(2):
            g = rollout_returns(mdp, policy, n, rng, s0=s, a0=a)
            se = g.std(ddof=1) / np.sqrt(n)
            assert abs(g.mean() - q[0][s, a]) < 4 * se


@pytest.mark.parametrize("H,r_max,expected", [(10, 1.0, 10.0), (1, 0.5, 0.5), (7, 2.0, 14.0)])
def test_q_max(H, r_max, expected):
    mdp = unroll(np.ones((1, 1, 1)), np.zeros((1, 1)), H, r_max=r_max)
    assert q_max(mdp) == expected


def test_deterministic_episode_is_the_unique_path():
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    R = np.array([[0.1, 0.2], [0.3, 0.4]])
    mdp = unroll(P, R, 3)
    policy = deterministic_policy([np.array([1, 1]), np.array([0, 0]), np.array([1, 1])], 2)
    steps = sample_episode(mdp, policy, make_rng(0))
    assert [(s.h, s.s, s.a, s.s_next) for s in steps] == [(0, 0, 1, 1), (1, 1, 0, 0), (2, 0, 1, None)]
    assert [s.r for s in steps] == [0.2, 0.3, 0.2]


def test_fixed_seed_gives_identical_trajectory():
    mdp = build_random_dag(5, [2, 3, 3], 3)
    policy = uniform_policy(mdp)
    assert sample_episode(mdp, policy, make_rng(9, 1)) == sample_episode(mdp, policy, make_rng(9, 1))


def test_visit_frequencies_match_transition_probabilities():
    mdp = build_random_dag(8, [1, 4], 2)
    policy = [np.array([[1.0, 0.0]]), np.full((4, 2), 0.5)]
    rng = make_rng(1)
    n = 10 ** 5
    hits = np.zeros(4)
    for _ in range(n):
        hits[sample_episode(mdp, policy, rng)[0].s_next] += 1
    p = mdp.transitions[0][0, 0]
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(hits / n - p) < 4 * se + 1e-12)


def test_two_path_optimal_return():
    assert optimal_return(build_two_path()) == pytest.approx(1.0, abs=1e-12)


def test_single_action_optimal_equals_evaluation():
    mdp = build_random_dag(2, [2, 2, 3], 1)
    assert optimal_return(mdp) == pytest.approx(policy_value(mdp, uniform_policy(mdp)), abs=1e-12)


def test_optimal_return_dominates_random_policies():
    mdp = build_random_dag(4, [2, 3, 3, 2], 3)
    rng = make_rng(4)
    best = optimal_return(mdp)
    for _ in range(100):
        assert policy_value(mdp, random_policy(mdp, rng)) <= best + 1e-12


def test_backward_induction_is_a_fixed_point():
    mdp = build_random_dag(6, [3, 4, 2, 3], 3)
    policy = random_policy(mdp, make_rng(6))
    q = evaluate_policy(mdp, policy)
    assert bellman_residual(q, mdp.mean_rewards, mdp.transitions, policy) < 1e-12
    q_star, pi_star = optimal_q(mdp)
    assert bellman_residual(q_star, mdp.mean_rewards, mdp.transitions, pi_star) < 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), layer=st.integers(0, 2), bump=st.floats(0.0, 0.5))
def test_evaluation_is_monotone_in_rewards(seed, layer, bump):
    rng = make_rng(seed)
    mdp = build_random_dag(seed, [2, 2, 2], 2, r_max=1.0)
    policy = random_policy(mdp, rng)
    rewards = [np.array(m) for m in mdp.mean_rewards]
    s, a = rng.integers(2), rng.integers(2)
    rewards[layer][s, a] += bump
    bumped = LayeredMdp(mdp.transitions, rewards, 0.0, r_max=2.0)
    q0 = evaluate_policy(mdp, policy)
    q1 = evaluate_policy(bumped, policy)
    for h in range(layer + 1):
        assert np.all(q1[h] >= q0[h] - 1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_q_bounded_by_q_max(seed):
    rng = make_rng(seed)
    sizes = [int(n) for n in rng.integers(1, 5, size=int(rng.integers(1, 6)))]
    mdp = build_random_dag(seed, sizes, int(rng.integers(1, 4)))
    q = evaluate_policy(mdp, random_policy(mdp, rng))
    assert all(np.all(np.abs(x) <= q_max(mdp) + 1e-12) for x in q)


def test_json_round_trip_is_exact():
    mdp = build_random_dag(12, [2, 3, 2], 2)
    again = LayeredMdp.from_json(mdp.to_json())
    assert again.to_json() == mdp.to_json()
    assert set(json.loads(mdp.to_json())) >= {"horizon", "layers", "actions", "transitions",
                                               "mean_rewards", "reward_noise", "r_max", "initial"}


def test_random_dag_is_seed_deterministic():
    assert build_random_dag(3, [2, 2], 2).to_json() == build_random_dag(3, [2, 2], 2).to_json()
    assert build_random_dag(3, [2, 2], 2).to_json() != build_random_dag(4, [2, 2], 2).to_json()


@pytest.mark.parametrize("bad", [
    dict(transitions=[np.full((1, 1, 2), 0.6)], mean_rewards=[np.zeros((1, 1)), np.zeros((2, 1))]),
    dict(transitions=[np.array([[[1.5, -0.5]]])], mean_rewards=[np.zeros((1, 1)), np.zeros((2, 1))]),
    dict(transitions=[], mean_rewards=[np.array([[2.0]])], r_max=1.0),
    dict(transitions=[], mean_rewards=[np.zeros((1, 2))], valid_actions=[np.zeros((1, 2), bool)]),
    dict(transitions=[], mean_rewards=[]),
])
def test_invalid_mdps_are_rejected(bad):
    with pytest.raises(ValueError):
        LayeredMdp(**bad)


def test_arrays_are_read_only():
    mdp = build_two_path(3)
    with pytest.raises(ValueError):
        mdp.mean_rewards[0][0, 0] = 5.0


def test_independent_rng_streams():
    a = make_rng(1, 2, 3).random(4)
    b = make_rng(1, 2, 4).random(4)
    np.testing.assert_array_equal(a, make_rng(1, 2, 3).random(4))
    assert not np.allclose(a, b)
