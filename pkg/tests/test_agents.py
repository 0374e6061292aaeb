import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from oracles import two_path_belief
from ube import (
    VARIANTS,
    AgentSpec,
    BeliefState,
    RegretLedger,
    build_random_dag,
    build_two_path,
    count_bonus_act,
    exp_bonus,
    learned_ube_nstep,
    learned_ube_step,
    make_agent,
    make_rng,
    new_ledger,
    optimal_q,
    run_episode,
    thompson_act,
    thompson_probabilities,
)
from ube.mdp import uniform_policy


def draw_frequencies(q, u, beta, n, seed, valid=None):
    rng = make_rng(seed)
    counts = np.zeros(len(q))
    for _ in range(n):
        counts[thompson_act(q, u, beta, rng, valid)] += 1
    return counts / n


def within(freq, p, n, k=4.0):
    return np.all(np.abs(freq - p) <= k * np.sqrt(p * (1 - p) / n) + 1e-12)


def test_thompson_without_uncertainty_is_greedy():
    rng = make_rng(0)
    assert all(thompson_act([0.1, 0.5, 0.2], [0, 0, 0], 1.0, rng) == 1 for _ in range(50))


def test_thompson_symmetric_rows_split_evenly():
    n = 10 ** 5
    assert within(draw_frequencies([0.0, 0.0], [1.0, 1.0], 1.0, n, 1), np.array([0.5, 0.5]), n)


def test_thompson_gaussian_difference_probability():
    n = 10 ** 5
    p2 = norm.cdf(-1 / np.sqrt(0.08))
    freq = draw_frequencies([1.0, 0.0], [0.04, 0.04], 1.0, n, 2)
    assert within(freq, np.array([1 - p2, p2]), n)
    np.testing.assert_allclose(thompson_probabilities([1.0, 0.0], [0.04, 0.04])[0], [1 - p2, p2])


@pytest.mark.parametrize("q,u,valid", [
    ([0.3, 0.1, 0.0, 0.2], [0.5, 0.1, 1.0, 0.0], None),
    ([0.3, 0.1, 0.0], [0.0, 0.0, 0.2], None),
    ([0.0, 0.1, 0.2, 5.0], [1.0, 2.0, 0.5, 1.0], [True, True, True, False]),
])
def test_thompson_probabilities_match_draws(q, u, valid):
    n = 10 ** 5
    p = thompson_probabilities(q, u, 1.0, None if valid is None else [valid])[0]
    assert p.sum() == pytest.approx(1.0, abs=1e-10)
    assert within(draw_frequencies(np.array(q), np.array(u), 1.0, n, 3, valid), p, n)


def test_small_beta_approaches_greedy():
    q, u = np.array([0.2, 0.0, 0.1]), np.ones(3)
    freqs = [draw_frequencies(q, u, beta, 2000, 4)[0] for beta in (1.0, 0.1, 0.01)]
    assert freqs[0] < freqs[1] < freqs[2] == 1.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), shift=st.floats(-100, 100), t=st.integers(1, 10 ** 4))
def test_selection_is_shift_invariant(seed, shift, t):
    rng = np.random.default_rng(seed)
    # values on a coarse grid keep exact ties exact after shifting
    q = rng.integers(-8, 8, size=4) / 4.0
    u = rng.uniform(0, 1, size=4)
    b = rng.uniform(0, 1, size=4)
    shift = round(shift * 4) / 4
    assert thompson_act(q, u, 0.7, make_rng(seed)) == thompson_act(q + shift, u, 0.7, make_rng(seed))
    assert count_bonus_act(q, b, 0.3, t) == count_bonus_act(q + shift, b, 0.3, t)
    np.testing.assert_allclose(thompson_probabilities(q, u), thompson_probabilities(q + shift, u),
                               atol=1e-9)


def test_count_bonus_examples():
    assert count_bonus_act([0.1, 0.3], [10.0, 0.0], 0.0, 50) == 1
    assert count_bonus_act([0.2, 0.2], [0.1, 0.3], 1.0, 3) == 1
    assert count_bonus_act([0.2, 0.2], [0.3, 0.3], 1.0, 3) == 0
    with pytest.raises(ValueError):
        count_bonus_act([0.0], [0.0], 1.0, 0)


@pytest.mark.parametrize("H,n", [(10, 4), (1, 9), (5, 1)])
def test_exp_bonus_on_two_path(H, n):
    sigma = 1.5
    mdp, belief = two_path_belief(H, sigma, n)
    b = exp_bonus(belief, uniform_policy(mdp))
    np.testing.assert_allclose(b[0][0], [sigma / np.sqrt(n), sigma * np.sqrt(H / n)], rtol=1e-12)


def test_exp_bonus_with_zero_noise():
    mdp, belief = two_path_belief(4, 1.0, 2)
    b = exp_bonus(belief, uniform_policy(mdp), sigma_r=0.0)
    assert all(np.all(x == 0.0) for x in b)


def test_count_bonus_flip_threshold():
    H, n, sigma, beta, t = 10, 4, 1.0, 0.2, 100
    mdp, belief = two_path_belief(H, sigma, n)
    bonus = exp_bonus(belief, uniform_policy(mdp))[0][0]
    threshold = beta * np.log(t) * (sigma * np.sqrt(H / n) - sigma / np.sqrt(n))
    for gap in threshold + np.array([-1e-6, 1e-6, -0.1, 0.1]):
        choice = count_bonus_act([gap, 0.0], bonus, beta, t)
        assert choice == (0 if gap > threshold else 1)


def test_count_bonus_agent_flips_when_simulated():
    H, n, sigma, beta, t = 10, 4, 1.0, 0.2, 100
    threshold = beta * np.log(t) * (sigma * np.sqrt(H / n) - sigma / np.sqrt(n))
    for gap, expected in ((threshold - 0.05, 1), (threshold + 0.05, 0)):
        env = build_two_path(H, sigma, mu1=gap, mu2=0.0)
        agent = make_agent(AgentSpec("count_bonus", beta=beta), env)
        _, belief = two_path_belief(H, sigma, n)
        for h in range(env.horizon):
            agent.belief.counts[h][...] = belief.counts[h]
            agent.belief.reward_sum[h][...] = n * env.mean_rewards[h]
        agent.belief.prior_precision[1][...] = 0.0
        for h in range(2, env.horizon):
            agent.belief.prior_precision[h][1] = 0.0
        agent.begin_episode(t, make_rng(0))
        assert agent.act(0, 0, make_rng(0)) == expected


def test_learned_step_fixed_point_and_terminal():
    u = [np.array([[0.5, 0.2]]), np.array([[0.3, 0.1]])]
    learned_ube_step(u, 0, 0, 0, 0, 1, nu_hat=0.4, gamma=1.0, lr=0.5)
    assert u[0][0, 0] == pytest.approx(0.5)
    learned_ube_step(u, 1, 0, 1, None, None, nu_hat=0.7, gamma=1.0, lr=1.0, terminal=True)
    assert u[1][0, 1] == pytest.approx(0.7)


def test_learned_step_contracts_toward_target():
    u = [np.array([[5.0]]), np.array([[1.0]])]
    errors = []
    for _ in range(20):
        learned_ube_step(u, 0, 0, 0, 0, 0, nu_hat=0.5, gamma=0.9, lr=0.3)
        errors.append(abs(0.5 + 0.81 * 1.0 - u[0][0, 0]))
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_learned_step_clamps_at_zero():
    u = [np.array([[0.1]]), np.array([[0.0]])]
    learned_ube_step(u, 0, 0, 0, 0, 0, nu_hat=0.0, gamma=1.0, lr=2.0)
    assert u[0][0, 0] == 0.0


def test_nstep_with_one_step_window_matches_one_step():
    rng = make_rng(5)
    u1 = [rng.uniform(size=(2, 2)) for _ in range(3)]
    u2 = [x.copy() for x in u1]
    learned_ube_step(u1, 0, 1, 0, 1, 1, nu_hat=0.3, gamma=0.95, lr=0.4)
    learned_ube_nstep(u2, [(0, 1, 0)], [0.3], 0.95, 0.4, bootstrap=(1, 1, 1))
    for a, b in zip(u1, u2):
        np.testing.assert_array_equal(a, b)


def test_nstep_full_episode_target_is_the_sum():
    u = [np.zeros((1, 1)) for _ in range(4)]
    nus = [0.1, 0.2, 0.3, 0.4]
    learned_ube_nstep(u, [(h, 0, 0) for h in range(4)], nus, 1.0, 1.0)
    assert u[0][0, 0] == pytest.approx(sum(nus))


def test_td_uncertainty_converges_to_solver():
    from ube import local_uncertainty, posterior_stats, solve_ube, td_uncertainty

    mdp = build_random_dag(3, [2, 3, 2], 2)
    rng = make_rng(0)
    belief = BeliefState.from_mdp(mdp)
    for h in range(3):
        belief.counts[h][...] = rng.integers(1, 10, size=belief.counts[h].shape)
    stats = posterior_stats(belief)
    nu = local_uncertainty(belief, 3.0, stats)
    policy = uniform_policy(mdp)
    exact = solve_ube(nu, policy, stats.mean_transition)
    for n_step in (1, 3):
        learned = td_uncertainty(nu, policy, stats.mean_transition, mdp.initial, 3 * 10 ** 4,
                                 make_rng(n_step), n_step=n_step)
        for a, b in zip(learned, exact):
            np.testing.assert_allclose(a, b, rtol=0.05)


def test_epsilon_one_is_uniform():
    env = build_two_path(3)
    agent = make_agent(AgentSpec("epsilon_greedy", epsilon_start=1.0, epsilon_end=1.0), env)
    ledger = new_ledger(env)
    n = 10 ** 4
    hits = np.zeros(2)
    for t in range(1, n + 1):
        hits[run_episode(agent, env, ledger, make_rng(0, 0, t), t).steps[0].a] += 1
    assert within(hits / n, np.array([0.5, 0.5]), n)


def test_posterior_sampling_with_degenerate_belief_is_optimal():
    env = build_random_dag(4, [2, 3, 2], 3)
    agent = make_agent(AgentSpec("posterior_sampling"), env)
    agent.belief = BeliefState(list(env.mean_rewards), np.inf,
                               [np.ones_like(m) for m in env.mean_rewards],
                               [1e15 * p for p in env.transitions])
    _, pi_star = optimal_q(env)
    for t in range(1, 6):
        rule = agent.begin_episode(t, make_rng(t))
        for a, b in zip(rule, pi_star):
            np.testing.assert_array_equal(a, b)


def test_ledger_cumulative_is_the_prefix_sum():
    ledger = RegretLedger(optimal=1.0)
    rng = make_rng(6)
    totals = [ledger.record(e, r) for e, r in zip(rng.uniform(0, 1, 200), rng.normal(size=200))]
    np.testing.assert_allclose(ledger.cumulative, np.cumsum(1.0 - np.array(ledger.expected_returns)),
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(totals, ledger.cumulative, rtol=0, atol=1e-12)
    realized = RegretLedger(optimal=1.0, realized=True)
    realized.record(0.5, 2.0)
    assert realized.per_episode_regret[0] == -1.0


def test_thompson_rule_matches_executed_actions():
    env = build_two_path(3)
    agent = make_agent(AgentSpec("ube_exact", beta=1.0), env)
    rng = make_rng(7)
    n = 20000
    hits = 0
    rule = None
    for k in range(n):
        rule = agent.begin_episode(1, rng)
        hits += agent.act(0, 0, rng) == 0
    p = rule[0][0, 0]
    assert abs(hits / n - p) < 4 * np.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_runs_with_nonnegative_expected_regret(variant):
    env = build_random_dag(9, [2, 3, 3, 2], 2)
    spec = AgentSpec(variant, beta=0.5, n_step=2)
    agent = make_agent(spec, env)
    ledger = new_ledger(env)
    for t in range(1, 31):
        rec = run_episode(agent, env, ledger, make_rng(1, 2, t), t)
        assert rec.regret >= -1e-12
        assert len(rec.steps) == env.horizon
    assert len(ledger) == 30


def test_count_bound_local_option_runs():
    env = build_two_path(4)
    agent = make_agent(AgentSpec("ube_exact", local="count_bound"), env)
    ledger = new_ledger(env)
    for t in range(1, 11):
        run_episode(agent, env, ledger, make_rng(0, 0, t), t)
    assert np.all(np.isfinite(ledger.cumulative))


@pytest.mark.parametrize("bad", [
    dict(variant="nope"),
    dict(variant="ube_exact", beta=0.0),
    dict(variant="count_bonus", beta=-1.0),
    dict(variant="ube_learned_nstep", n_step=0),
    dict(variant="ube_exact", gamma=1.5),
    dict(variant="ube_exact", local="other"),
])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        AgentSpec(**bad)
    with pytest.raises(ValueError):
        AgentSpec.from_dict({"variant": "ube_exact", "colour": 1})
