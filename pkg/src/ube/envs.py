"""Environment builders and random test instances."""
from __future__ import annotations

import numpy as np

from .mdp import LayeredMdp, make_rng, unroll
from .posterior import BeliefState


def build_two_path(H: int = 10, sigma: float = 1.0, mu1: float = 1.0, mu2: float = 0.0) -> LayeredMdp:
    """Root with two actions: a single Gaussian reward, or a chain of ``H`` small ones.

    Action 0 leads to one reward ``N(mu1, sigma^2)`` followed by zero-reward
    absorbing padding; action 1 leads to ``H`` states each paying
    ``N(mu2 / H, sigma^2 / H)``. Layout: the root is layer 0, then ``H`` layers
    of two states (state 0 on the short branch, state 1 on the chain), so the
    horizon is ``H + 1``. Only the root has a real choice; elsewhere action 0
    is the single valid action. The root reward and the padding are known
    exactly (zero mean, zero noise).
    """
    if H < 1 or sigma < 0:
        raise ValueError("need H >= 1 and sigma >= 0")
    stay = np.zeros((2, 2, 2))
    stay[0, :, 0] = 1.0
    stay[1, :, 1] = 1.0
    root = np.zeros((1, 2, 2))
    root[0, 0, 0] = 1.0
    root[0, 1, 1] = 1.0
    transitions = [root] + [stay] * (H - 1)

    rewards = [np.zeros((1, 2))]
    noise = [np.zeros((1, 2))]
    valid = [np.ones((1, 2), bool)]
    for k in range(H):
        short = mu1 if k == 0 else 0.0
        short_sd = sigma if k == 0 else 0.0
        rewards.append(np.array([[short, short], [mu2 / H, mu2 / H]]))
        noise.append(np.array([[short_sd, short_sd], [sigma / np.sqrt(H)] * 2]))
        valid.append(np.array([[True, False], [True, False]]))
    r_max = max(abs(mu1), abs(mu2) / H) or 1.0
    return LayeredMdp(transitions, rewards, noise, r_max=r_max, initial=[1.0], valid_actions=valid)


def build_random_dag(seed: int, layer_sizes, actions: int, r_max: float = 1.0,
                     reward_noise: float = 1.0) -> LayeredMdp:
    """Dirichlet(1) transition rows and uniform mean rewards in ``[-r_max, r_max]``."""
    sizes = [int(n) for n in layer_sizes]
    if not sizes or min(sizes) < 1 or actions < 1:
        raise ValueError("layer sizes and action count must be >= 1")
    rng = make_rng(seed)
    transitions = [rng.dirichlet(np.ones(sizes[h + 1]), size=(sizes[h], actions))
                   for h in range(len(sizes) - 1)]
    # renormalise so rows sum to one to within an ulp or two
    transitions = [p / p.sum(axis=-1, keepdims=True) for p in transitions]
    rewards = [rng.uniform(-r_max, r_max, size=(n, actions)) for n in sizes]
    initial = np.full(sizes[0], 1.0 / sizes[0])
    return LayeredMdp(transitions, rewards, reward_noise, r_max=r_max, initial=initial)


def build_unrolled_chain(n_states: int = 5, horizon: int = 10, p_success: float = 0.7,
                         r_left: float = 0.05, r_right: float = 1.0,
                         reward_noise: float = 0.5) -> LayeredMdp:
    """River-swim style chain unrolled over ``horizon`` steps.

    Action 0 moves left deterministically; action 1 moves right with
    probability ``p_success`` and otherwise stays. Pushing left at the left
    end pays ``r_left``; pushing right at the right end pays ``r_right``.
    """
    if n_states < 2:
        raise ValueError("need at least two chain states")
    P = np.zeros((n_states, 2, n_states))
    R = np.zeros((n_states, 2))
    for s in range(n_states):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, n_states - 1)] += p_success
        P[s, 1, s] += 1.0 - p_success
    R[0, 0] = r_left
    R[-1, 1] = r_right
    initial = np.zeros(n_states)
    initial[0] = 1.0
    return unroll(P, R, horizon, reward_noise, r_max=max(abs(r_left), abs(r_right)), initial=initial)


def build_env(spec: dict) -> LayeredMdp:
    """Build an environment from a config dict with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "two_path":
        return build_two_path(**spec)
    if kind == "random_dag":
        return build_random_dag(**spec)
    if kind == "unrolled_chain":
        return build_unrolled_chain(**spec)
    raise ValueError(f"unknown environment kind {kind!r}")


def random_instance(rng: np.random.Generator, max_horizon: int = 5, max_states: int = 4,
                    max_actions: int = 3, max_count: int = 20):
    """Random small MDP, conjugate belief and stochastic policy.

    Some transitions are made structurally impossible, and each ``(h, s, a)``
    receives between 0 and ``max_count`` simulated observations from the MDP.
    """
    H = int(rng.integers(1, max_horizon + 1))
    sizes = [int(n) for n in rng.integers(1, max_states + 1, size=H)]
    A = int(rng.integers(1, max_actions + 1))
    base = build_random_dag(int(rng.integers(2 ** 31)), sizes, A, r_max=1.0)
    transitions = []
    for p in base.transitions:
        keep = rng.random(p.shape) < 0.7
        # keep at least one successor per row
        forced = rng.integers(p.shape[2], size=p.shape[:2])
        keep[np.arange(p.shape[0])[:, None], np.arange(A)[None, :], forced] = True
        q = np.where(keep, p, 0.0)
        transitions.append(q / q.sum(axis=-1, keepdims=True))
    noise = [rng.uniform(0.1, 1.0, size=(n, A)) for n in sizes]
    mdp = LayeredMdp(transitions, base.mean_rewards, noise, r_max=1.0, initial=base.initial)

    belief = BeliefState.from_mdp(mdp, prior_pseudo_obs=float(rng.uniform(0.5, 2.0)),
                                  dirichlet_prior=float(rng.uniform(0.5, 2.0)))
    for h in range(H):
        n = rng.integers(0, max_count + 1, size=(sizes[h], A))
        belief.counts[h] += n
        belief.reward_sum[h] += n * mdp.mean_rewards[h] + noise[h] * np.sqrt(n) * rng.standard_normal(n.shape)
        if h < H - 1:
            belief.transition_counts[h] += rng.multinomial(n, mdp.transitions[h])
    policy = [rng.dirichlet(np.ones(A), size=n) for n in sizes]
    return mdp, belief, policy
