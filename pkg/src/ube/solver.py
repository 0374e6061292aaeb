"""Local uncertainties and the uncertainty Bellman equation.

The solution ``u`` of

    u^h = nu^h + gamma**2 * P_mean^h (sum_a' pi^{h+1} u^{h+1}),   u^{H+1} = 0

upper-bounds the posterior variance of the Q-values of ``pi`` when ``nu`` is the
exact local uncertainty and ``gamma == 1``.
"""
from __future__ import annotations

import numpy as np

from .mdp import LayeredMdp, backward_induction, bellman_residual, greedy_actions
from .posterior import BeliefState, posterior_stats


def per_layer_q_max(mdp: LayeredMdp) -> list[float]:
    """Bound on ``|Q^{h+1}|`` seen from layer ``h``: ``(H - h) * R_max`` (1-based ``h``).

    A tighter, non-default alternative to the global ``H * R_max``.
    """
    H = mdp.horizon
    return [(H - 1 - h) * mdp.r_max for h in range(H)]


def local_uncertainty(belief: BeliefState, q_max, stats=None) -> list[np.ndarray]:
    """Exact local uncertainty from conjugate moments.

    ``nu = var(mu_hat) + q_max**2 * sum_{s'} var(P_hat[s']) / E(P_hat[s'])`` where
    the sum runs over next states with nonzero posterior mean. ``q_max`` is a
    scalar or one value per layer.
    """
    if stats is None:
        stats = posterior_stats(belief)
    H = belief.horizon
    q = np.broadcast_to(np.asarray(q_max, dtype=float), (H,))
    if np.any(q < 0):
        raise ValueError("q_max must be nonnegative")
    if stats.stacked is not None:
        _, r_var, p_mean, p_var = stats.stacked
        nu = np.array(r_var)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(p_mean > 0, p_var / p_mean, 0.0).sum(axis=-1)
        nu[:H - 1] += q[:H - 1, None, None] ** 2 * ratio
        return [nu[h, :n] for h, n in enumerate(belief.layer_sizes)]
    nu = [np.array(v, dtype=float) for v in stats.reward_variance]
    for h, (mean, var) in enumerate(zip(stats.mean_transition, stats.transition_variance)):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mean > 0, var / mean, 0.0)
        nu[h] = nu[h] + q[h] ** 2 * ratio.sum(axis=-1)
    return nu


def tabular_local_bound(counts, sigma_r, q_max: float, branching) -> list[np.ndarray]:
    """Count-based bound ``(sigma_r**2 + q_max**2 * |S|) / n`` per ``(h, s, a)``.

    Unvisited pairs get the ``n = 1`` value. ``sigma_r`` and ``branching`` may be
    scalars or per-layer arrays; the last layer has no transitions, so pass a
    branching of 0 there if the tables come from an MDP.
    """
    H = len(counts)
    out = []
    for h in range(H):
        n = np.maximum(np.asarray(counts[h], dtype=float), 1.0)
        sig = sigma_r if np.isscalar(sigma_r) else np.asarray(sigma_r[h], float)
        b = branching if np.isscalar(branching) else np.asarray(branching[h], float)
        out.append((np.square(sig) + q_max ** 2 * b) / n)
    return out


def branching_factor(belief: BeliefState) -> list[np.ndarray]:
    """Number of reachable next states per ``(h, s, a)`` (zero on the last layer)."""
    out = [(a > 0).sum(axis=-1).astype(float) for a in belief.alpha]
    out.append(np.zeros_like(belief.counts[-1], dtype=float))
    return out


def solve_ube(nu, policy, mean_transitions, gamma: float = 1.0) -> list[np.ndarray]:
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if any(np.any(np.asarray(x) < 0) for x in nu):
        raise ValueError("local uncertainty must be nonnegative")
    return backward_induction(nu, mean_transitions, policy, discount=gamma ** 2)


def ube_residual(u, nu, policy, mean_transitions, gamma: float = 1.0) -> float:
    return bellman_residual(u, nu, mean_transitions, policy, discount=gamma ** 2)


def greedy_mean_and_ube(mean_rewards, mean_transitions, nu, valid, gamma: float = 1.0):
    """Posterior-mean Q, its greedy policy, and the UBE solution for that policy.

    One backward sweep: the policy at layer ``h+1`` is fixed before layer ``h``
    is backed up, so ``q`` and ``u`` both belong to the returned policy.
    """
    H = len(mean_rewards)
    A = mean_rewards[0].shape[1]
    eye = np.eye(A)
    disc = gamma ** 2
    q, u, pi = [None] * H, [None] * H, [None] * H
    q[H - 1] = np.array(mean_rewards[H - 1], dtype=float)
    u[H - 1] = np.array(nu[H - 1], dtype=float)
    pi[H - 1] = eye[greedy_actions(q[H - 1], valid[H - 1])]
    for h in range(H - 2, -1, -1):
        P = mean_transitions[h]
        q[h] = mean_rewards[h] + P @ (pi[h + 1] * q[h + 1]).sum(axis=1)
        u[h] = nu[h] + disc * (P @ (pi[h + 1] * u[h + 1]).sum(axis=1))
        pi[h] = eye[greedy_actions(q[h], valid[h])]
    return q, u, pi
