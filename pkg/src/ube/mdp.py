"""Finite-horizon layered MDPs.

States are indexed per layer: layer ``h`` (0-based here, ``0..H-1``) has its
own contiguous index space ``0..S_h-1``. Transitions out of layer ``h`` land in
layer ``h+1``, so the state graph is acyclic by construction. The last layer
has no outgoing transitions; the value beyond the horizon is zero.

Tables (Q-values, uncertainties, policies) are lists with one ``(S_h, A)``
array per layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

PROB_ATOL = 1e-12


class Step(NamedTuple):
    h: int
    s: int
    a: int
    r: float
    s_next: int | None


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent, reproducible stream for ``(seed, *keys)``.

    Streams for distinct key tuples are statistically independent, so e.g.
    ``make_rng(seed, experiment_id, episode)`` can be created in any order or
    on any worker.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LayeredMdp:
    """Ground-truth finite-horizon MDP laid out as a DAG of layers.

    ``transitions[h]`` has shape ``(S_h, A, S_{h+1})`` for ``h < H-1``;
    ``mean_rewards[h]``, ``reward_noise[h]`` and ``valid_actions[h]`` have shape
    ``(S_h, A)``. ``reward_noise`` is the standard deviation of the Gaussian
    reward noise. ``valid_actions`` marks the actions an agent may choose; the
    dynamics of invalid actions are still defined but never used by a valid
    policy.
    """

    transitions: tuple
    mean_rewards: tuple
    reward_noise: tuple
    r_max: float
    initial: np.ndarray
    valid_actions: tuple

    def __init__(self, transitions, mean_rewards, reward_noise=0.0, r_max=None,
                 initial=None, valid_actions=None):
        mean_rewards = tuple(_frozen(m) for m in mean_rewards)
        if not mean_rewards:
            raise ValueError("horizon must be at least 1")
        H = len(mean_rewards)
        A = mean_rewards[0].shape[1]
        sizes = [m.shape[0] for m in mean_rewards]
        for h, m in enumerate(mean_rewards):
            if m.ndim != 2 or m.shape[1] != A or m.shape[0] < 1:
                raise ValueError(f"mean_rewards[{h}] must have shape (S_h, {A})")

        transitions = tuple(_frozen(p) for p in transitions)
        if len(transitions) != H - 1:
            raise ValueError(f"expected {H - 1} transition layers, got {len(transitions)}")
        for h, p in enumerate(transitions):
            if p.shape != (sizes[h], A, sizes[h + 1]):
                raise ValueError(
                    f"transitions[{h}] has shape {p.shape}, expected {(sizes[h], A, sizes[h + 1])}")
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_ATOL):
                raise ValueError(f"transitions[{h}] rows must be probability vectors")

        if np.isscalar(reward_noise):
            reward_noise = [np.full((n, A), float(reward_noise)) for n in sizes]
        reward_noise = tuple(_frozen(z) for z in reward_noise)
        if [z.shape for z in reward_noise] != [m.shape for m in mean_rewards]:
            raise ValueError("reward_noise shape does not match mean_rewards")
        if any(np.any(z < 0) for z in reward_noise):
            raise ValueError("reward_noise must be nonnegative")

        if r_max is None:
            r_max = max(float(np.max(np.abs(m))) for m in mean_rewards)
        r_max = float(r_max)
        if r_max <= 0:
            raise ValueError("r_max must be positive")
        if any(np.any(np.abs(m) > r_max) for m in mean_rewards):
            raise ValueError("mean rewards exceed r_max")

        if initial is None:
            initial = np.zeros(sizes[0])
            initial[0] = 1.0
        initial = _frozen(initial)
        if initial.shape != (sizes[0],) or np.any(initial < 0) or abs(initial.sum() - 1) > PROB_ATOL:
            raise ValueError("initial must be a probability vector over layer 0")

        if valid_actions is None:
            valid_actions = [np.ones((n, A), dtype=bool) for n in sizes]
        valid_actions = tuple(_frozen(v, dtype=bool) for v in valid_actions)
        if [v.shape for v in valid_actions] != [m.shape for m in mean_rewards]:
            raise ValueError("valid_actions shape does not match mean_rewards")
        if any(not np.all(v.any(axis=1)) for v in valid_actions):
            raise ValueError("every state needs at least one valid action")

        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "mean_rewards", mean_rewards)
        object.__setattr__(self, "reward_noise", reward_noise)
        object.__setattr__(self, "r_max", r_max)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "valid_actions", valid_actions)
        object.__setattr__(self, "_cum_transitions", tuple(np.cumsum(p, axis=-1) for p in transitions))
        object.__setattr__(self, "_cum_initial", np.cumsum(initial))

    @property
    def horizon(self) -> int:
        return len(self.mean_rewards)

    @property
    def layer_sizes(self) -> list[int]:
        return [m.shape[0] for m in self.mean_rewards]

    @property
    def n_actions(self) -> int:
        return self.mean_rewards[0].shape[1]

    def support(self) -> list[np.ndarray]:
        """Boolean masks of the reachable next states, per layer."""
        return [p > 0 for p in self.transitions]

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "layers": self.layer_sizes,
            "actions": self.n_actions,
            "transitions": [p.tolist() for p in self.transitions],
            "mean_rewards": [m.tolist() for m in self.mean_rewards],
            "reward_noise": [z.tolist() for z in self.reward_noise],
            "r_max": self.r_max,
            "initial": self.initial.tolist(),
            "valid_actions": [v.tolist() for v in self.valid_actions],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LayeredMdp":
        mdp = cls(
            transitions=doc["transitions"],
            mean_rewards=doc["mean_rewards"],
            reward_noise=doc.get("reward_noise", 0.0),
            r_max=doc.get("r_max"),
            initial=doc.get("initial"),
            valid_actions=doc.get("valid_actions"),
        )
        if "horizon" in doc and doc["horizon"] != mdp.horizon:
            raise ValueError("horizon does not match the number of reward layers")
        if "layers" in doc and list(doc["layers"]) != mdp.layer_sizes:
            raise ValueError("layers do not match the reward arrays")
        if "actions" in doc and doc["actions"] != mdp.n_actions:
            raise ValueError("actions does not match the reward arrays")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LayeredMdp":
        return cls.from_dict(json.loads(text))


def unroll(transitions, mean_rewards, horizon: int, reward_noise=0.0, r_max=None,
           initial=None) -> LayeredMdp:
    """Unroll a stationary MDP ``P[s, a, s']``, ``R[s, a]`` into ``horizon`` layers."""
    P = np.asarray(transitions, dtype=float)
    R = np.asarray(mean_rewards, dtype=float)
    noise = reward_noise if np.isscalar(reward_noise) else [np.asarray(reward_noise, float)] * horizon
    return LayeredMdp(
        transitions=[P] * (horizon - 1),
        mean_rewards=[R] * horizon,
        reward_noise=noise,
        r_max=r_max,
        initial=initial,
    )


def validate_policy(mdp: LayeredMdp, policy: Sequence[np.ndarray]) -> None:
    if len(policy) != mdp.horizon:
        raise ValueError(f"policy has {len(policy)} layers, MDP has {mdp.horizon}")
    for h, (pi, m) in enumerate(zip(policy, mdp.mean_rewards)):
        pi = np.asarray(pi)
        if pi.shape != m.shape:
            raise ValueError(f"policy[{h}] has shape {pi.shape}, expected {m.shape}")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > PROB_ATOL):
            raise ValueError(f"policy[{h}] rows must be probability vectors")


def uniform_policy(mdp: LayeredMdp) -> list[np.ndarray]:
    return [v / v.sum(axis=1, keepdims=True) for v in mdp.valid_actions]


def deterministic_policy(actions: Sequence[np.ndarray], n_actions: int) -> list[np.ndarray]:
    """One-hot policy tables from per-layer arrays of chosen actions."""
    return [np.eye(n_actions)[np.asarray(a, dtype=int)] for a in actions]


def backward_induction(local, transitions, policy, discount: float = 1.0) -> list[np.ndarray]:
    """Solve ``X^h = local^h + discount * P^h (sum_a' pi^{h+1} X^{h+1})`` with ``X^{H+1} = 0``.

    This one linear recursion covers policy evaluation, posterior-mean Q-values,
    the uncertainty Bellman equation and accumulated exploration bonuses.
    """
    H = len(local)
    out = [None] * H
    out[H - 1] = np.array(local[H - 1], dtype=float)
    for h in range(H - 2, -1, -1):
        v_next = (policy[h + 1] * out[h + 1]).sum(axis=1)
        out[h] = local[h] + discount * (transitions[h] @ v_next)
    return out


def bellman_residual(values, local, transitions, policy, discount: float = 1.0) -> float:
    """Max absolute residual of one application of the backup to ``values``."""
    H = len(values)
    worst = float(np.max(np.abs(values[H - 1] - local[H - 1])))
    for h in range(H - 1):
        v_next = (policy[h + 1] * values[h + 1]).sum(axis=1)
        backed = local[h] + discount * (transitions[h] @ v_next)
        worst = max(worst, float(np.max(np.abs(values[h] - backed))))
    return worst


def greedy_actions(q: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Row-wise argmax with lowest-index tie-breaking, restricted to valid actions."""
    if valid is not None:
        q = np.where(valid, q, -np.inf)
    return np.argmax(q, axis=-1)


def evaluate_policy(mdp: LayeredMdp, policy) -> list[np.ndarray]:
    validate_policy(mdp, policy)
    return backward_induction(mdp.mean_rewards, mdp.transitions, policy)


def policy_value(mdp: LayeredMdp, policy) -> float:
    """Expected total return ``J(pi)`` from the initial distribution."""
    q = evaluate_policy(mdp, policy)
    return float(mdp.initial @ (policy[0] * q[0]).sum(axis=1))


def optimal_q(mdp: LayeredMdp) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Optimal Q-values and a greedy optimal policy by backward induction."""
    return optimal_q_tables(mdp.mean_rewards, mdp.transitions, mdp.valid_actions)


def optimal_q_tables(rewards, transitions, valid):
    H = len(rewards)
    A = rewards[0].shape[1]
    eye = np.eye(A)
    q = [None] * H
    pi = [None] * H
    q[H - 1] = np.array(rewards[H - 1], dtype=float)
    pi[H - 1] = eye[greedy_actions(q[H - 1], valid[H - 1])]
    for h in range(H - 2, -1, -1):
        v_next = (pi[h + 1] * q[h + 1]).sum(axis=1)
        q[h] = rewards[h] + transitions[h] @ v_next
        pi[h] = eye[greedy_actions(q[h], valid[h])]
    return q, pi


def optimal_return(mdp: LayeredMdp) -> float:
    q, pi = optimal_q(mdp)
    return float(mdp.initial @ (pi[0] * q[0]).sum(axis=1))


def q_max(mdp: LayeredMdp) -> float:
    return mdp.horizon * mdp.r_max


def _draw(cum: np.ndarray, rng: np.random.Generator) -> int:
    # inverse-CDF draw from a cumulative row; much cheaper than rng.choice
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, len(cum) - 1)


def step_env(mdp: LayeredMdp, h: int, s: int, a: int, rng: np.random.Generator):
    """Reward and next state for taking ``a`` at ``(h, s)``."""
    r = mdp.mean_rewards[h][s, a]
    noise = mdp.reward_noise[h][s, a]
    if noise > 0:
        r = r + noise * rng.standard_normal()
    s_next = _draw(mdp._cum_transitions[h][s, a], rng) if h < mdp.horizon - 1 else None
    return float(r), s_next


def sample_initial(mdp: LayeredMdp, rng: np.random.Generator) -> int:
    return _draw(mdp._cum_initial, rng)


def sample_episode(mdp: LayeredMdp, policy, rng: np.random.Generator) -> list[Step]:
    s = sample_initial(mdp, rng)
    steps = []
    for h in range(mdp.horizon):
        a = _draw(np.cumsum(policy[h][s]), rng)
        r, s_next = step_env(mdp, h, s, a, rng)
        steps.append(Step(h, s, a, r, s_next))
        s = s_next
    return steps
