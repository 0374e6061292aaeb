"""Exploration agents for layered MDPs and regret accounting.

Every agent follows the same episode protocol:

* ``begin_episode(t, rng)`` freezes the agent's decision rule for episode ``t``
  and returns it as per-layer action-probability tables, so the expected
  return of the executed rule can be computed exactly on the true MDP;
* ``act(h, s, rng)`` draws an action from that rule;
* ``end_episode(steps)`` learns from the finished trajectory.

Learned agents apply their updates in trajectory order at the end of the
episode. On a layered MDP with one-hot features no state is revisited within
an episode, so this is identical to updating online after every step.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .linear import PrecisionState, layered_one_hot
from .mdp import (
    LayeredMdp,
    Step,
    backward_induction,
    greedy_actions,
    optimal_q_tables,
    optimal_return,
    sample_initial,
    step_env,
)
from .posterior import BeliefState, posterior_stats, sample_mdp
from .solver import (
    branching_factor,
    greedy_mean_and_ube,
    local_uncertainty,
    per_layer_q_max,
    tabular_local_bound,
)

VARIANTS = (
    "ube_exact",
    "ube_learned_1step",
    "ube_learned_nstep",
    "count_bonus",
    "epsilon_greedy",
    "posterior_sampling",
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


@dataclass(frozen=True)
class AgentSpec:
    variant: str
    name: str | None = None
    beta: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal: int = 100
    n_step: int = 1
    gamma: float = 1.0
    lr: float = 0.1
    lr_decay: float = 0.0
    q_lr: float = 0.1
    u_init: float = 1.0
    precision_prior: float = 1.0
    nu_scale: float = 1.0
    prior_pseudo_obs: float = 1.0
    dirichlet_prior: float = 1.0
    local: str = "exact"
    per_layer_qmax: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown agent variant {self.variant!r}")
        thompson = self.variant.startswith("ube")
        if self.beta < 0 or (thompson and self.beta == 0):
            raise ValueError("beta must be positive (nonnegative for count_bonus)")
        if not (0 <= self.epsilon_end <= 1 and 0 <= self.epsilon_start <= 1):
            raise ValueError("epsilon must lie in [0, 1]")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.local not in ("exact", "count_bound"):
            raise ValueError("local must be 'exact' or 'count_bound'")
        if self.name is None:
            object.__setattr__(self, "name", self.variant)

    @classmethod
    def from_dict(cls, doc: dict) -> "AgentSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown agent fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "AgentSpec":
        return replace(self, **changes)


# -- action selection ---------------------------------------------------------

def thompson_act(q_row, u_row, beta: float, rng: np.random.Generator, valid=None) -> int:
    """``argmax_b (q_b + beta * zeta_b * sqrt(u_b))`` with fresh ``zeta ~ N(0, I)``."""
    q_row = np.asarray(q_row, float)
    zeta = rng.standard_normal(q_row.shape[0])
    vals = q_row + beta * zeta * np.sqrt(np.maximum(u_row, 0.0))
    if valid is not None:
        vals = np.where(valid, vals, -np.inf)
    return int(np.argmax(vals))


def count_bonus_act(q_row, bonus_row, beta: float, t: int, valid=None) -> int:
    """``argmax_i (q_i + beta * log(t) * bonus_i)``."""
    if t < 1:
        raise ValueError("episode index t must be >= 1")
    vals = np.asarray(q_row, float) + beta * np.log(t) * np.asarray(bonus_row, float)
    if valid is not None:
        vals = np.where(valid, vals, -np.inf)
    return int(np.argmax(vals))


def _thompson_row(q, std, valid):
    idx = np.flatnonzero(valid)
    probs = np.zeros(q.shape[0])
    qv, sv = q[idx], std[idx]
    det = sv == 0
    stoch = np.flatnonzero(~det)
    if stoch.size == 0:
        probs[idx[np.argmax(qv)]] = 1.0
        return probs
    if stoch.size == 1 and not det.any():
        probs[idx[stoch[0]]] = 1.0
        return probs
    d_star = qv[det].max() if det.any() else -np.inf
    p = np.zeros(idx.size)
    for a in stoch:
        lower = float(ndtr((d_star - qv[a]) / sv[a])) if np.isfinite(d_star) else 0.0
        if lower >= 1.0:
            continue
        # integrate over the CDF variable w = Phi(z) on (lower, 1)
        w = lower + (1.0 - lower) * (_GL_NODES + 1.0) / 2.0
        vals = qv[a] + sv[a] * ndtri(w)
        f = np.ones_like(vals)
        for b in stoch:
            if b != a:
                f *= ndtr((vals - qv[b]) / sv[b])
        p[a] = (1.0 - lower) / 2.0 * np.dot(_GL_WEIGHTS, f)
    if det.any():
        best_det = np.flatnonzero(det)[np.argmax(qv[det])]
        p[best_det] = max(0.0, 1.0 - p.sum())
    probs[idx] = p / p.sum()
    return probs


def thompson_probabilities(q, u, beta: float = 1.0, valid=None) -> np.ndarray:
    """Exact action probabilities of :func:`thompson_act` for each row of ``q``.

    Rows with two candidate actions use the closed form
    ``P(i) = Phi((q_i - q_j) / sqrt(s_i^2 + s_j^2))``; larger rows use
    64-point Gauss-Legendre quadrature over one Gaussian.
    """
    q = np.atleast_2d(np.asarray(q, float))
    std = beta * np.sqrt(np.maximum(np.atleast_2d(u), 0.0))
    valid = np.ones(q.shape, bool) if valid is None else np.atleast_2d(valid)
    out = np.zeros(q.shape)
    n_valid = valid.sum(axis=1)
    single = n_valid == 1
    out[single] = valid[single]
    pair = np.flatnonzero(n_valid == 2)
    if pair.size:
        cols = np.argsort(~valid[pair], axis=1, kind="stable")[:, :2]
        rows = pair[:, None]
        qi, qj = q[rows, cols[:, :1]], q[rows, cols[:, 1:]]
        si, sj = std[rows, cols[:, :1]], std[rows, cols[:, 1:]]
        scale = np.sqrt(si ** 2 + sj ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            p_first = np.where(scale > 0, ndtr((qi - qj) / scale), (qi >= qj).astype(float))
        out[rows, cols[:, :1]] = p_first
        out[rows, cols[:, 1:]] = 1.0 - p_first
    for r in np.flatnonzero(n_valid > 2):
        out[r] = _thompson_row(q[r], std[r], valid[r])
    return out


# -- value and uncertainty backups ----------------------------------------------

def exp_bonus(belief: BeliefState, policy, sigma_r=None, stats=None) -> list[np.ndarray]:
    """Standard-deviation bonuses ``sigma_r / sqrt(n)`` accumulated along ``policy``.

    ``sigma_r`` defaults to the per-entry noise level known to the belief.
    Unvisited pairs count as visited once.
    """
    if stats is None:
        stats = posterior_stats(belief)
    local = _bonus_local(belief, sigma_r)
    return backward_induction(local, stats.mean_transition, policy)


def _bonus_local(belief, sigma_r=None):
    out = []
    for h, n in enumerate(belief.counts):
        if sigma_r is None:
            with np.errstate(divide="ignore"):
                sig = 1.0 / np.sqrt(belief.noise_precision[h])
        else:
            sig = np.broadcast_to(np.asarray(sigma_r, float), n.shape)
        out.append(sig / np.sqrt(np.maximum(n, 1)))
    return out


def learned_ube_step(u, h, s, a, s_next, a_next, nu_hat: float, gamma: float, lr: float,
                     terminal: bool = False):
    """One SARSA-style TD update of ``u[h][s, a]`` toward ``nu_hat + gamma^2 u[h+1][s', a']``."""
    target = nu_hat if terminal else nu_hat + gamma ** 2 * u[h + 1][s_next, a_next]
    u[h][s, a] = max(u[h][s, a] + lr * (target - u[h][s, a]), 0.0)
    return u


def learned_ube_nstep(u, window, nu_seq, gamma: float, lr: float, bootstrap=None):
    """TD update of ``u`` at ``window[0]`` with an ``m``-step target.

    ``window`` lists the ``(h, s, a)`` visited, ``nu_seq`` their local
    uncertainties; ``bootstrap`` is the ``(h, s, a)`` following the window, or
    ``None`` when the episode ended inside it.
    """
    if len(window) != len(nu_seq) or not window:
        raise ValueError("window and nu_seq must be nonempty and of equal length")
    g2 = gamma ** 2
    m = len(window)
    target = float(sum(g2 ** k * nu for k, nu in enumerate(nu_seq)))
    if bootstrap is not None:
        bh, bs, ba = bootstrap
        target += g2 ** m * u[bh][bs, ba]
    h, s, a = window[0]
    u[h][s, a] = max(u[h][s, a] + lr * (target - u[h][s, a]), 0.0)
    return u


def td_uncertainty(nu, policy, transitions, initial, steps: int, rng: np.random.Generator,
                   n_step: int = 1, gamma: float = 1.0, lr: float = 1.0, lr_decay: float = 1.0,
                   u_init: float = 0.0) -> list[np.ndarray]:
    """Learn ``u`` for a fixed policy by TD on simulated episodes.

    Episodes follow ``policy`` through ``transitions`` from ``initial``; every
    visited ``(h, s, a)`` is updated with the ``n_step`` target built from the
    given local uncertainties ``nu`` and step size ``lr / (1 + visits)**lr_decay``.
    Runs until at least ``steps`` transitions have been used. With
    ``lr_decay = 1`` and ``lr = 1`` each entry is a running average of its
    targets, so the result converges to :func:`ube.solver.solve_ube`.
    """
    H = len(nu)
    u = [np.full(np.shape(x), float(u_init)) for x in nu]
    visits = [np.zeros(np.shape(x), dtype=np.int64) for x in nu]
    cum_pi = [np.cumsum(p, axis=1) for p in policy]
    cum_p = [np.cumsum(p, axis=-1) for p in transitions]
    cum_init = np.cumsum(initial)

    def draw(cum):
        return min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cum) - 1)

    done = 0
    while done < steps:
        s = draw(cum_init)
        path = []
        for h in range(H):
            a = draw(cum_pi[h][s])
            path.append((h, s, a))
            if h < H - 1:
                s = draw(cum_p[h][s, a])
        for k, (h, s, a) in enumerate(path):
            m = min(n_step, H - k)
            window = path[k:k + m]
            boot = path[k + m] if k + m < H else None
            step = lr / (1.0 + visits[h][s, a]) ** lr_decay
            learned_ube_nstep(u, window, [nu[x][y, z] for x, y, z in window], gamma, step, boot)
            visits[h][s, a] += 1
        done += H
    return u


# -- agents ---------------------------------------------------------------------

class Agent:
    def __init__(self, spec: AgentSpec, env: LayeredMdp):
        self.spec = spec
        self.valid = env.valid_actions
        self.n_actions = env.n_actions
        self._eye = np.eye(env.n_actions)

    def begin_episode(self, t: int, rng: np.random.Generator) -> list[np.ndarray]:
        raise NotImplementedError

    def act(self, h: int, s: int, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def end_episode(self, steps) -> None:
        raise NotImplementedError


class _BeliefAgent(Agent):
    def __init__(self, spec, env):
        super().__init__(spec, env)
        self.belief = BeliefState.from_mdp(env, prior_pseudo_obs=spec.prior_pseudo_obs,
                                           dirichlet_prior=spec.dirichlet_prior)
        self.q_max = per_layer_q_max(env) if spec.per_layer_qmax else env.horizon * env.r_max

    def end_episode(self, steps):
        self.belief.observe(steps)

    def local_uncertainty(self, stats):
        if self.spec.local == "count_bound":
            noise = [1.0 / np.sqrt(t) for t in self.belief.noise_precision]
            qm = np.max(self.q_max)
            return tabular_local_bound(self.belief.counts, noise, qm, branching_factor(self.belief))
        return local_uncertainty(self.belief, self.q_max, stats)


def _split_rows(flat, sizes):
    out, start = [], 0
    for n in sizes:
        out.append(flat[start:start + n])
        start += n
    return out


class _ThompsonMixin:
    """Thompson decisions for a whole episode from per-layer ``q`` and ``u`` tables.

    In a layered MDP each state is visited at most once per episode, so drawing
    fresh perturbations for every state up front is the same as drawing them
    at decision time.
    """

    def _thompson_rule(self, q, u, rng):
        sizes = [x.shape[0] for x in q]
        qf, uf, vf = np.concatenate(q), np.concatenate(u), np.concatenate(self.valid)
        probs = thompson_probabilities(qf, uf, self.spec.beta, vf)
        zeta = rng.standard_normal(qf.shape)
        vals = np.where(vf, qf + self.spec.beta * zeta * np.sqrt(np.maximum(uf, 0.0)), -np.inf)
        self._actions = _split_rows(np.argmax(vals, axis=1), sizes)
        return _split_rows(probs, sizes)

    def act(self, h, s, rng):
        return int(self._actions[h][s])


class UbeExactAgent(_ThompsonMixin, _BeliefAgent):
    """Thompson sampling from ``N(Q_mean, diag(u))`` with ``u`` the exact UBE solution."""

    def begin_episode(self, t, rng):
        stats = posterior_stats(self.belief)
        nu = self.local_uncertainty(stats)
        self.q, self.u, _ = greedy_mean_and_ube(stats.mean_reward, stats.mean_transition, nu,
                                                self.valid, self.spec.gamma)
        return self._thompson_rule(self.q, self.u, rng)


class CountBonusAgent(_BeliefAgent):
    """Greedy on ``Q_mean + beta * log(t) * ExpBonus`` (optimistic backup)."""

    def begin_episode(self, t, rng):
        self.t = t
        stats = posterior_stats(self.belief)
        local_b = _bonus_local(self.belief)
        c = self.spec.beta * np.log(t)
        H = self.belief.horizon
        q, b, pi = [None] * H, [None] * H, [None] * H
        q[H - 1] = stats.mean_reward[H - 1]
        b[H - 1] = local_b[H - 1]
        pi[H - 1] = self._eye[greedy_actions(q[H - 1] + c * b[H - 1], self.valid[H - 1])]
        for h in range(H - 2, -1, -1):
            P = stats.mean_transition[h]
            q[h] = stats.mean_reward[h] + P @ (pi[h + 1] * q[h + 1]).sum(axis=1)
            b[h] = local_b[h] + P @ (pi[h + 1] * b[h + 1]).sum(axis=1)
            pi[h] = self._eye[greedy_actions(q[h] + c * b[h], self.valid[h])]
        self.q, self.bonus = q, b
        return pi

    def act(self, h, s, rng):
        return count_bonus_act(self.q[h][s], self.bonus[h][s], self.spec.beta, self.t,
                               self.valid[h][s])


class EpsilonGreedyAgent(_BeliefAgent):
    """Greedy on the posterior-mean optimal Q, with linearly annealed epsilon."""

    def epsilon(self, t):
        s = self.spec
        frac = min(max(t - 1, 0) / max(s.epsilon_anneal, 1), 1.0)
        return s.epsilon_start + frac * (s.epsilon_end - s.epsilon_start)

    def begin_episode(self, t, rng):
        stats = posterior_stats(self.belief)
        _, greedy = optimal_q_tables(stats.mean_reward, stats.mean_transition, self.valid)
        eps = self.epsilon(t)
        self.eps = eps
        self.greedy = [np.argmax(g, axis=1) for g in greedy]
        uniform = [v / v.sum(axis=1, keepdims=True) for v in self.valid]
        return [(1 - eps) * g + eps * un for g, un in zip(greedy, uniform)]

    def act(self, h, s, rng):
        if rng.random() < self.eps:
            return int(rng.choice(np.flatnonzero(self.valid[h][s])))
        return int(self.greedy[h][s])


class PosteriorSamplingAgent(_BeliefAgent):
    """Acts optimally for one MDP sampled from the posterior per episode."""

    def begin_episode(self, t, rng):
        sample = sample_mdp(self.belief, rng)
        _, pi = optimal_q_tables(sample.mean_rewards, sample.transitions, self.valid)
        self.actions = [np.argmax(p, axis=1) for p in pi]
        return pi

    def act(self, h, s, rng):
        return int(self.actions[h][s])


class LearnedUbeAgent(_ThompsonMixin, Agent):
    """Tabular stand-in for the learned-uncertainty agent.

    Q-values by one-step Q-learning; uncertainties by 1- or n-step SARSA TD
    toward ``phi^T Sigma_a phi`` local uncertainties from one-hot features;
    actions by Thompson sampling on ``(Q, u)``.
    """

    def __init__(self, spec, env):
        super().__init__(spec, env)
        sizes = env.layer_sizes
        A = env.n_actions
        self.q = [np.zeros((n, A)) for n in sizes]
        self.u = [np.full((n, A), float(spec.u_init)) for n in sizes]
        self.u_visits = [np.zeros((n, A), dtype=np.int64) for n in sizes]
        self.features = layered_one_hot(sizes)
        self.precision = PrecisionState(self.features.dim, A, spec.precision_prior)
        self.n_step = 1 if spec.variant == "ube_learned_1step" else spec.n_step

    def begin_episode(self, t, rng):
        return self._thompson_rule(self.q, self.u, rng)

    def _lr(self, h, s, a):
        return self.spec.lr / (1.0 + self.u_visits[h][s, a]) ** self.spec.lr_decay

    def end_episode(self, steps):
        spec = self.spec
        nu = []
        for st in steps:
            phi = self.features((st.h, st.s))
            nu.append(spec.nu_scale * self.precision.inverse_count(st.a, phi))
            self.precision.update(st.a, phi)
        T = len(steps)
        for k, st in enumerate(steps):
            m = min(self.n_step, T - k)
            window = [(x.h, x.s, x.a) for x in steps[k:k + m]]
            boot = (steps[k + m].h, steps[k + m].s, steps[k + m].a) if k + m < T else None
            learned_ube_nstep(self.u, window, nu[k:k + m], spec.gamma, self._lr(st.h, st.s, st.a), boot)
            self.u_visits[st.h][st.s, st.a] += 1
            if k + 1 < T:
                nxt = steps[k + 1]
                v_next = np.max(np.where(self.valid[nxt.h][nxt.s], self.q[nxt.h][nxt.s], -np.inf))
                target = st.r + spec.gamma * v_next
            else:
                target = st.r
            self.q[st.h][st.s, st.a] += spec.q_lr * (target - self.q[st.h][st.s, st.a])


_AGENTS = {
    "ube_exact": UbeExactAgent,
    "ube_learned_1step": LearnedUbeAgent,
    "ube_learned_nstep": LearnedUbeAgent,
    "count_bonus": CountBonusAgent,
    "epsilon_greedy": EpsilonGreedyAgent,
    "posterior_sampling": PosteriorSamplingAgent,
}


def make_agent(spec: AgentSpec, env: LayeredMdp) -> Agent:
    return _AGENTS[spec.variant](spec, env)


# -- regret accounting ------------------------------------------------------------

@dataclass
class RegretLedger:
    """Per-episode returns and regret against the optimal expected return.

    By default regret uses the exact expected return of the executed decision
    rule; with ``realized=True`` it uses the sampled episode return instead.
    """

    optimal: float
    realized: bool = False
    expected_returns: list = field(default_factory=list)
    realized_returns: list = field(default_factory=list)
    total: float = field(default=0.0, init=False)

    def record(self, expected: float, realized: float) -> float:
        """Append one episode; returns the running cumulative regret."""
        self.expected_returns.append(float(expected))
        self.realized_returns.append(float(realized))
        self.total += self.optimal - (float(realized) if self.realized else float(expected))
        return self.total

    @property
    def per_episode_regret(self) -> np.ndarray:
        ret = self.realized_returns if self.realized else self.expected_returns
        return self.optimal - np.asarray(ret, dtype=float)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_episode_regret)

    def __len__(self):
        return len(self.expected_returns)


@dataclass
class EpisodeRecord:
    episode: int
    expected_return: float
    realized_return: float
    regret: float
    cumulative_regret: float
    steps: list


def expected_return(env: LayeredMdp, policy) -> float:
    q = backward_induction(env.mean_rewards, env.transitions, policy)
    return float(env.initial @ (policy[0] * q[0]).sum(axis=1))


def run_episode(agent: Agent, env: LayeredMdp, ledger: RegretLedger, rng: np.random.Generator,
                t: int) -> EpisodeRecord:
    """Play episode ``t`` (1-based): act, observe, learn, and book regret."""
    rule = agent.begin_episode(t, rng)
    j = expected_return(env, rule)
    s = sample_initial(env, rng)
    steps = []
    for h in range(env.horizon):
        a = agent.act(h, s, rng)
        r, s_next = step_env(env, h, s, a, rng)
        steps.append(Step(h, s, a, r, s_next))
        s = s_next
    agent.end_episode(steps)
    realized = sum(st.r for st in steps)
    cum = ledger.record(j, realized)
    regret = ledger.optimal - (realized if ledger.realized else j)
    return EpisodeRecord(t, j, realized, regret, cum, steps)


def new_ledger(env: LayeredMdp, realized: bool = False) -> RegretLedger:
    return RegretLedger(optimal_return(env), realized)
