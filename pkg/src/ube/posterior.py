"""Conjugate posteriors over mean rewards and transitions.

Rewards: Gaussian likelihood with known noise precision ``tau`` and a Gaussian
prior on the mean. Transitions: categorical likelihood with a Dirichlet prior
whose support is the set of reachable next states; unreachable states carry a
structural zero concentration and never contribute moments.

A precision of ``inf`` means the quantity is known exactly (zero-noise rewards
or a point-mass prior). A prior precision of ``0`` is the improper flat prior.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mdp import LayeredMdp, backward_induction


@dataclass
class SampledMdp:
    mean_rewards: list
    transitions: list


@dataclass
class PosteriorStats:
    mean_reward: list
    reward_variance: list
    mean_transition: list
    transition_variance: list
    # padded (H, S_max, A[, S_max]) arrays behind the per-layer views, if any
    stacked: tuple | None = None

    def __iter__(self):
        return iter((self.mean_reward, self.reward_variance,
                     self.mean_transition, self.transition_variance))


def _as_layers(value, shapes):
    if np.isscalar(value):
        return [np.full(shape, float(value)) for shape in shapes]
    layers = [np.array(v, dtype=float) for v in value]
    if [v.shape for v in layers] != list(shapes):
        raise ValueError(f"expected layer shapes {list(shapes)}, got {[v.shape for v in layers]}")
    return layers


def gaussian_posterior(prior_mean, prior_precision, noise_precision, reward_sum, counts):
    """Posterior mean and precision of a Gaussian mean with known noise."""
    prior_mean = np.asarray(prior_mean, float)
    prior_precision = np.asarray(prior_precision, float)
    tau = np.asarray(noise_precision, float)
    n = np.asarray(counts, float)
    s = np.asarray(reward_sum, float)
    seen = n > 0
    data_precision = np.where(seen, n * np.where(seen, tau, 0.0), 0.0)
    precision = prior_precision + data_precision
    with np.errstate(all="ignore"):
        finite = (prior_precision * prior_mean + np.where(seen, tau, 0.0) * s) / precision
        sample_mean = s / np.where(seen, n, 1.0)
    mean = np.where(np.isinf(tau) & seen, sample_mean, finite)
    mean = np.where(np.isinf(prior_precision) | (precision == 0), prior_mean, mean)
    return mean, precision


def dirichlet_moments(alpha):
    """Per-entry mean and variance of a Dirichlet along the last axis."""
    alpha = np.asarray(alpha, float)
    total = alpha.sum(axis=-1, keepdims=True)
    mean = alpha / total
    var = alpha * (total - alpha) / (total ** 2 * (total + 1.0))
    return mean, var


class BeliefState:
    """Sufficient statistics of the posterior for every ``(h, s, a)``.

    The public per-layer arrays (shape ``(S_h, A)``, or ``(S_h, A, S_{h+1})``
    for the first ``H-1`` Dirichlet layers) are views into padded
    ``(H, S_max, A[, S_max])`` arrays, so moments can be computed for all
    layers in one vectorised pass. Padding entries are known-zero rewards and
    point-mass transitions; they never leak into the views.
    """

    def __init__(self, prior_mean, prior_precision, noise_precision, alpha_prior,
                 reward_sum=None, counts=None, transition_counts=None):
        shapes = [np.shape(t) for t in noise_precision]
        H = len(shapes)
        A = shapes[0][1]
        sizes = [sh[0] for sh in shapes]
        S = max(sizes)
        self._sizes = sizes
        self._prior_mean = np.zeros((H, S, A))
        self._prior_precision = np.full((H, S, A), np.inf)
        self._noise_precision = np.full((H, S, A), np.inf)
        self._reward_sum = np.zeros((H, S, A))
        self._counts = np.zeros((H, S, A), dtype=np.int64)
        self._alpha_prior = np.zeros((max(H - 1, 0), S, A, S))
        self._alpha_prior[:, :, :, 0] = 1.0
        self._transition_counts = np.zeros_like(self._alpha_prior)

        def views(arr):
            return [arr[h, :n] for h, n in enumerate(sizes)]

        def dviews(arr):
            return [arr[h, :sizes[h], :, :sizes[h + 1]] for h in range(H - 1)]

        self.prior_mean = views(self._prior_mean)
        self.prior_precision = views(self._prior_precision)
        self.noise_precision = views(self._noise_precision)
        self.reward_sum = views(self._reward_sum)
        self.counts = views(self._counts)
        self.alpha_prior = dviews(self._alpha_prior)
        self.transition_counts = dviews(self._transition_counts)

        for dst, src in ((self.prior_mean, prior_mean), (self.prior_precision, prior_precision),
                         (self.noise_precision, noise_precision),
                         (self.reward_sum, 0.0 if reward_sum is None else reward_sum)):
            for d, v in zip(dst, _as_layers(src, shapes)):
                d[...] = v
        if counts is not None:
            for d, v in zip(self.counts, _as_layers(counts, shapes)):
                d[...] = v
        if len(alpha_prior) != H - 1:
            raise ValueError(f"expected {H - 1} Dirichlet layers")
        for h, a in enumerate(alpha_prior):
            a = np.asarray(a, dtype=float)
            if a.shape != shapes[h] + (sizes[h + 1],):
                raise ValueError(f"alpha_prior[{h}] has the wrong shape {a.shape}")
            if np.any(a < 0) or not np.all(a.sum(axis=-1) > 0):
                raise ValueError("Dirichlet concentrations must be >= 0 with nonempty support")
            self._alpha_prior[h, :sizes[h], :, 0] = 0.0
            self.alpha_prior[h][...] = a
        if transition_counts is not None:
            for d, v in zip(self.transition_counts, transition_counts):
                d[...] = v
        if np.any(self._prior_precision < 0) or np.any(self._noise_precision < 0):
            raise ValueError("precisions must be nonnegative")

    @classmethod
    def from_mdp(cls, mdp: LayeredMdp, prior_mean=0.0, prior_pseudo_obs=1.0,
                 dirichlet_prior=1.0) -> "BeliefState":
        """Prior belief for an MDP with known noise levels and known support.

        The reward prior carries ``prior_pseudo_obs`` pseudo-observations, so its
        precision is ``prior_pseudo_obs / sigma_r**2`` (infinite for noiseless
        rewards, i.e. such rewards are treated as known). Each reachable next
        state gets Dirichlet concentration ``dirichlet_prior``.
        """
        with np.errstate(divide="ignore"):
            tau = [1.0 / z ** 2 for z in mdp.reward_noise]
        rho = [np.where(np.isinf(t), np.inf if prior_pseudo_obs > 0 else 0.0, prior_pseudo_obs * t)
               for t in tau]
        alpha = [np.where(p > 0, float(dirichlet_prior), 0.0) for p in mdp.transitions]
        return cls(prior_mean, rho, tau, alpha)

    @property
    def horizon(self) -> int:
        return len(self._sizes)

    @property
    def layer_sizes(self) -> list[int]:
        return list(self._sizes)

    @property
    def n_actions(self) -> int:
        return self.counts[0].shape[1]

    @property
    def alpha(self) -> list[np.ndarray]:
        return [a + c for a, c in zip(self.alpha_prior, self.transition_counts)]

    def update(self, h: int, s: int, a: int, r: float, s_next: int | None = None) -> None:
        """Absorb one observed transition in place."""
        self.counts[h][s, a] += 1
        self.reward_sum[h][s, a] += r
        if s_next is not None:
            if h >= self.horizon - 1:
                raise IndexError("the last layer has no next state")
            self.transition_counts[h][s, a, s_next] += 1.0

    def observe(self, steps) -> None:
        for step in steps:
            self.update(step.h, step.s, step.a, step.r, step.s_next)

    def copy(self) -> "BeliefState":
        return type(self)(self.prior_mean, self.prior_precision, self.noise_precision,
                          self.alpha_prior, self.reward_sum, self.counts, self.transition_counts)

    def reward_posterior(self):
        """Per-layer posterior (mean, precision) of the mean rewards."""
        mean, precision = gaussian_posterior(self._prior_mean, self._prior_precision,
                                             self._noise_precision, self._reward_sum, self._counts)
        return ([mean[h, :n] for h, n in enumerate(self._sizes)],
                [precision[h, :n] for h, n in enumerate(self._sizes)])

    def to_dict(self) -> dict:
        return {
            "prior_mean": [x.tolist() for x in self.prior_mean],
            "prior_precision": [x.tolist() for x in self.prior_precision],
            "noise_precision": [x.tolist() for x in self.noise_precision],
            "alpha_prior": [x.tolist() for x in self.alpha_prior],
            "reward_sum": [x.tolist() for x in self.reward_sum],
            "counts": [x.tolist() for x in self.counts],
            "transition_counts": [x.tolist() for x in self.transition_counts],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BeliefState":
        return cls(doc["prior_mean"], doc["prior_precision"], doc["noise_precision"],
                   doc["alpha_prior"], doc.get("reward_sum"), doc.get("counts"),
                   doc.get("transition_counts"))

    def to_json(self) -> str:
        # infinite precisions are written as the JSON extension token `Infinity`
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BeliefState":
        return cls.from_dict(json.loads(text))


def update(belief: BeliefState, h, s, a, r, s_next=None) -> BeliefState:
    belief.update(h, s, a, r, s_next)
    return belief


def posterior_stats(belief: BeliefState) -> PosteriorStats:
    mean, precision = gaussian_posterior(belief._prior_mean, belief._prior_precision,
                                         belief._noise_precision, belief._reward_sum, belief._counts)
    with np.errstate(divide="ignore"):
        variance = 1.0 / precision
    p_mean, p_var = dirichlet_moments(belief._alpha_prior + belief._transition_counts)
    sizes = belief._sizes
    H = len(sizes)
    stats = PosteriorStats(
        [mean[h, :n] for h, n in enumerate(sizes)],
        [variance[h, :n] for h, n in enumerate(sizes)],
        [p_mean[h, :sizes[h], :, :sizes[h + 1]] for h in range(H - 1)],
        [p_var[h, :sizes[h], :, :sizes[h + 1]] for h in range(H - 1)],
    )
    stats.stacked = (mean, variance, p_mean, p_var)
    return stats


def sample_mdp(belief: BeliefState, rng: np.random.Generator) -> SampledMdp:
    batch = sample_mdps(belief, rng, 1)
    return SampledMdp([r[0] for r in batch.mean_rewards], [p[0] for p in batch.transitions])


def sample_mdps(belief: BeliefState, rng: np.random.Generator, size: int) -> SampledMdp:
    """Draw ``size`` MDPs at once; every array gains a leading sample axis."""
    means, precisions = belief.reward_posterior()
    rewards = []
    for m, p in zip(means, precisions):
        with np.errstate(divide="ignore"):
            std = 1.0 / np.sqrt(p)
        z = rng.standard_normal((size,) + m.shape)
        rewards.append(m + np.where(std > 0, std, 0.0) * z)
    transitions = []
    for alpha in belief.alpha:
        g = rng.standard_gamma(np.broadcast_to(alpha, (size,) + alpha.shape))
        total = g.sum(axis=-1, keepdims=True)
        # tiny concentrations can underflow every gamma draw; fall back to the mean
        bad = total[..., 0] <= 0
        if np.any(bad):
            g[bad] = np.broadcast_to(alpha, g.shape)[bad]
            total = g.sum(axis=-1, keepdims=True)
        transitions.append(g / total)
    return SampledMdp(rewards, transitions)


def posterior_mean_q(belief: BeliefState, policy) -> list[np.ndarray]:
    stats = posterior_stats(belief)
    return backward_induction(stats.mean_reward, stats.mean_transition, policy)
