"""Monte-Carlo estimate of the posterior variance of Q-values.

Draws MDPs from the posterior, solves each one for a fixed policy and reports
per-``(h, s, a)`` sample moments. Used to check the UBE upper bound.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mdp import make_rng
from .posterior import BeliefState, posterior_stats, sample_mdps

SHARD_SIZE = 2048


@dataclass
class VarianceEstimate:
    mean: list
    variance: list
    std_error: list
    samples: int


@dataclass
class UpperBoundReport:
    passed: list
    max_violation: float
    n_violations: int
    n_checked: int
    slack_sigmas: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "n_checked": self.n_checked,
            "n_violations": self.n_violations,
            "max_violation": self.max_violation,
            "slack_sigmas": self.slack_sigmas,
            "passed": [p.tolist() for p in self.passed],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'layer':>5} {'checked':>8} {'violations':>10}"]
        for h, p in enumerate(self.passed):
            lines.append(f"{h:>5} {p.size:>8} {int(p.size - p.sum()):>10}")
        lines.append(f"max violation: {self.max_violation:.3e}  (slack {self.slack_sigmas} sigma)")
        return "\n".join(lines)


def sampled_q_values(rewards, transitions, policy) -> list[np.ndarray]:
    """Solve a batch of sampled MDPs (leading sample axis) for a fixed policy."""
    H = len(rewards)
    q = [None] * H
    q[H - 1] = rewards[H - 1]
    for h in range(H - 2, -1, -1):
        v_next = np.einsum("sa,msa->ms", policy[h + 1], q[h + 1])
        q[h] = rewards[h] + np.einsum("msat,mt->msa", transitions[h], v_next)
    return q


def _shard(belief, policy, seed, index, size):
    batch = sample_mdps(belief, make_rng(seed, index), size)
    return sampled_q_values(batch.mean_rewards, batch.transitions, policy)


def mc_posterior_variance(belief: BeliefState, policy, M: int, rng=None, seed: int | None = None,
                          workers: int = 1) -> VarianceEstimate:
    """Sample mean and unbiased variance of ``Q_hat`` over ``M`` posterior draws.

    Samples are generated in fixed-size shards, each with its own substream
    keyed by shard index, so the result is identical for any ``workers``.
    Pass either a ``seed`` or an ``rng`` (a seed is then drawn from it).
    """
    if M < 2:
        raise ValueError("need at least two samples")
    if seed is None:
        rng = rng if rng is not None else np.random.default_rng()
        seed = int(rng.integers(2 ** 63))
    sizes = [min(SHARD_SIZE, M - start) for start in range(0, M, SHARD_SIZE)]
    jobs = [(belief, policy, seed, i, n) for i, n in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            shards = list(pool.map(lambda j: _shard(*j), jobs))
    else:
        shards = [_shard(*j) for j in jobs]
    H = belief.horizon
    mean, var, se = [], [], []
    for h in range(H):
        q = np.concatenate([s[h] for s in shards], axis=0)
        m = q.mean(axis=0)
        v = q.var(axis=0, ddof=1)
        mean.append(m)
        var.append(v)
        se.append(v * np.sqrt(2.0 / (M - 1)))
    return VarianceEstimate(mean, var, se, M)


def check_upper_bound(u, est: VarianceEstimate, slack_sigmas: float = 5.0) -> UpperBoundReport:
    """Flag every entry where the MC variance exceeds ``u`` beyond the slack."""
    passed = []
    worst = -np.inf
    for h, (bound, v, se) in enumerate(zip(u, est.variance, est.std_error)):
        bound = np.asarray(bound, float)
        if bound.shape != v.shape:
            raise ValueError(f"layer {h}: bound shape {bound.shape} != estimate shape {v.shape}")
        excess = v - bound - slack_sigmas * se
        passed.append(excess <= 0)
        worst = max(worst, float(np.max(v - bound)))
    n_checked = sum(p.size for p in passed)
    n_bad = sum(int(p.size - p.sum()) for p in passed)
    return UpperBoundReport(passed, max(worst, 0.0), n_bad, n_checked, slack_sigmas)


@dataclass
class TrialSummary:
    trials: int
    samples: int
    slack_sigmas: float
    n_checked: int
    n_violations: int
    max_violation: float
    failed_trials: list

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_dict(self) -> dict:
        return {"ok": self.ok, "trials": self.trials, "samples": self.samples,
                "slack_sigmas": self.slack_sigmas, "n_checked": self.n_checked,
                "n_violations": self.n_violations, "max_violation": self.max_violation,
                "failed_trials": list(self.failed_trials)}

    def to_table(self) -> str:
        return "\n".join([
            f"trials            {self.trials}",
            f"samples / trial   {self.samples}",
            f"entries checked   {self.n_checked}",
            f"violations        {self.n_violations}  (slack {self.slack_sigmas} sigma)",
            f"max raw excess    {self.max_violation:.3e}",
        ])


def bound_trial(seed: int, trial: int, samples: int, slack_sigmas: float = 5.0) -> UpperBoundReport:
    """Random instance ``trial``: compare the UBE solution with the MC posterior variance."""
    from .envs import random_instance
    from .solver import local_uncertainty, solve_ube

    rng = make_rng(seed, trial)
    mdp, belief, policy = random_instance(rng)
    stats = posterior_stats(belief)
    nu = local_uncertainty(belief, mdp.horizon * mdp.r_max, stats)
    u = solve_ube(nu, policy, stats.mean_transition)
    est = mc_posterior_variance(belief, policy, samples, seed=int(rng.integers(2 ** 63)))
    return check_upper_bound(u, est, slack_sigmas)


def run_bound_trials(trials: int, samples: int = 10_000, slack_sigmas: float = 5.0,
                     seed: int = 0, workers: int = 1) -> TrialSummary:
    """Repeat :func:`bound_trial` over ``trials`` independent random instances."""
    if trials < 1:
        raise ValueError("need at least one trial")
    jobs = range(trials)
    run = lambda i: bound_trial(seed, i, samples, slack_sigmas)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(run, jobs))
    else:
        reports = [run(i) for i in jobs]
    return TrialSummary(
        trials=trials,
        samples=samples,
        slack_sigmas=slack_sigmas,
        n_checked=sum(r.n_checked for r in reports),
        n_violations=sum(r.n_violations for r in reports),
        max_violation=max(r.max_violation for r in reports),
        failed_trials=[i for i, r in enumerate(reports) if not r.ok],
    )
