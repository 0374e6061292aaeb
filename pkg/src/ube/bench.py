"""Seeded regret experiments: configuration, execution, aggregation and CSV output.

A run is one ``(agent, seed)`` pair: a fresh agent plays ``episodes`` episodes
on a fresh copy of the environment. Episode ``t`` of a run draws from the
stream ``make_rng(seed, experiment_id, t)``, so runs can execute in any order
on any number of processes and still produce identical numbers.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import subprocess
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentSpec, make_agent, new_ledger, run_episode
from .envs import build_env
from .mdp import make_rng

RECORD_HEADER = ("seed", "episode", "variant", "return", "regret", "cumulative_regret")
ENV_KINDS = ("two_path", "random_dag", "unrolled_chain")


def _seed_list(value, what: str) -> list[int]:
    """Seeds are either an explicit list or ``{"start": s, "count": n}``."""
    if isinstance(value, dict):
        unknown = set(value) - {"start", "count"}
        if unknown or "count" not in value:
            raise ValueError(f"{what}: expected a list or {{'start', 'count'}}")
        value = list(range(int(value.get("start", 0)), int(value.get("start", 0)) + int(value["count"])))
    seeds = [int(s) for s in value]
    if not seeds:
        raise ValueError(f"{what} must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"{what} must be distinct")
    if min(seeds) < 0:
        raise ValueError(f"{what} must be nonnegative")
    return seeds


@dataclass(frozen=True)
class SweepConfig:
    """Grid search over one agent field; the best value is kept for the main run."""

    agent: str
    param: str
    values: tuple
    seeds: tuple

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        unknown = set(doc) - {"agent", "param", "values", "seeds"}
        if unknown:
            raise ValueError(f"unknown sweep fields: {sorted(unknown)}")
        values = tuple(doc["values"])
        if not values:
            raise ValueError("sweep values must be nonempty")
        return cls(str(doc["agent"]), str(doc["param"]), values,
                   tuple(_seed_list(doc["seeds"], "sweep seeds")))

    def to_dict(self) -> dict:
        return {"agent": self.agent, "param": self.param, "values": list(self.values),
                "seeds": list(self.seeds)}


@dataclass(frozen=True)
class ExperimentConfig:
    agents: tuple
    seeds: tuple
    name: str = "experiment"
    env: dict = field(default_factory=lambda: {"kind": "two_path"})
    episodes: int = 1000
    realized_regret: bool = False
    sweep: SweepConfig | None = None
    oracle_samples: int = 10_000
    oracle_slack: float = 5.0
    output: str | None = None

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not self.agents:
            raise ValueError("at least one agent is required")
        _seed_list(self.seeds, "seeds")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ValueError("agent names must be distinct")
        if self.env.get("kind") not in ENV_KINDS:
            raise ValueError(f"env kind must be one of {ENV_KINDS}")
        if self.sweep is not None:
            if self.sweep.agent not in names:
                raise ValueError(f"sweep agent {self.sweep.agent!r} is not in the agent list")
            if self.sweep.param not in AgentSpec.__dataclass_fields__:
                raise ValueError(f"unknown sweep parameter {self.sweep.param!r}")
            base = self.agents[names.index(self.sweep.agent)]
            for v in self.sweep.values:
                base.with_(**{self.sweep.param: v})
        if self.oracle_samples < 2 or self.oracle_slack < 0:
            raise ValueError("oracle needs samples >= 2 and slack >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        allowed = {"name", "env", "agents", "episodes", "seeds", "realized_regret",
                   "sweep", "oracle", "output"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        for key in ("agents", "seeds"):
            if key not in doc:
                raise ValueError(f"config is missing {key!r}")
        oracle = doc.get("oracle", {})
        if set(oracle) - {"samples", "slack"}:
            raise ValueError("oracle accepts only 'samples' and 'slack'")
        env = dict(doc.get("env", {"kind": "two_path"}))
        if env.get("kind") in ENV_KINDS:
            build_env(env)  # surfaces bad environment parameters early
        return cls(
            agents=tuple(AgentSpec.from_dict(a) for a in doc["agents"]),
            seeds=tuple(_seed_list(doc["seeds"], "seeds")),
            name=str(doc.get("name", "experiment")),
            env=env,
            episodes=int(doc.get("episodes", 1000)),
            realized_regret=bool(doc.get("realized_regret", False)),
            sweep=SweepConfig.from_dict(doc["sweep"]) if doc.get("sweep") else None,
            oracle_samples=int(oracle.get("samples", 10_000)),
            oracle_slack=float(oracle.get("slack", 5.0)),
            output=doc.get("output"),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "env": dict(self.env),
            "agents": [a.to_dict() for a in self.agents],
            "episodes": self.episodes,
            "seeds": list(self.seeds),
            "realized_regret": self.realized_regret,
            "oracle": {"samples": self.oracle_samples, "slack": self.oracle_slack},
        }
        if self.sweep is not None:
            doc["sweep"] = self.sweep.to_dict()
        if self.output is not None:
            doc["output"] = self.output
        return doc

    def sha256(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def experiment_id(self) -> int:
        return zlib.crc32(self.name.encode())

    def shifted(self, offset: int) -> "ExperimentConfig":
        """Same experiment with every seed (main and sweep) moved by ``offset``."""
        sweep = self.sweep
        if sweep is not None:
            sweep = SweepConfig(sweep.agent, sweep.param, sweep.values,
                                tuple(s + offset for s in sweep.seeds))
        return ExperimentConfig(self.agents, tuple(s + offset for s in self.seeds), self.name,
                                self.env, self.episodes, self.realized_regret, sweep,
                                self.oracle_samples, self.oracle_slack, self.output)


@dataclass
class RunResult:
    agent: str
    variant: str
    seed: int
    expected_returns: np.ndarray
    realized_returns: np.ndarray
    regret: np.ndarray


def run_single(env_spec: dict, spec: AgentSpec, seed: int, episodes: int,
               experiment_id: int = 0, realized: bool = False) -> RunResult:
    """One agent, one seed, ``episodes`` episodes from scratch."""
    env = build_env(env_spec)
    agent = make_agent(spec, env)
    ledger = new_ledger(env, realized)
    for t in range(1, episodes + 1):
        run_episode(agent, env, ledger, make_rng(seed, experiment_id, t), t)
    return RunResult(spec.name, spec.variant, seed, np.asarray(ledger.expected_returns),
                     np.asarray(ledger.realized_returns), ledger.per_episode_regret)


def _run_job(job):
    return run_single(*job)


def _execute(jobs, workers: int) -> list[RunResult]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    return [_run_job(j) for j in jobs]


@dataclass
class ResultSet:
    """Per-episode regret for every ``(agent, seed)``; rows follow ``seeds``."""

    agents: list
    variants: dict
    seeds: list
    episodes: int
    regret: dict
    expected_returns: dict
    realized_returns: dict
    sweep: dict | None = None

    def cumulative(self, agent: str) -> np.ndarray:
        return np.cumsum(self.regret[agent], axis=1)

    def aggregate(self, agent: str) -> tuple[np.ndarray, np.ndarray]:
        """Mean cumulative regret per episode and its standard error over seeds."""
        cum = self.cumulative(agent)
        mean = cum.mean(axis=0)
        if cum.shape[0] < 2:
            return mean, np.zeros_like(mean)
        return mean, cum.std(axis=0, ddof=1) / np.sqrt(cum.shape[0])

    def final(self, agent: str) -> tuple[float, float]:
        mean, se = self.aggregate(agent)
        return float(mean[-1]), float(se[-1])

    def summary(self) -> str:
        lines = [f"{'agent':<24} {'final cum. regret':>18} {'std err':>10}"]
        for a in self.agents:
            m, s = self.final(a)
            lines.append(f"{a:<24} {m:>18.4f} {s:>10.4f}")
        return "\n".join(lines)

    def write_records(self, path) -> None:
        """Raw per-episode records; the ``return`` column is the realized return."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_HEADER)
            for a in self.agents:
                cum = self.cumulative(a)
                for i, seed in enumerate(self.seeds):
                    for t in range(self.episodes):
                        w.writerow((seed, t + 1, self.variants[a], repr(float(self.realized_returns[a][i, t])),
                                    repr(float(self.regret[a][i, t])), repr(float(cum[i, t]))))


def _collect(runs: list[RunResult], agents, seeds, episodes) -> ResultSet:
    by_key = {(r.agent, r.seed): r for r in runs}
    regret, exp_ret, real_ret, variants = {}, {}, {}, {}
    for spec in agents:
        rows = [by_key[(spec.name, s)] for s in seeds]
        regret[spec.name] = np.stack([r.regret for r in rows])
        exp_ret[spec.name] = np.stack([r.expected_returns for r in rows])
        real_ret[spec.name] = np.stack([r.realized_returns for r in rows])
        variants[spec.name] = spec.variant
    return ResultSet([a.name for a in agents], variants, list(seeds), episodes,
                     regret, exp_ret, real_ret)


def run_sweep(config: ExperimentConfig, workers: int = 1) -> tuple[AgentSpec, dict]:
    """Evaluate every sweep value on the sweep seeds; keep the lowest final mean regret."""
    sw = config.sweep
    base = next(a for a in config.agents if a.name == sw.agent)
    candidates = [base.with_(**{sw.param: v}) for v in sw.values]
    jobs = [(config.env, c, seed, config.episodes, config.experiment_id, config.realized_regret)
            for c in candidates for seed in sw.seeds]
    runs = _execute(jobs, workers)
    finals = []
    for i in range(len(candidates)):
        chunk = runs[i * len(sw.seeds):(i + 1) * len(sw.seeds)]
        cum = np.array([r.regret.sum() for r in chunk])
        se = cum.std(ddof=1) / np.sqrt(cum.size) if cum.size > 1 else 0.0
        finals.append((float(cum.mean()), float(se)))
    best = int(np.argmin([m for m, _ in finals]))  # lowest index on ties
    report = {
        "agent": sw.agent,
        "param": sw.param,
        "seeds": list(sw.seeds),
        "values": list(sw.values),
        "final_mean_regret": [m for m, _ in finals],
        "final_std_error": [s for _, s in finals],
        "chosen": sw.values[best],
    }
    return candidates[best], report


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ResultSet:
    """Run every ``(agent, seed)`` pair (after the optional sweep) and collect regret."""
    agents = list(config.agents)
    sweep_report = None
    if config.sweep is not None:
        chosen, sweep_report = run_sweep(config, workers)
        agents = [chosen if a.name == chosen.name else a for a in agents]
    jobs = [(config.env, spec, seed, config.episodes, config.experiment_id, config.realized_regret)
            for spec in agents for seed in config.seeds]
    results = _collect(_execute(jobs, workers), agents, config.seeds, config.episodes)
    results.sweep = sweep_report
    return results


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=os.path.dirname(os.path.abspath(__file__)), timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    rev = out.stdout.strip()
    return rev if out.returncode == 0 and rev else "unknown"


def _file_stem(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def emit_plot_data(results: ResultSet, out_dir, config: ExperimentConfig | None = None) -> list[Path]:
    """One ``(episode, mean_cumulative_regret, std_error)`` CSV per agent plus ``manifest.json``."""
    if not results.agents:
        raise ValueError("no results to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for a in results.agents:
        mean, se = results.aggregate(a)
        path = out / f"{_file_stem(a)}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("episode", "mean_cumulative_regret", "std_error"))
            for t in range(results.episodes):
                w.writerow((t + 1, repr(float(mean[t])), repr(float(se[t]))))
        written.append(path)
    manifest = {
        "config_sha256": config.sha256() if config is not None else None,
        "config": config.to_dict() if config is not None else None,
        "seeds": list(results.seeds),
        "episodes": results.episodes,
        "git_revision": git_revision(),
        "files": {a: p.name for a, p in zip(results.agents, written)},
        "final": {a: dict(zip(("mean", "std_error"), results.final(a))) for a in results.agents},
        "sweep": results.sweep,
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written
