"""Command-line entry point: ``ube {gen,solve,oracle,bench}``.

Exit codes: 0 success, 1 validation error (bad arguments, bad input files, a
failed upper-bound check), 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, emit_plot_data, run_experiment
from .envs import build_random_dag, build_two_path, build_unrolled_chain
from .mdp import LayeredMdp, make_rng, uniform_policy
from .oracle import run_bound_trials
from .posterior import BeliefState, posterior_stats
from .solver import (
    branching_factor,
    greedy_mean_and_ube,
    local_uncertainty,
    per_layer_q_max,
    solve_ube,
    tabular_local_bound,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="parallel workers (default 1)")
    p.add_argument("--out", default=None, help="output file or directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="ube", description="Uncertainty Bellman equation toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate an environment JSON file")
    gen.add_argument("kind", choices=["two_path", "random_dag", "unrolled_chain"])
    gen.add_argument("--H", type=int, default=10, help="two_path chain length")
    gen.add_argument("--sigma", type=float, default=1.0, help="two_path reward noise")
    gen.add_argument("--mu1", type=float, default=1.0)
    gen.add_argument("--mu2", type=float, default=0.0)
    gen.add_argument("--layers", default="2,3,3,2", help="random_dag layer sizes, comma separated")
    gen.add_argument("--actions", type=int, default=2, help="random_dag action count")
    gen.add_argument("--r-max", type=float, default=1.0)
    gen.add_argument("--noise", type=float, default=1.0, help="reward noise std (random_dag, chain)")
    gen.add_argument("--states", type=int, default=5, help="unrolled_chain states")
    gen.add_argument("--horizon", type=int, default=10, help="unrolled_chain horizon")
    gen.add_argument("--p-success", type=float, default=0.7)
    gen.add_argument("--belief", default=None,
                     help="also write a belief JSON here (prior plus --visits simulated visits)")
    gen.add_argument("--visits", type=int, default=0,
                     help="simulated observations of every (h, s, a) in the belief")

    solve = sub.add_parser("solve", parents=[common], help="posterior-mean Q and UBE tables")
    solve.add_argument("--mdp", required=True, help="environment JSON (fixes shapes, r_max, support)")
    solve.add_argument("--belief", default=None, help="belief JSON (default: prior from the MDP)")
    solve.add_argument("--policy", choices=["greedy", "uniform"], default="greedy",
                       help="greedy on the posterior-mean Q, or uniform over valid actions")
    solve.add_argument("--gamma", type=float, default=1.0)
    solve.add_argument("--local", choices=["exact", "count_bound"], default="exact")
    solve.add_argument("--per-layer-qmax", action="store_true",
                       help="use (H - h) * R_max instead of H * R_max")

    oracle = sub.add_parser("oracle", parents=[common], help="Monte-Carlo check of the UBE bound")
    oracle.add_argument("--trials", type=int, default=100)
    oracle.add_argument("--samples", type=int, default=10_000)
    oracle.add_argument("--slack", type=float, default=5.0, help="allowed MC standard errors")

    bench = sub.add_parser("bench", parents=[common], help="run a regret experiment")
    bench.add_argument("--config", required=True, help="experiment JSON")
    bench.add_argument("--episodes", type=int, default=None, help="override the episode count")
    bench.add_argument("--max-seeds", type=int, default=None,
                       help="keep only the first N seeds (main and sweep)")
    return parser


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc


def _emit(doc, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _simulate_visits(mdp: LayeredMdp, belief: BeliefState, visits: int, rng) -> None:
    for h in range(mdp.horizon):
        n = np.full(mdp.mean_rewards[h].shape, visits)
        belief.counts[h] += n
        belief.reward_sum[h] += (n * mdp.mean_rewards[h]
                                 + mdp.reward_noise[h] * np.sqrt(n) * rng.standard_normal(n.shape))
        if h < mdp.horizon - 1:
            belief.transition_counts[h] += rng.multinomial(n, mdp.transitions[h])


def cmd_gen(args) -> int:
    if args.kind == "two_path":
        mdp = build_two_path(args.H, args.sigma, args.mu1, args.mu2)
    elif args.kind == "random_dag":
        sizes = [int(x) for x in args.layers.split(",") if x.strip()]
        mdp = build_random_dag(args.seed, sizes, args.actions, args.r_max, args.noise)
    else:
        mdp = build_unrolled_chain(args.states, args.horizon, args.p_success, reward_noise=args.noise)
    _emit(mdp.to_dict(), args.out)
    if args.belief is not None:
        if args.visits < 0:
            raise ValueError("--visits must be nonnegative")
        belief = BeliefState.from_mdp(mdp)
        _simulate_visits(mdp, belief, args.visits, make_rng(args.seed, 1))
        _emit(belief.to_dict(), args.belief)
    return 0


def cmd_solve(args) -> int:
    mdp = LayeredMdp.from_dict(_read_json(args.mdp))
    if args.belief is None:
        belief = BeliefState.from_mdp(mdp)
    else:
        belief = BeliefState.from_dict(_read_json(args.belief))
        if belief.layer_sizes != mdp.layer_sizes or belief.n_actions != mdp.n_actions:
            raise ValueError("belief shapes do not match the MDP")
    q_max = per_layer_q_max(mdp) if args.per_layer_qmax else mdp.horizon * mdp.r_max
    stats = posterior_stats(belief)
    if args.local == "exact":
        nu = local_uncertainty(belief, q_max, stats)
    else:
        sigma = [1.0 / np.sqrt(t) for t in belief.noise_precision]
        nu = tabular_local_bound(belief.counts, sigma, float(np.max(q_max)), branching_factor(belief))
    if args.policy == "greedy":
        q, u, policy = greedy_mean_and_ube(stats.mean_reward, stats.mean_transition, nu,
                                           mdp.valid_actions, args.gamma)
    else:
        from .mdp import backward_induction
        policy = uniform_policy(mdp)
        q = backward_induction(stats.mean_reward, stats.mean_transition, policy)
        u = solve_ube(nu, policy, stats.mean_transition, args.gamma)
    _emit({
        "q_mean": [x.tolist() for x in q],
        "u": [x.tolist() for x in u],
        "nu": [x.tolist() for x in nu],
        "policy": [x.tolist() for x in policy],
        "q_max": q_max,
        "gamma": args.gamma,
    }, args.out)
    return 0


def cmd_oracle(args) -> int:
    summary = run_bound_trials(args.trials, args.samples, args.slack, args.seed, max(args.threads, 1))
    print(summary.to_table())
    if args.out is not None:
        _emit(summary.to_dict(), args.out)
    return 0 if summary.ok else 1


def cmd_bench(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    doc = config.to_dict()
    if args.episodes is not None:
        doc["episodes"] = args.episodes
    if args.max_seeds is not None:
        if args.max_seeds < 1:
            raise ValueError("--max-seeds must be >= 1")
        doc["seeds"] = doc["seeds"][:args.max_seeds]
        if "sweep" in doc:
            doc["sweep"]["seeds"] = doc["sweep"]["seeds"][:args.max_seeds]
    config = ExperimentConfig.from_dict(doc)
    if args.seed:
        config = config.shifted(args.seed)
    out = args.out or config.output or f"results/{config.name}"
    results = run_experiment(config, workers=max(args.threads, 1))
    emit_plot_data(results, out, config)
    results.write_records(Path(out) / "raw" / "records.csv")
    if results.sweep is not None:
        sw = results.sweep
        print(f"sweep {sw['agent']}.{sw['param']}: chosen {sw['chosen']!r}")
        for v, m, s in zip(sw["values"], sw["final_mean_regret"], sw["final_std_error"]):
            print(f"  {v!r:>10}  {m:10.4f} +/- {s:.4f}")
    print(results.summary())
    print(f"wrote {out}")
    return 0


_COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "oracle": cmd_oracle, "bench": cmd_bench}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError) as exc:
        print(f"ube: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ube: I/O error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
