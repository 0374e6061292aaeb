"""Exact and learned value uncertainty for exploration on layered finite-horizon MDPs."""
from .agents import (
    VARIANTS,
    AgentSpec,
    RegretLedger,
    count_bonus_act,
    exp_bonus,
    learned_ube_nstep,
    learned_ube_step,
    make_agent,
    new_ledger,
    run_episode,
    thompson_act,
    td_uncertainty,
    thompson_probabilities,
)
from .bench import ExperimentConfig, ResultSet, emit_plot_data, run_experiment
from .envs import build_env, build_random_dag, build_two_path, build_unrolled_chain
from .linear import (
    PrecisionState,
    inverse_count,
    local_uncertainty_linear,
    one_hot,
    update_precision,
)
from .mdp import (
    LayeredMdp,
    Step,
    backward_induction,
    evaluate_policy,
    make_rng,
    optimal_q,
    optimal_return,
    policy_value,
    q_max,
    sample_episode,
    step_env,
    uniform_policy,
)
from .oracle import check_upper_bound, mc_posterior_variance, run_bound_trials
from .posterior import BeliefState, posterior_mean_q, posterior_stats, sample_mdp, update
from .solver import local_uncertainty, solve_ube, tabular_local_bound, ube_residual

__version__ = "0.1.0"
