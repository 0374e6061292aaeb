"""
Variances add along a chain, standard deviations do not
=======================================================

Two actions at a root: one pays a single N(mu1, sigma^2) reward, the other
walks a chain of H states each paying N(mu2/H, sigma^2/H). After n visits
both actions are equally uncertain. The uncertainty Bellman equation gets
this right; a per-state standard-deviation bonus inflates the chain by sqrt(H).
"""
import numpy as np

from ube import (
    BeliefState,
    build_two_path,
    exp_bonus,
    local_uncertainty,
    mc_posterior_variance,
    posterior_stats,
    solve_ube,
    uniform_policy,
)

H, sigma, n = 10, 1.0, 5
mdp = build_two_path(H, sigma, mu1=1.0, mu2=0.0)
print(f"horizon {mdp.horizon} (root + {H} layers), layer sizes {mdp.layer_sizes}")

# %%
# A flat (improper) reward prior with every pair seen n times: posterior
# variance of each mean reward is noise^2 / n. Noise-free padding stays known.
with np.errstate(divide="ignore"):
    tau = [1.0 / z ** 2 for z in mdp.reward_noise]
rho = [np.where(np.isinf(t), np.inf, 0.0) for t in tau]
alpha = [np.where(p > 0, 1.0, 0.0) for p in mdp.transitions]
belief = BeliefState(0.0, rho, tau, alpha)
for h in range(mdp.horizon):
    belief.counts[h][...] = n
    belief.reward_sum[h][...] = n * mdp.mean_rewards[h]

# %%
# Exact UBE solution at the root, for both actions.
policy = uniform_policy(mdp)
stats = posterior_stats(belief)
nu = local_uncertainty(belief, mdp.horizon * mdp.r_max, stats)
u = solve_ube(nu, policy, stats.mean_transition)
print("UBE root u        ", u[0][0], " expected sigma^2/n =", sigma ** 2 / n)

# %%
# The same quantity by brute force: sample MDPs from the posterior and
# measure the spread of their root Q-values.
est = mc_posterior_variance(belief, policy, 20000, seed=0)
print("MC root variance  ", est.variance[0][0], "+/-", est.std_error[0][0])

# %%
# A count-based bonus accumulated along the chain.
bonus = exp_bonus(belief, policy)[0][0]
print("bonus             ", bonus)
print(f"bonus ratio {bonus[1] / bonus[0]:.4f}  vs sqrt(H) = {np.sqrt(H):.4f}")
