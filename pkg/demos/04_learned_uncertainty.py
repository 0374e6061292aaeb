"""
Learning u by temporal differences
==================================

Instead of solving the UBE by backward induction, an agent can learn u from
experience: each visited (h, s, a) moves toward nu + gamma^2 u(next), or an
n-step version of that target. Under a fixed policy and a running-average
step size the learned table converges to the exact solution.
"""
import numpy as np

from ube import build_random_dag, make_rng, solve_ube, td_uncertainty

mdp = build_random_dag(2, [2, 3, 2], 2)
rng = make_rng(0)
# a policy that keeps every action reasonably likely, so every entry is visited
policy = [rng.dirichlet(np.full(2, 5.0), size=n) for n in mdp.layer_sizes]
nu = [rng.uniform(0.0, 1.0, size=(n, 2)) for n in mdp.layer_sizes]
exact = solve_ube(nu, policy, mdp.transitions)

# %%
for n_step in (1, 3):
    for steps in (10 ** 3, 10 ** 4, 10 ** 5):
        learned = td_uncertainty(nu, policy, mdp.transitions, mdp.initial, steps, make_rng(steps),
                                 n_step=n_step)
        err = max(np.max(np.abs(a - b) / b) for a, b in zip(learned, exact))
        print(f"{n_step}-step, {steps:>6} steps: max relative error {err:.3%}")

# %%
# A constant step size keeps tracking noise and plateaus instead.
learned = td_uncertainty(nu, policy, mdp.transitions, mdp.initial, 10 ** 5, make_rng(1),
                         lr=0.1, lr_decay=0.0)
err = max(np.max(np.abs(a - b) / b) for a, b in zip(learned, exact))
print(f"constant step 0.1: max relative error {err:.3%}")
