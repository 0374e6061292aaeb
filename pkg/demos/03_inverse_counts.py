"""
Inverse counts from linear features
===================================

With features phi(s) the analogue of 1/n is phi^T Sigma_a phi, where Sigma_a
is the inverse of the regularised Gram matrix. Sherman-Morrison keeps it
current in O(D^2) per sample.
"""
import numpy as np

from ube import PrecisionState, local_uncertainty_linear, make_rng, one_hot

# %%
# One-hot features reduce to counting: after n visits the inverse count is
# 1 / (1/prior + n), which approaches 1/n.
feats = one_hot(4)
state = PrecisionState(4, n_actions=1, prior=1.0)
for n in range(1, 1001):
    state.update(0, feats(2))
    if n in (1, 10, 100, 1000):
        print(f"n={n:5d}  phi'Sigma phi = {state.inverse_count(0, feats(2)):.6f}"
              f"   1/(1+n) = {1 / (1 + n):.6f}")
print("unvisited state keeps the prior:", state.inverse_count(0, feats(0)))

# %%
# Dense features: rank-one updates agree with a from-scratch inverse.
rng = make_rng(0)
D = 16
state = PrecisionState(D, 1)
X = rng.normal(size=(500, D))
for x in X:
    state.update(0, x)
direct = np.linalg.inv(X.T @ X + np.eye(D))
print("max |Sigma - direct inverse| =", np.abs(state.sigma[0] - direct).max())

# %%
# The local uncertainty fed to the uncertainty head is beta^2 times this.
probe = rng.normal(size=D)
print("nu for a random probe, beta = 0.1:",
      local_uncertainty_linear(0.1, state.inverse_count(0, probe)))
