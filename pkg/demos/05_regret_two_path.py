"""
Regret on the two-path problem
==============================

Thompson sampling with UBE variances against a count-bonus agent, on the
two-path MDP with mu1 = 1, mu2 = 0, sigma = 1, H = 10. This is a reduced
version of configs/fig2.json (fewer seeds, shorter sweep) that runs in about
a minute; `ube bench --config configs/fig2.json` runs the full experiment.
"""
import numpy as np

from ube import ExperimentConfig, run_experiment

config = ExperimentConfig.from_dict({
    "name": "fig2",
    "env": {"kind": "two_path", "H": 10, "sigma": 1.0, "mu1": 1.0, "mu2": 0.0},
    "agents": [{"variant": "ube_exact", "beta": 1.0}, {"variant": "count_bonus", "beta": 0.1}],
    "episodes": 500,
    "seeds": {"start": 0, "count": 30},
    "sweep": {"agent": "count_bonus", "param": "beta", "values": [0.03, 0.3, 1.0],
              "seeds": {"start": 100000, "count": 10}},
})
results = run_experiment(config)

sw = results.sweep
for v, m in zip(sw["values"], sw["final_mean_regret"]):
    print(f"sweep beta={v:<5}  final regret {m:8.2f}")
print(f"chosen beta = {sw['chosen']}\n")
print(results.summary())

# %%
# Cumulative regret at a few checkpoints.
for name in results.agents:
    mean, se = results.aggregate(name)
    marks = ", ".join(f"t={t}: {mean[t - 1]:.1f}" for t in (10, 100, 500))
    print(f"{name:<12} {marks}")

# %%
# Share of episodes in which each agent's decision rule still favoured the
# worse arm, over the last 100 episodes.
for name in results.agents:
    ret = results.expected_returns[name][:, -100:]
    print(f"{name:<12} mean expected return over the last 100 episodes: {np.mean(ret):.3f}")
