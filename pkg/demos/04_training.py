# %% [markdown]
# # Training on a key-rate objective
#
# The key rate is a non-linear function of two expected returns. Its gradient
# follows from the chain rule: REINFORCE estimates the gradient of each
# channel's return, and these are combined with the partial derivatives of the
# key rate. Adam performs the ascent.

# %%
import numpy as np

from qdistill import LinkParameters, MdpState, ThresholdPolicy, evaluate_policy, make_env, make_utility
from qdistill.harness import ExperimentConfig, train_policy

# %% [markdown]
# A reduced-budget run (scale 0.1) of the reference hyperparameters for WN2M2.

# %%
cfg = ExperimentConfig(environment="wn2m2", utility="bb84", f0=0.9, link_lengths_km=(10.0,), seed=3, scale=0.1)
policy, result = train_policy(cfg, 10.0)
for row in result.curve[:: max(1, len(result.curve) // 8)]:
    print(f"iteration {row['iteration']:3d}  batch key rate {row['utility']:.1f}")

# %% [markdown]
# ## Evaluation against the threshold baseline

# %%
env = make_env("wn2m2", LinkParameters(10.0, 0.9))
utility = make_utility("bb84", env)
rl = evaluate_policy(env, policy.greedy(), 4, 20_000, utility, seed=10)
base = evaluate_policy(env, ThresholdPolicy(0.9, 0.87), 4, 20_000, utility, seed=10)
print(f"learned policy {rl.mean:.1f} +- {rl.ci95:.1f}")
print(f"threshold      {base.mean:.1f} +- {base.ci95:.1f}")
print("learned action with one fresh pair:", policy.greedy_action(MdpState((0.9, 0.0), 1.0)).name)
