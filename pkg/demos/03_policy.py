# %% [markdown]
# # Fourier-basis softmax policies
#
# States are mapped to [0, 1]^m (time since the pending attempt, fidelities)
# and expanded in a Fourier basis. One linear weight vector per action feeds a
# softmax restricted to the admissible actions.

# %%
import numpy as np

from qdistill import FourierBasisSpec, LinkParameters, MdpState, SoftmaxPolicy, make_env

env = make_env("wn2m2", LinkParameters(10.0, 0.9))
basis = FourierBasisSpec(dependent_order=2, independent_order=4, feature_dim=env.feature_dim)
print(f"{basis.num_features} features for a {env.feature_dim}-dimensional state")

# %%
rng = np.random.default_rng(0)
policy = SoftmaxPolicy(env, basis, 0.1 * rng.standard_normal((len(env.actions), basis.num_features)))
state = MdpState((0.9, 0.85), 1.0)
probs = policy.action_probabilities(state)
for a, p in zip(env.actions, probs):
    print(f"{a.name:8s} {p:.3f}")
print("greedy action:", policy.greedy_action(state).name)

# %% [markdown]
# Inadmissible actions (here PURIFY with only one stored pair, or DISCARD
# while a generation attempt is pending) always get probability zero.

# %%
print(policy.action_probabilities(MdpState((0.9, 0.0), 0.5)))
