# %% [markdown]
# # The distillation decision processes
#
# Three environments share the same dynamics: two memory slots holding Werner
# pairs (WN2M2), two slots with full Bell-diagonal pairs (BN2M2), or three
# slots with Werner pairs (WN2M3). At each step the controller may WAIT,
# CONSUME the best pair, DISCARD the worst, or PURIFY two pairs. Every step
# returns a reward vector (elapsed time, fidelity of a consumed pair).

# %%
import numpy as np

from qdistill import LinkParameters, consume_asap, make_env, run_episode

# %%
env = make_env("wn2m2", LinkParameters(10.0, 0.9))
print(env, "channels:", env.channels, "actions:", [a.name for a in env.actions])
state = env.initial_state()
print("initial state:", state, "admissible:", [a.name for a in env.admissible_actions(state)])

# %% [markdown]
# ## One episode under the consume-as-soon-as-possible policy

# %%
rng = np.random.default_rng(1)
history = run_episode(env, consume_asap(env), rng)
for s, a, r in zip(history.states, history.actions, history.rewards):
    print(f"{str(s):45s} {a.name:8s} reward {r}")

# %% [markdown]
# ## Expected returns
# Averaging episode totals estimates J_time and J_fidelity; their ratio gives the
# key rate. For consume-ASAP it matches the closed form that counts the
# expected number of attempts until either link succeeds.

# %%
from qdistill.environments import rollout_totals
from qdistill.quantum import skr_bb84_werner

totals = rollout_totals(env, consume_asap(env), 50_000, np.random.default_rng(2))
J_time, J_fid = totals.mean(axis=0)
print(f"J_time = {J_time:.3e} s, J_fidelity = {J_fid:.4f}")
print(f"simulated key rate {skr_bb84_werner(J_fid, J_time):.1f} vs closed form "
      f"{skr_bb84_werner(0.9, env.dt / (1 - (1 - env.p_gen) ** 2)):.1f}")

# %% [markdown]
# ## The other environments

# %%
for name in ("bn2m2", "wn2m3"):
    other = make_env(name, LinkParameters(10.0, 0.9))
    print(other, "feature dimension", other.feature_dim, "actions", [a.name for a in other.actions])
