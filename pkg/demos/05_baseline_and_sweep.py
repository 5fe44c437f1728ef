# %% [markdown]
# # Threshold baseline, grid search and a small sweep
#
# The baseline consumes as soon as a pair reaches f_consume, discards pairs
# below f_discard, and otherwise distills the closest-fidelity pair. Its two
# thresholds are tuned by grid search with common random numbers.

# %%
import tempfile
from pathlib import Path

from qdistill import GridSearchSpec, LinkParameters, grid_search, make_env, make_utility
from qdistill.harness import ExperimentConfig, run_sweep

env = make_env("wn2m2", LinkParameters(25.0, 0.9))
best, table = grid_search(env, GridSearchSpec.for_initial_fidelity(0.9, eval_episodes=5_000),
                          make_utility("bb84", env), seed=0)
for row in table:
    print(f"f_consume {row['f_consume']:.2f} f_discard {row['f_discard']:.2f} key rate {row['utility']:.1f}")
print("best:", best)

# %% [markdown]
# ## A sweep over link lengths
# `run_sweep` runs the grid search, trains a policy and evaluates both at every
# length, writing CSV/JSON records and SVG plots. A small scale keeps this quick.
# With so little training, longer links can leave a policy that keeps waiting
# until the episode step cap, which makes evaluation slow; use larger scales there.

# %%
out = Path(tempfile.mkdtemp(prefix="qdistill_sweep_"))
cfg = ExperimentConfig(environment="wn2m2", utility="bb84", f0=0.9, link_lengths_km=(5.0, 10.0), seed=0,
                       scale=0.05, output_dir=str(out))
result = run_sweep(cfg)
for row in result.summary["lengths"]:
    print(f"L = {row['length_km']:g} km  baseline {row['baseline_utility']:.1f}  RL {row['rl_utility']:.1f}  "
          f"reldiff {row['reldiff']:+.1%}")
print("files:", sorted(p.name for p in out.iterdir()))
