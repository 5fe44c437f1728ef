"""Threshold heuristic (consume / discard thresholds with optimistic distillation)
and the grid search that tunes its thresholds."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .environments import MAX_EPISODE_STEPS, Action, rollout_totals

_PAIR_ACTIONS = {(1, 2): Action.PURIFY_12, (1, 3): Action.PURIFY_13, (2, 3): Action.PURIFY_23}


def _fid(slot) -> float:
    return slot[0] if isinstance(slot, tuple) else slot


@dataclass(frozen=True)
class ThresholdPolicy:
    """Consume when the best pair reaches ``f_consume``; discard pairs below ``f_discard``.

    Bell-diagonal slots are compared on their A coefficient.
    """

    f_consume: float
    f_discard: float

    def __post_init__(self):
        if not 0.25 < self.f_consume <= 1.0:
            raise ValueError("f_consume must lie in (0.25, 1]")
        if not 0.25 < self.f_discard < 1.0:
            raise ValueError("f_discard must lie in (0.25, 1)")
        if not self.f_discard < self.f_consume:
            raise ValueError("f_discard must be below f_consume")

    def __call__(self, state, rng=None) -> Action:
        return baseline_action(state, self)


def baseline_action(state, policy: ThresholdPolicy) -> Action:
    fids = [_fid(s) for s in state.slots]
    n_occ = sum(1 for f in fids if f > 0)
    f1, f2, f3 = (fids + [0.0, 0.0])[:3]
    f_max = max(f1, f2, f3)
    f_min = min(f1, f2, f3)
    f_mid = f1 + f2 + f3 - f_max - f_min

    if f_max >= policy.f_consume:
        return Action.CONSUME
    if state.p == 1.0:
        # lowest occupied pair below the discard threshold
        for f in (f_min, f_mid, f_max):
            if 0 < f < policy.f_discard:
                return Action.DISCARD
    if f_mid > 0:
        if n_occ == 2:
            return Action.PURIFY_12
        if abs(f1 - f2) <= abs(f1 - f3):
            partner = 1 if abs(f1 - f2) <= abs(f3 - f2) else 3
            return _PAIR_ACTIONS[tuple(sorted((2, partner)))]
        partner = 1 if abs(f1 - f3) <= abs(f2 - f3) else 2
        return _PAIR_ACTIONS[tuple(sorted((3, partner)))]
    return Action.WAIT


@dataclass(frozen=True)
class GridSearchSpec:
    consume_range: tuple = (0.9, 0.94)
    discard_range: tuple = (0.87, 0.89)
    step: float = 0.01
    eval_episodes: int = 20_000

    @classmethod
    def for_initial_fidelity(cls, f0: float, eval_episodes: int = 20_000) -> "GridSearchSpec":
        """Default search ranges for the two initial fidelities studied (0.83 and 0.9)."""
        if abs(f0 - 0.83) < 1e-9:
            return cls((0.83, 0.86), (0.77, 0.80), 0.01, eval_episodes)
        if abs(f0 - 0.9) < 1e-9:
            return cls((0.9, 0.94), (0.87, 0.89), 0.01, eval_episodes)
        return cls((f0, min(1.0, f0 + 0.04)), (max(0.26, f0 - 0.06), max(0.27, f0 - 0.03)), 0.01, eval_episodes)

    def grid(self, lo_hi) -> np.ndarray:
        lo, hi = lo_hi
        if hi < lo:
            raise ValueError(f"empty range {lo_hi}")
        n = int(round((hi - lo) / self.step)) + 1
        return np.round(lo + self.step * np.arange(n), 10)

    def points(self) -> list:
        return [(float(c), float(d)) for c in self.grid(self.consume_range) for d in self.grid(self.discard_range)]


def grid_search(env, spec: GridSearchSpec, utility, seed: int = 0, max_steps: int = MAX_EPISODE_STEPS):
    """Evaluate every threshold pair by Monte Carlo and return the best one.

    All grid points share the same random seed (common random numbers). Ties
    go to the lower consume threshold, then the lower discard threshold.

    Returns:
        (best ThresholdPolicy, list of table rows as dicts)
    """
    table = []
    best, best_u = None, -np.inf
    for f_c, f_d in spec.points():
        if not f_d < f_c:
            continue
        policy = ThresholdPolicy(f_c, f_d)
        rng = np.random.default_rng(seed)
        totals = rollout_totals(env, policy, spec.eval_episodes, rng, max_steps)
        J = dict(zip(env.channels, totals.mean(axis=0).tolist()))
        u = utility.skr(J)
        table.append({"f_consume": f_c, "f_discard": f_d, **{f"J_{c}": J[c] for c in env.channels}, "utility": u})
        if u > best_u:
            best, best_u = policy, u
    if best is None:
        raise ValueError("grid contains no point with f_discard < f_consume")
    return best, table


def write_grid_table(path, table) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
