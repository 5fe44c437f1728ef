"""Entanglement-distillation MDPs between two nodes.

Three variants are provided:

* ``WN2M2`` -- two memories per node, Werner states (pairs twirled after distillation);
* ``BN2M2`` -- two memories per node, general Bell-diagonal states;
* ``WN2M3`` -- three memories per node, Werner states.

States are ``MdpState(slots, p)`` where ``slots`` holds one entry per memory pair
(a fidelity for Werner variants, a Bell-coefficient 4-tuple for BN2M2; zero marks an
empty pair) and ``p`` is the probability that an unheralded distillation outcome
succeeded. Occupied pairs are always packed into the leading slots. The terminal
absorbing state is the ``TERMINAL`` sentinel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, NamedTuple

import numpy as np

from .quantum import (
    BellDiagonalState,
    LinkParameters,
    decay_factor,
    dejmps_distill,
    distill_werner,
)

MAX_EPISODE_STEPS = 1000


class Action(IntEnum):
    WAIT = 0
    CONSUME = 1
    DISCARD = 2
    PURIFY_12 = 3
    PURIFY_13 = 4
    PURIFY_23 = 5

    @property
    def pair(self) -> tuple[int, int] | None:
        """Zero-based slot indices distilled by a PURIFY action."""
        return _PURIFY_PAIRS.get(self)


_PURIFY_PAIRS = {Action.PURIFY_12: (0, 1), Action.PURIFY_13: (0, 2), Action.PURIFY_23: (1, 2)}


class MdpState(NamedTuple):
    slots: tuple
    p: float = 1.0


class _Terminal:
    __slots__ = ()

    def __repr__(self):
        return "TERMINAL"

    def __reduce__(self):
        return (_terminal, ())


def _terminal():
    return TERMINAL


TERMINAL = _Terminal()

_new_state = tuple.__new__  # skips NamedTuple.__new__ on the hot path
_WAIT, _CONSUME, _DISCARD = Action.WAIT, Action.CONSUME, Action.DISCARD

Policy = Callable[[MdpState, np.random.Generator], Action]


@dataclass
class EpisodeHistory:
    """States, actions and per-channel rewards of one episode.

    ``rewards`` has shape (steps, channels) with columns ordered as the
    environment's ``channels``.
    """

    states: list
    actions: list
    rewards: np.ndarray
    channels: tuple
    terminated: bool = field(default=False)

    def __len__(self):
        return len(self.actions)

    def totals(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


class EntanglementEnv:
    """Common dynamics of the two-node distillation MDPs."""

    name = ""
    num_slots = 2
    channels: tuple = ("time", "fidelity")

    def __init__(self, link: LinkParameters):
        if link.dt <= 0:
            raise ValueError("link length must be positive so that each attempt takes time")
        self.link = link
        self.dt = link.dt
        self.p_gen = link.p_gen
        self.f0 = link.initial_fidelity
        self._decay = decay_factor(self.dt, link.coherence_time_s)
        self.actions = tuple(Action)[: 4 if self.num_slots == 2 else 6]
        self._zero_reward = (0.0,) * len(self.channels)
        self._wait_reward = (self.dt,) + (0.0,) * (len(self.channels) - 1)
        self._admissible = {}
        for n_occ in range(self.num_slots + 1):
            for known in (True, False):
                self._admissible[n_occ, known] = self._enumerate_admissible(n_occ, known)

    def __repr__(self):
        return f"{type(self).__name__}(L={self.link.link_length_km} km, F0={self.f0})"

    # per-representation hooks
    empty = 0.0

    def fresh_pair(self):
        return self.f0

    def fidelity(self, pair) -> float:
        return pair

    @staticmethod
    def _occupied_pairs(slots) -> list:
        return [s for s in slots if s]

    def decohere(self, pair):
        return self._decay * pair + (1.0 - self._decay) / 4.0

    def distill(self, pair1, pair2):
        return distill_werner(pair1, pair2)

    def quality_reward(self, pair) -> tuple:
        return (pair,)

    def pair_features(self, pair) -> tuple:
        return (pair,)

    # MDP interface
    def initial_state(self) -> MdpState:
        return MdpState((self.empty,) * self.num_slots, 1.0)

    def occupied(self, state: MdpState) -> int:
        return len(self._occupied_pairs(state.slots))

    def _enumerate_admissible(self, n_occ: int, known: bool) -> tuple:
        acts = []
        if n_occ < self.num_slots:
            acts.append(Action.WAIT)
        if n_occ >= 1:
            acts.append(Action.CONSUME)
            if known:
                acts.append(Action.DISCARD)
        for a in self.actions:
            pair = a.pair
            if pair is not None and pair[1] < n_occ:
                acts.append(a)
        if n_occ == self.num_slots and not known:
            # unreachable: a pending distillation always frees a memory
            return ()
        return tuple(acts)

    def admissible_actions(self, state: MdpState) -> tuple:
        if state is TERMINAL:
            raise ValueError("no actions are available in the terminal state")
        acts = self._admissible[self.occupied(state), state.p == 1.0]
        if not acts:
            raise ValueError(f"unreachable state {state}")
        return acts

    def admissible_mask(self, state: MdpState) -> np.ndarray:
        mask = np.zeros(len(self.actions), dtype=bool)
        mask[list(self.admissible_actions(state))] = True
        return mask

    def step(self, state: MdpState, action: Action, rng: np.random.Generator):
        """Sample the successor of ``state`` under ``action``.

        Returns:
            (next_state, rewards) with rewards ordered as ``self.channels``.
        """
        if state is TERMINAL:
            raise ValueError("cannot act in the terminal state")
        slots, p = state
        occ = self._occupied_pairs(slots)
        known = p == 1.0
        if action not in self._admissible[len(occ), known]:
            raise ValueError(f"action {action!r} is not admissible in {state}")
        n = self.num_slots
        empty = self.empty

        if action == _WAIT:
            n_free = n - len(occ)
            # the heralding message also settles any pending distillation
            if not known and rng.random() >= p:
                occ = occ[1:]
            decohere = self.decohere
            occ = [decohere(s) for s in occ]
            p_gen = self.p_gen
            for _ in range(n_free):
                if rng.random() < p_gen:
                    occ.append(self.fresh_pair())
            occ.extend([empty] * (n - len(occ)))
            return _new_state(MdpState, (tuple(occ), 1.0)), self._wait_reward

        if action == _CONSUME:
            if not known:
                # the pending distilled pair sits in slot 1
                if rng.random() < p:
                    return TERMINAL, (0.0,) + self.quality_reward(occ[0])
                rest = occ[1:] + [empty] * (n - len(occ) + 1)
                return _new_state(MdpState, (tuple(rest), 1.0)), self._zero_reward
            fid = self.fidelity
            best = max(range(len(occ)), key=lambda i: (fid(occ[i]), -i))
            return TERMINAL, (0.0,) + self.quality_reward(occ[best])

        if action == _DISCARD:
            fid = self.fidelity
            worst = min(range(len(occ)), key=lambda i: (fid(occ[i]), -i))
            rest = occ[:worst] + occ[worst + 1:]
            rest.sort(key=fid, reverse=True)
            rest.extend([empty] * (n - len(rest)))
            return _new_state(MdpState, (tuple(rest), 1.0)), self._zero_reward

        i, j = _PURIFY_PAIRS[action]
        out, p_success = self.distill(occ[i], occ[j])
        rest = [out] + [occ[k] for k in range(len(occ)) if k != i and k != j]
        rest.extend([empty] * (n - len(rest)))
        return _new_state(MdpState, (tuple(rest), p * p_success)), self._zero_reward

    def state_features(self, state: MdpState) -> np.ndarray:
        """Map a non-terminal state into [0, 1]^m for the Fourier basis."""
        if state is TERMINAL:
            raise ValueError("terminal state has no features")
        feats = []
        for s in state.slots:
            feats.extend(self.pair_features(s))
        feats.append(state.p)
        return np.asarray(feats, dtype=float)

    @property
    def feature_dim(self) -> int:
        return len(self.state_features(self.initial_state()))


class WN2M2(EntanglementEnv):
    """Two memories per node operating on Werner states."""

    name = "wn2m2"
    num_slots = 2
    channels = ("time", "fidelity")


class WN2M3(EntanglementEnv):
    """Three memories per node operating on Werner states."""

    name = "wn2m3"
    num_slots = 3
    channels = ("time", "fidelity")


class BN2M2(EntanglementEnv):
    """Two memories per node operating on Bell-diagonal states (no twirling)."""

    name = "bn2m2"
    num_slots = 2
    channels = ("time", "b", "c", "d")
    empty = (0.0, 0.0, 0.0, 0.0)

    def __init__(self, link: LinkParameters):
        super().__init__(link)
        self._fresh = BellDiagonalState.werner(self.f0)

    def fresh_pair(self):
        return self._fresh

    def fidelity(self, pair) -> float:
        return pair[0]

    @staticmethod
    def _occupied_pairs(slots) -> list:
        return [s for s in slots if s[0]]

    def decohere(self, pair):
        lam = self._decay
        mix = (1.0 - lam) / 4.0
        return BellDiagonalState(lam * pair[0] + mix, lam * pair[1] + mix, lam * pair[2] + mix, lam * pair[3] + mix)

    def distill(self, pair1, pair2):
        return dejmps_distill(pair1, pair2)

    def quality_reward(self, pair) -> tuple:
        a, b, c, _ = pair
        return (b, c, 1.0 - a - b - c)

    def pair_features(self, pair) -> tuple:
        return tuple(pair)


ENVIRONMENTS = {"wn2m2": WN2M2, "bn2m2": BN2M2, "wn2m3": WN2M3}


def make_env(name: str, link: LinkParameters) -> EntanglementEnv:
    try:
        cls = ENVIRONMENTS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(link)


def run_episode(env, policy: Policy, rng: np.random.Generator, max_steps: int = MAX_EPISODE_STEPS) -> EpisodeHistory:
    """Roll out one episode from the initial state until termination or truncation."""
    state = env.initial_state()
    states, actions, rewards = [], [], []
    terminated = False
    for _ in range(max_steps):
        action = policy(state, rng)
        next_state, reward = env.step(state, action, rng)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        state = next_state
        if state is TERMINAL:
            terminated = True
            break
    arr = np.asarray(rewards, dtype=float).reshape(len(rewards), len(env.channels))
    return EpisodeHistory(states, actions, arr, env.channels, terminated)


def consume_asap(env) -> Policy:
    """Policy that consumes as soon as any pair is stored, otherwise waits."""

    def policy(state, rng=None):
        if env.occupied(state) > 0:
            return Action.CONSUME
        return Action.WAIT

    return policy


def rollout_totals(env, policy: Policy, n_episodes: int, rng: np.random.Generator,
                   max_steps: int = MAX_EPISODE_STEPS) -> np.ndarray:
    """Per-episode reward totals, shape (n_episodes, channels), without keeping histories."""
    n_ch = len(env.channels)
    out = np.zeros((n_episodes, n_ch))
    init = env.initial_state()
    step = env.step
    for e in range(n_episodes):
        state = init
        acc = [0.0] * n_ch
        for _ in range(max_steps):
            state, reward = step(state, policy(state, rng), rng)
            for c in range(n_ch):
                acc[c] += reward[c]
            if state is TERMINAL:
                break
        out[e] = acc
    return out
