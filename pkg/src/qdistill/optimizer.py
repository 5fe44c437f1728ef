"""REINFORCE-style ascent on non-linear utilities of several expected returns.

Each reward channel (time, fidelity, Bell coefficients) has its own expected
return J_i. The policy gradient of every J_i is estimated from one shared batch
of episodes and the gradients are combined with the chain rule,

    d u(J_1, ..., J_M) / d theta = sum_i  du/dJ_i * dJ_i/d theta,

with the partial derivatives evaluated at the batch means of the returns.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environments import MAX_EPISODE_STEPS, EpisodeHistory, run_episode

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
GUARD_EPS = 1e-9


# ---------------------------------------------------------------------------
# returns and gradient estimates


def discounted_returns(rewards: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """Return-from-t for every step and channel (shape of ``rewards``)."""
    rewards = np.asarray(rewards, dtype=float)
    if gamma == 1.0:
        return np.cumsum(rewards[::-1], axis=0)[::-1]
    out = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[1:])
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def per_channel_returns(history: EpisodeHistory, gamma: float = 1.0) -> dict:
    """Map channel name to the list of ``(t, G_t)`` for one episode."""
    G = discounted_returns(history.rewards, gamma)
    return {name: [(t, float(G[t, c])) for t in range(len(G))] for c, name in enumerate(history.channels)}


def episode_returns(histories, gamma: float = 1.0) -> np.ndarray:
    """Discounted return of each whole episode, shape (episodes, channels)."""
    if gamma == 1.0:
        return np.array([h.rewards.sum(axis=0) for h in histories])
    return np.array([discounted_returns(h.rewards, gamma)[0] for h in histories])


def estimate_policy_gradients(histories, policy, gamma: float = 1.0) -> dict:
    """Score-function estimate of dJ_c/dtheta for every reward channel c.

    Computes (1/N) sum_i sum_t gamma^t G_t^i grad ln pi(S_t^i, A_t^i) once per
    channel, sharing the log-policy gradients between channels.
    """
    histories = list(histories)
    if not histories:
        raise ValueError("cannot estimate a gradient from an empty batch")
    channels = histories[0].channels
    index = {}
    s_idx, a_idx, weights = [], [], []
    for h in histories:
        if not len(h):
            continue
        G = discounted_returns(h.rewards, gamma)
        if gamma != 1.0:
            G = G * (gamma ** np.arange(len(G)))[:, None]
        weights.append(G)
        for s, a in zip(h.states, h.actions):
            k = index.get(s)
            if k is None:
                k = index[s] = len(index)
            s_idx.append(k)
            a_idx.append(int(a))

    n_actions, n_features = policy.weights.shape
    n_channels = len(channels)
    if not index:
        return {c: np.zeros((n_actions, n_features)) for c in channels}
    W = np.concatenate(weights)
    s_idx = np.asarray(s_idx)
    a_idx = np.asarray(a_idx)
    states = list(index)
    phi = np.array([policy.features(s) for s in states])
    probs = np.array([policy.action_probabilities(s) for s in states])

    chosen = np.zeros((len(states), n_actions, n_channels))
    np.add.at(chosen, (s_idx, a_idx), W)
    total = np.zeros((len(states), n_channels))
    np.add.at(total, s_idx, W)
    coef = chosen - total[:, None, :] * probs[:, :, None]
    grads = np.einsum("uac,uf->caf", coef, phi) / len(histories)
    return {c: grads[i] for i, c in enumerate(channels)}


# ---------------------------------------------------------------------------
# utilities


def _h(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def _dh(x: float) -> float:
    return math.log2((1.0 - x) / x)


class Utility:
    """Differentiable objective of the channel means ``J`` (a mapping name -> value).

    ``value`` is the training objective without the max{0, .} clamp; ``skr``
    applies the clamp and is what evaluation reports.
    """

    kind = ""
    channels: tuple = ()

    def value(self, J) -> float:
        raise NotImplementedError

    def partials(self, J) -> dict:
        raise NotImplementedError

    def skr(self, J) -> float:
        return max(0.0, self.value(J))

    def guard(self, J) -> tuple[dict, bool]:
        """Clamp channel means away from singular points of the partials."""
        return dict(J), False

    @staticmethod
    def _time(J) -> float:
        T = float(J["time"])
        if not T > 0:
            raise ValueError(f"expected time return must be positive, got {T}")
        return T

    def __repr__(self):
        return f"{type(self).__name__}()"


class BB84Werner(Utility):
    kind = "bb84_werner"
    channels = ("fidelity", "time")

    @staticmethod
    def _beta(J) -> float:
        return 2.0 / 3.0 * (1.0 - float(J["fidelity"]))

    def value(self, J) -> float:
        return (1.0 - 2.0 * _h(self._beta(J))) / self._time(J)

    def partials(self, J) -> dict:
        T = self._time(J)
        beta = self._beta(J)
        if not 0.0 < beta < 1.0:
            raise ValueError(f"beta = {beta} outside (0, 1); fidelity estimate {J['fidelity']} is invalid")
        return {
            "fidelity": -4.0 / (3.0 * T) * math.log2(beta / (1.0 - beta)),
            "time": -(1.0 - 2.0 * _h(beta)) / T**2,
        }

    def guard(self, J):
        F = float(J["fidelity"])
        lo, hi = GUARD_EPS, 1.0 - GUARD_EPS * 1.5
        clamped = min(max(F, lo), hi)
        out = dict(J)
        out["fidelity"] = clamped
        return out, clamped != F


class SixStateWerner(Utility):
    kind = "six_state_werner"
    channels = ("fidelity", "time")

    def value(self, J) -> float:
        F = float(J["fidelity"])
        ent = 0.0 if F >= 1.0 else -(1.0 - F) * math.log2((1.0 - F) / 3.0)
        if F > 0:
            ent -= F * math.log2(F)
        return (1.0 - ent) / self._time(J)

    def partials(self, J) -> dict:
        T = self._time(J)
        F = float(J["fidelity"])
        if not 0.0 < F < 1.0:
            raise ValueError(f"fidelity estimate {F} outside (0, 1)")
        return {"fidelity": -math.log2((1.0 - F) / (3.0 * F)) / T, "time": -self.value(J) / T}

    def guard(self, J):
        F = float(J["fidelity"])
        clamped = min(max(F, GUARD_EPS), 1.0 - GUARD_EPS)
        out = dict(J)
        out["fidelity"] = clamped
        return out, clamped != F


class BB84BDS(Utility):
    kind = "bb84_bds"
    channels = ("b", "c", "d", "time")

    def value(self, J) -> float:
        b, c, d = float(J["b"]), float(J["c"]), float(J["d"])
        return (1.0 - _h(b + c) - _h(b + d)) / self._time(J)

    def partials(self, J) -> dict:
        T = self._time(J)
        b, c, d = float(J["b"]), float(J["c"]), float(J["d"])
        x, y = b + c, b + d
        if not (0.0 < x < 1.0 and 0.0 < y < 1.0):
            raise ValueError(f"B+C = {x} or B+D = {y} outside (0, 1)")
        dx, dy = _dh(x), _dh(y)
        return {"b": -(dx + dy) / T, "c": -dx / T, "d": -dy / T, "time": -self.value(J) / T}

    def guard(self, J):
        out = dict(J)
        hit = False
        for k in ("b", "c", "d"):
            v = min(max(float(J[k]), GUARD_EPS), 0.5 - GUARD_EPS)
            hit |= v != float(J[k])
            out[k] = v
        return out, hit


class SixStateBDS(Utility):
    kind = "six_state_bds"
    channels = ("b", "c", "d", "time")

    @staticmethod
    def _coeffs(J):
        b, c, d = float(J["b"]), float(J["c"]), float(J["d"])
        return 1.0 - b - c - d, b, c, d

    def value(self, J) -> float:
        ent = -sum(x * math.log2(x) for x in self._coeffs(J) if x > 0)
        return (1.0 - ent) / self._time(J)

    def partials(self, J) -> dict:
        T = self._time(J)
        a, b, c, d = self._coeffs(J)
        if not all(0.0 < x < 1.0 for x in (a, b, c, d)):
            raise ValueError(f"Bell coefficient estimates {(a, b, c, d)} outside (0, 1)")
        return {
            "b": -math.log2(a / b) / T,
            "c": -math.log2(a / c) / T,
            "d": -math.log2(a / d) / T,
            "time": -self.value(J) / T,
        }

    def guard(self, J):
        out = dict(J)
        hit = False
        for k in ("b", "c", "d"):
            v = min(max(float(J[k]), GUARD_EPS), 1.0 / 3.0 - GUARD_EPS)
            hit |= v != float(J[k])
            out[k] = v
        return out, hit


class LinearUtility(Utility):
    """Weighted sum of channel means; reduces the chain rule to a plain policy gradient."""

    kind = "linear"

    def __init__(self, coefficients: dict):
        self.coefficients = dict(coefficients)
        self.channels = tuple(self.coefficients)

    def value(self, J) -> float:
        return sum(w * float(J[k]) for k, w in self.coefficients.items())

    def partials(self, J) -> dict:
        return dict(self.coefficients)

    def skr(self, J) -> float:
        return self.value(J)


UTILITIES = {cls.kind: cls for cls in (BB84Werner, BB84BDS, SixStateWerner, SixStateBDS)}


def make_utility(name: str, env=None) -> Utility:
    """Build a utility by kind, or by protocol name ("bb84", "six_state") for ``env``."""
    name = name.lower().replace("-", "_")
    if name in UTILITIES:
        return UTILITIES[name]()
    if name in ("bb84", "six_state", "sixstate"):
        if env is None:
            raise ValueError(f"utility {name!r} needs an environment to pick the state representation")
        rep = "bds" if "b" in env.channels else "werner"
        return UTILITIES[f"{'bb84' if name == 'bb84' else 'six_state'}_{rep}"]()
    raise ValueError(f"unknown utility {name!r}")


def utility_gradient(channel_gradients: dict, channel_means: dict, utility: Utility) -> np.ndarray:
    """Chain-rule gradient sum_i du/dJ_i * dJ_i/dtheta."""
    missing = [c for c in utility.channels if c not in channel_gradients or c not in channel_means]
    if missing:
        raise ValueError(f"missing channels for {utility.kind}: {missing}")
    partials = utility.partials(channel_means)
    total = None
    for c in utility.channels:
        term = partials[c] * np.asarray(channel_gradients[c])
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    """Adam with bias correction, used here for gradient *ascent*."""

    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainerConfig:
    learning_rate: float = 1e-4
    episodes_per_iteration: int = 10_000
    iterations: int = 500
    discount: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    max_steps: int = MAX_EPISODE_STEPS
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.episodes_per_iteration < 1 or self.iterations < 0:
            raise ValueError("episodes_per_iteration must be >= 1 and iterations >= 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class TrainResult:
    weights: np.ndarray
    curve: list


def chunk_seeds(seed: int, iteration: int, n_chunks: int) -> list:
    """Independent RNG seeds for each sampling chunk of one iteration."""
    return [np.random.SeedSequence([seed, iteration, c]) for c in range(n_chunks)]


def _sample_chunk(env, policy, n_episodes, seed_seq, max_steps):
    rng = np.random.default_rng(seed_seq)
    return [run_episode(env, policy, rng, max_steps) for _ in range(n_episodes)]


def sample_batch(env, policy, n_episodes: int, seeds, max_steps=MAX_EPISODE_STEPS, pool=None) -> list:
    """Sample ``n_episodes`` split evenly over the seed chunks, concatenated in chunk order."""
    sizes = [len(x) for x in np.array_split(np.arange(n_episodes), len(seeds))]
    if pool is None:
        parts = [_sample_chunk(env, policy, n, s, max_steps) for n, s in zip(sizes, seeds)]
    else:
        futures = [pool.submit(_sample_chunk, env, policy, n, s, max_steps) for n, s in zip(sizes, seeds)]
        parts = [f.result() for f in futures]
    return [h for part in parts for h in part]


def train(env, policy, utility: Utility, config: TrainerConfig, callback=None) -> TrainResult:
    """Optimise ``policy`` in place by stochastic ascent on ``utility``.

    Every iteration samples ``episodes_per_iteration`` episodes with the current
    weights, estimates the channel means and gradients from that batch, applies
    the chain rule and takes one Adam step. With ``workers > 1`` each iteration is
    split into that many seeded chunks run in a process pool; results are
    reduced in chunk order, so a run is reproducible for a fixed worker count.

    Returns:
        The final weights and one learning-curve record per iteration.
    """
    adam = Adam(policy.weights.shape, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    curve = []
    clamp_hits = 0
    start = time.perf_counter()
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for k in range(config.iterations):
            seeds = chunk_seeds(config.seed, k, config.workers)
            batch = sample_batch(env, policy, config.episodes_per_iteration, seeds, config.max_steps, pool)
            means = episode_returns(batch, config.discount).mean(axis=0)
            J = dict(zip(env.channels, means.tolist()))
            u = utility.value(J)
            if not math.isfinite(u):
                raise RuntimeError(f"utility diverged at iteration {k}: J = {J}")
            grads = estimate_policy_gradients(batch, policy, config.discount)
            J_safe, hit = utility.guard(J)
            if hit:
                clamp_hits += 1
                if clamp_hits > 1:
                    warnings.warn(f"channel means clamped away from a singular point ({clamp_hits} times)", RuntimeWarning)
            grad = utility_gradient(grads, J_safe, utility)
            policy.weights = adam.step(policy.weights, grad)
            record = {"iteration": k, **{f"J_{c}": J[c] for c in env.channels}, "utility": u,
                      "wall_time": time.perf_counter() - start}
            curve.append(record)
            log.debug("iteration %d: utility %.6g", k, u)
            if callback is not None:
                callback(record)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(policy.weights.copy(), curve)
