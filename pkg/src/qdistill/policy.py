"""Softmax policies that are linear in Fourier-basis features, with action masking."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .environments import Action

POLICY_FORMAT = "qdistill-policy"
POLICY_FORMAT_VERSION = 1
MAX_FEATURES = 5_000_000


@dataclass(frozen=True)
class FourierBasisSpec:
    """Fourier basis over [0, 1]^m.

    Coupled ("dependent") terms use every integer coefficient vector whose
    entries are at most ``dependent_order``. Uncoupled ("independent") terms
    add single-axis coefficients above ``dependent_order`` up to
    ``independent_order``. Each term contributes a cosine and, if
    ``include_sine``, a sine feature. The constant feature comes first.
    """

    dependent_order: int
    independent_order: int
    feature_dim: int
    include_sine: bool = True

    def __post_init__(self):
        if self.dependent_order < 0 or self.independent_order < 0:
            raise ValueError("Fourier orders must be non-negative")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        n = self.num_features
        if n > MAX_FEATURES:
            raise ValueError(
                f"Fourier basis would have {n} features; lower dependent_order "
                f"for a {self.feature_dim}-dimensional state"
            )

    @property
    def num_features(self) -> int:
        d, i, m = self.dependent_order, self.independent_order, self.feature_dim
        per_term = 2 if self.include_sine else 1
        return 1 + per_term * ((d + 1) ** m - 1) + per_term * m * max(0, i - d)

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Dependent and independent coefficient matrices (zero vector excluded)."""
        m = self.feature_dim
        dep = [c for c in itertools.product(range(self.dependent_order + 1), repeat=m) if any(c)]
        ind = []
        for axis in range(m):
            for k in range(self.dependent_order + 1, self.independent_order + 1):
                c = [0] * m
                c[axis] = k
                ind.append(c)
        return (
            np.asarray(dep, dtype=float).reshape(len(dep), m),
            np.asarray(ind, dtype=float).reshape(len(ind), m),
        )

    def featurizer(self) -> "FourierFeaturizer":
        return FourierFeaturizer(self)


class FourierFeaturizer:
    def __init__(self, spec: FourierBasisSpec):
        self.spec = spec
        self.dep, self.ind = spec.coefficients()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.spec.feature_dim,):
            raise ValueError(f"expected a state vector of length {self.spec.feature_dim}, got shape {x.shape}")
        if np.any(x < -1e-12) or np.any(x > 1 + 1e-12) or not np.all(np.isfinite(x)):
            raise ValueError(f"state features must lie in [0, 1], got {x}")
        dep = np.pi * (self.dep @ x)
        ind = np.pi * (self.ind @ x)
        parts = [np.ones(1), np.cos(dep)]
        if self.spec.include_sine:
            parts.append(np.sin(dep))
        parts.append(np.cos(ind))
        if self.spec.include_sine:
            parts.append(np.sin(ind))
        return np.concatenate(parts)


def featurize(x, spec: FourierBasisSpec) -> np.ndarray:
    return FourierFeaturizer(spec)(x)


class SoftmaxPolicy:
    """Softmax over linear action preferences, restricted to admissible actions.

    Weights have one row per environment action (in ``Action`` order) and one
    column per Fourier feature. Features and action distributions are cached
    per state; the distribution cache is dropped whenever the weights change.
    """

    def __init__(self, env, basis: FourierBasisSpec, weights=None):
        if basis.feature_dim != env.feature_dim:
            raise ValueError(f"basis dimension {basis.feature_dim} does not match environment ({env.feature_dim})")
        self.env = env
        self.basis = basis
        self._featurizer = basis.featurizer()
        self._features = {}
        self._dist = {}
        shape = (len(env.actions), basis.num_features)
        self.weights = np.zeros(shape) if weights is None else weights

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @weights.setter
    def weights(self, value):
        value = np.array(value, dtype=float)
        expected = (len(self.env.actions), self.basis.num_features)
        if value.shape != expected:
            raise ValueError(f"weights must have shape {expected}, got {value.shape}")
        if not np.all(np.isfinite(value)):
            raise ValueError("weights must be finite")
        self._weights = value
        self._dist = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_dist"] = {}
        return state

    def features(self, state) -> np.ndarray:
        phi = self._features.get(state)
        if phi is None:
            phi = self._featurizer(self.env.state_features(state))
            self._features[state] = phi
        return phi

    def preferences(self, state) -> np.ndarray:
        return self._weights @ self.features(state)

    def _distribution(self, state):
        entry = self._dist.get(state)
        if entry is None:
            admissible = list(self.env.admissible_actions(state))
            prefs = self.preferences(state)[admissible]
            prefs = np.exp(prefs - prefs.max())
            probs = np.zeros(len(self.env.actions))
            probs[admissible] = prefs / prefs.sum()
            entry = (probs, np.cumsum(probs), admissible)
            self._dist[state] = entry
        return entry

    def action_probabilities(self, state) -> np.ndarray:
        """Probability of every action (zero for inadmissible ones)."""
        return self._distribution(state)[0]

    def sample(self, state, rng: np.random.Generator) -> Action:
        _, cum, admissible = self._distribution(state)
        idx = int(np.searchsorted(cum, rng.random(), side="right"))
        if idx >= len(cum) or idx not in admissible:
            idx = admissible[-1]
        return Action(idx)

    __call__ = sample

    def log_prob_gradient(self, state, action) -> np.ndarray:
        """Gradient of ln pi(state, action) with respect to the weights."""
        probs = self.action_probabilities(state)
        a = int(action)
        if probs[a] <= 0:
            raise ValueError(f"action {Action(a)!r} has zero probability in {state}")
        coef = -probs.copy()
        coef[a] += 1.0
        return np.outer(coef, self.features(state))

    def greedy_action(self, state) -> Action:
        return Action(int(np.argmax(self.action_probabilities(state))))

    def greedy(self) -> "GreedyPolicy":
        return GreedyPolicy(self)


class GreedyPolicy:
    """Deterministic argmax version of a softmax policy (weights frozen at creation)."""

    def __init__(self, policy: SoftmaxPolicy):
        self._policy = SoftmaxPolicy(policy.env, policy.basis, policy.weights)
        self._policy._features = policy._features
        self._cache = {}

    def __call__(self, state, rng=None) -> Action:
        action = self._cache.get(state)
        if action is None:
            action = self._policy.greedy_action(state)
            self._cache[state] = action
        return action


def save_policy(path, policy: SoftmaxPolicy) -> None:
    """Write weights and basis header to an ``.npz`` file (bit-exact round trip)."""
    link = policy.env.link
    header = {
        "format": POLICY_FORMAT,
        "version": POLICY_FORMAT_VERSION,
        "env": policy.env.name,
        "dependent_order": policy.basis.dependent_order,
        "independent_order": policy.basis.independent_order,
        "feature_dim": policy.basis.feature_dim,
        "include_sine": policy.basis.include_sine,
        "link": {k: getattr(link, k) for k in link.__dataclass_fields__},
    }
    with open(path, "wb") as fh:
        np.savez(fh, weights=policy.weights, header=np.array(json.dumps(header, sort_keys=True)))


def read_policy_file(path) -> tuple[dict, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        weights = data["weights"].copy()
    if header.get("format") != POLICY_FORMAT:
        raise ValueError(f"{path} is not a policy file")
    if header.get("version") != POLICY_FORMAT_VERSION:
        raise ValueError(f"unsupported policy file version {header.get('version')}")
    return header, weights


def load_policy(path, env) -> SoftmaxPolicy:
    header, weights = read_policy_file(path)
    if header["env"] != env.name:
        raise ValueError(f"policy was trained on {header['env']}, not {env.name}")
    basis = FourierBasisSpec(
        header["dependent_order"], header["independent_order"], header["feature_dim"], header["include_sine"]
    )
    return SoftmaxPolicy(env, basis, weights)


def fourier_lipschitz_bound(coeff: np.ndarray) -> float:
    """Lipschitz constant of cos/sin(pi <c, x>) w.r.t. the max-norm."""
    return math.pi * float(np.abs(coeff).sum())
