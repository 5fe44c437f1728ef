"""Independent reference computations used to validate the simulator.

* ``dejmps_density_matrix`` runs the DEJMPS circuit on a 4-qubit density matrix
  (local rotations, bilateral CNOT, coincidence post-selection) instead of
  using the closed-form coefficient map.
* ``transition_groups`` is a hand transcription of the MDP transition tables,
  with probabilities as sympy expressions in ``p_gen`` and ``p``.
* ``ToyMDP`` is a three-state MDP small enough to enumerate every episode, so
  expected returns and their gradients are available exactly.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from .environments import TERMINAL, Action, MdpState, make_env
from .quantum import BellDiagonalState, LinkParameters, dejmps_distill, depolarize, distill_werner

# ---------------------------------------------------------------------------
# DEJMPS on density matrices

_S = 1 / math.sqrt(2)
# Phi+, Psi-, Psi+, Phi- in the computational basis |00>, |01>, |10>, |11>
BELL_BASIS = np.array([[_S, 0, 0, _S], [0, _S, -_S, 0], [0, _S, _S, 0], [_S, 0, 0, -_S]])


def bell_diagonal_matrix(coeffs) -> np.ndarray:
    return np.einsum("k,ki,kj->ij", np.asarray(coeffs, dtype=float), BELL_BASIS, BELL_BASIS)


def bell_coefficients(rho: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("ki,ij,kj->k", BELL_BASIS, rho, BELL_BASIS))


def _rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _cnot(control: int, target: int, n: int = 4) -> np.ndarray:
    dim = 2**n
    U = np.zeros((dim, dim))
    for i in range(dim):
        bits = [(i >> (n - 1 - k)) & 1 for k in range(n)]
        if bits[control]:
            bits[target] ^= 1
        U[sum(b << (n - 1 - k) for k, b in enumerate(bits)), i] = 1
    return U


# qubit order: A1 B1 A2 B2 (Alice holds A*, Bob holds B*)
_LOCAL = np.kron(np.kron(_rx(math.pi / 2), _rx(-math.pi / 2)), np.kron(_rx(math.pi / 2), _rx(-math.pi / 2)))
_CIRCUIT = _cnot(1, 3) @ _cnot(0, 2) @ _LOCAL


def dejmps_density_matrix(c1, c2) -> tuple[np.ndarray, float]:
    """Simulate one DEJMPS round on two Bell-diagonal pairs.

    Returns:
        (Bell coefficients of the kept pair, probability that the two target
        measurements coincide).
    """
    rho = np.kron(bell_diagonal_matrix(c1), bell_diagonal_matrix(c2))
    rho = _CIRCUIT @ rho @ _CIRCUIT.conj().T
    r = rho.reshape([2] * 8)
    kept = sum(r[:, :, m, m, :, :, m, m].reshape(4, 4) for m in (0, 1))
    p_success = float(np.real(np.trace(kept)))
    return bell_coefficients(kept / p_success), p_success


def check_dejmps(n_pairs: int = 1000, seed: int = 0, tol: float = 1e-10) -> float:
    """Largest deviation between the closed form and the circuit over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        c1, c2 = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        out, ps = dejmps_distill(BellDiagonalState.from_vector(c1), BellDiagonalState.from_vector(c2))
        ref, ref_ps = dejmps_density_matrix(c1, c2)
        worst = max(worst, float(np.max(np.abs(np.asarray(out) - ref))), abs(ps - ref_ps))
    return worst


# ---------------------------------------------------------------------------
# transcribed transition tables

PG, P = sympy.symbols("p_gen p", positive=True)
_Q = 1 - PG  # failure probability of one generation attempt
_PBAR = 1 - P


@dataclass
class Row:
    prob: sympy.Expr
    next_state: Callable  # ctx -> MdpState | TERMINAL
    reward: Callable  # ctx -> tuple of quality rewards (time is implied by the action)


@dataclass
class TransitionGroup:
    env: str
    label: str
    state: Callable  # ctx -> MdpState
    action: Action
    rows: list


class _Ctx:
    """Concrete values substituted into a transcribed table."""

    def __init__(self, env_name: str, link: LinkParameters, pairs, p: float):
        self.env_name = env_name
        self.link = link
        self.bds = env_name == "bn2m2"
        self.p = p
        self.p_gen = link.p_gen
        f0 = link.initial_fidelity
        self.v0 = BellDiagonalState.werner(f0) if self.bds else f0
        self.zero = (0.0, 0.0, 0.0, 0.0) if self.bds else 0.0
        self.F1, self.F2, self.F3 = pairs

    def fid(self, v) -> float:
        return v[0] if self.bds else v

    def D(self, v):
        if self.bds:
            return tuple(depolarize(BellDiagonalState(*v), self.link.dt, self.link.coherence_time_s))
        lam = math.exp(-2 * self.link.dt / self.link.coherence_time_s)
        return lam * v + (1 - lam) / 4

    def P(self, v, w):
        if self.bds:
            return tuple(dejmps_distill(BellDiagonalState(*v), BellDiagonalState(*w))[0])
        return distill_werner(v, w)[0]

    def ps(self, v, w) -> float:
        if self.bds:
            return dejmps_distill(BellDiagonalState(*v), BellDiagonalState(*w))[1]
        return distill_werner(v, w)[1]

    def vmax(self, *vs):
        return max(vs, key=self.fid)

    def quality(self, v) -> tuple:
        if self.bds:
            a, b, c, _ = v
            return (b, c, 1 - a - b - c)
        return (v,)

    def none(self) -> tuple:
        return (0.0,) * (3 if self.bds else 1)


def _s(*slots_and_p):
    *slots, p = slots_and_p
    return lambda c: MdpState(tuple(s(c) if callable(s) else s for s in slots), p(c) if callable(p) else p)


def _two_memory(env: str) -> list:
    Z = lambda c: c.zero  # noqa: E731
    F0 = lambda c: c.v0  # noqa: E731
    F1 = lambda c: c.F1  # noqa: E731
    F2 = lambda c: c.F2  # noqa: E731
    DF1 = lambda c: c.D(c.F1)  # noqa: E731
    pp = lambda c: c.p  # noqa: E731
    T = lambda c: TERMINAL  # noqa: E731
    nil = lambda c: c.none()  # noqa: E731
    s00 = _s(Z, Z, 1.0)
    s10 = _s(F1, Z, 1.0)
    s12 = _s(F1, F2, 1.0)
    s1p = _s(F1, Z, pp)
    return [
        TransitionGroup(env, "(0,0,1) wait", s00, Action.WAIT, [
            Row(_Q**2, s00, nil),
            # one success out of two independent attempts
            Row(2 * PG * _Q, _s(F0, Z, 1.0), nil),
            Row(PG**2, _s(F0, F0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,0,1) consume", s10, Action.CONSUME, [Row(sympy.Integer(1), T, lambda c: c.quality(c.F1))]),
        TransitionGroup(env, "(F1,0,1) discard", s10, Action.DISCARD, [Row(sympy.Integer(1), s00, nil)]),
        TransitionGroup(env, "(F1,0,1) wait", s10, Action.WAIT, [
            Row(_Q, _s(DF1, Z, 1.0), nil),
            Row(PG, _s(DF1, F0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,1) consume", s12, Action.CONSUME, [
            Row(sympy.Integer(1), T, lambda c: c.quality(c.vmax(c.F1, c.F2))),
        ]),
        TransitionGroup(env, "(F1,F2,1) discard", s12, Action.DISCARD, [
            Row(sympy.Integer(1), _s(lambda c: c.vmax(c.F1, c.F2), Z, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,1) purify", s12, Action.PURIFY_12, [
            Row(sympy.Integer(1), _s(lambda c: c.P(c.F1, c.F2), Z, lambda c: c.ps(c.F1, c.F2)), nil),
        ]),
        TransitionGroup(env, "(F1,0,p) consume", s1p, Action.CONSUME, [
            Row(_PBAR, s00, nil),
            Row(P, T, lambda c: c.quality(c.F1)),
        ]),
        TransitionGroup(env, "(F1,0,p) wait", s1p, Action.WAIT, [
            Row(_PBAR * _Q, s00, nil),
            Row(_PBAR * PG, _s(F0, Z, 1.0), nil),
            Row(P * _Q, _s(DF1, Z, 1.0), nil),
            Row(P * PG, _s(DF1, F0, 1.0), nil),
        ]),
    ]


def _three_memory() -> list:
    env = "wn2m3"
    F0 = lambda c: c.v0  # noqa: E731
    F1 = lambda c: c.F1  # noqa: E731
    F2 = lambda c: c.F2  # noqa: E731
    F3 = lambda c: c.F3  # noqa: E731
    D1 = lambda c: c.D(c.F1)  # noqa: E731
    D2 = lambda c: c.D(c.F2)  # noqa: E731
    pp = lambda c: c.p  # noqa: E731
    T = lambda c: TERMINAL  # noqa: E731
    nil = lambda c: c.none()  # noqa: E731
    one = sympy.Integer(1)
    s000 = _s(0.0, 0.0, 0.0, 1.0)
    s100 = _s(F1, 0.0, 0.0, 1.0)
    s120 = _s(F1, F2, 0.0, 1.0)
    s123 = _s(F1, F2, F3, 1.0)
    s10p = _s(F1, 0.0, 0.0, pp)
    s12p = _s(F1, F2, 0.0, pp)

    def sorted3(c):
        return sorted((c.F1, c.F2, c.F3), reverse=True)

    return [
        TransitionGroup(env, "(0,0,0,1) wait", s000, Action.WAIT, [
            Row(_Q**3, s000, nil),
            Row(3 * _Q**2 * PG, _s(F0, 0.0, 0.0, 1.0), nil),
            Row(3 * _Q * PG**2, _s(F0, F0, 0.0, 1.0), nil),
            Row(PG**3, _s(F0, F0, F0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,0,0,1) consume", s100, Action.CONSUME, [Row(one, T, lambda c: (c.F1,))]),
        TransitionGroup(env, "(F1,0,0,1) discard", s100, Action.DISCARD, [Row(one, s000, nil)]),
        TransitionGroup(env, "(F1,0,0,1) wait", s100, Action.WAIT, [
            Row(_Q**2, _s(D1, 0.0, 0.0, 1.0), nil),
            Row(2 * _Q * PG, _s(D1, F0, 0.0, 1.0), nil),
            Row(PG**2, _s(D1, F0, F0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,0,1) consume", s120, Action.CONSUME, [Row(one, T, lambda c: (max(c.F1, c.F2),))]),
        TransitionGroup(env, "(F1,F2,0,1) discard", s120, Action.DISCARD, [
            Row(one, _s(lambda c: max(c.F1, c.F2), 0.0, 0.0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,0,1) wait", s120, Action.WAIT, [
            Row(_Q, _s(D1, D2, 0.0, 1.0), nil),
            Row(PG, _s(D1, D2, F0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,0,1) purify", s120, Action.PURIFY_12, [
            Row(one, _s(lambda c: c.P(c.F1, c.F2), 0.0, 0.0, lambda c: c.ps(c.F1, c.F2)), nil),
        ]),
        TransitionGroup(env, "(F1,F2,F3,1) consume", s123, Action.CONSUME, [
            Row(one, T, lambda c: (max(c.F1, c.F2, c.F3),)),
        ]),
        TransitionGroup(env, "(F1,F2,F3,1) discard", s123, Action.DISCARD, [
            Row(one, _s(lambda c: sorted3(c)[0], lambda c: sorted3(c)[1], 0.0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,F3,1) purify 1,2", s123, Action.PURIFY_12, [
            Row(one, _s(lambda c: c.P(c.F1, c.F2), F3, 0.0, lambda c: c.ps(c.F1, c.F2)), nil),
        ]),
        TransitionGroup(env, "(F1,F2,F3,1) purify 1,3", s123, Action.PURIFY_13, [
            Row(one, _s(lambda c: c.P(c.F1, c.F3), F2, 0.0, lambda c: c.ps(c.F1, c.F3)), nil),
        ]),
        TransitionGroup(env, "(F1,F2,F3,1) purify 2,3", s123, Action.PURIFY_23, [
            Row(one, _s(lambda c: c.P(c.F2, c.F3), F1, 0.0, lambda c: c.ps(c.F2, c.F3)), nil),
        ]),
        TransitionGroup(env, "(F1,0,0,p) consume", s10p, Action.CONSUME, [
            Row(P, T, lambda c: (c.F1,)),
            Row(_PBAR, s000, nil),
        ]),
        TransitionGroup(env, "(F1,0,0,p) wait", s10p, Action.WAIT, [
            Row(_Q**2 * _PBAR, s000, nil),
            Row(_Q**2 * P, _s(D1, 0.0, 0.0, 1.0), nil),
            Row(2 * PG * _Q * _PBAR, _s(F0, 0.0, 0.0, 1.0), nil),
            Row(2 * PG * _Q * P, _s(D1, F0, 0.0, 1.0), nil),
            Row(PG**2 * _PBAR, _s(F0, F0, 0.0, 1.0), nil),
            Row(PG**2 * P, _s(D1, F0, F0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,0,p) consume", s12p, Action.CONSUME, [
            Row(P, T, lambda c: (c.F1,)),
            Row(_PBAR, _s(F2, 0.0, 0.0, 1.0), nil),
        ]),
        TransitionGroup(env, "(F1,F2,0,p) purify", s12p, Action.PURIFY_12, [
            Row(one, _s(lambda c: c.P(c.F1, c.F2), 0.0, 0.0, lambda c: c.p * c.ps(c.F1, c.F2)), nil),
        ]),
        TransitionGroup(env, "(F1,F2,0,p) wait", s12p, Action.WAIT, [
            Row(_Q * _PBAR, _s(D2, 0.0, 0.0, 1.0), nil),
            Row(_Q * P, _s(D1, D2, 0.0, 1.0), nil),
            Row(PG * _PBAR, _s(D2, F0, 0.0, 1.0), nil),
            Row(PG * P, _s(D1, D2, F0, 1.0), nil),
        ]),
    ]


def transition_groups(env_name: str | None = None) -> list:
    groups = _two_memory("wn2m2") + _two_memory("bn2m2") + _three_memory()
    if env_name is not None:
        groups = [g for g in groups if g.env == env_name]
    return groups


def default_context(env_name: str, length_km: float = 20.0, f0: float = 0.9):
    """Concrete fidelities chosen so that max/min selections are non-trivial."""
    link = LinkParameters(length_km, f0)
    if env_name == "bn2m2":
        pairs = (
            BellDiagonalState(0.86, 0.07, 0.04, 0.03),
            BellDiagonalState(0.91, 0.02, 0.05, 0.02),
            None,
        )
    elif env_name == "wn2m3":
        pairs = (0.86, 0.93, 0.88)
    else:
        pairs = (0.87, 0.91, None)
    return _Ctx(env_name, link, pairs, 0.6)


def symbolic_total(group: TransitionGroup) -> sympy.Expr:
    return sympy.simplify(sum(r.prob for r in group.rows))


def _close(x, y, tol=1e-12) -> bool:
    if x is TERMINAL or y is TERMINAL:
        return x is y
    a = np.asarray([*np.ravel(np.asarray(x.slots, dtype=float)), x.p])
    b = np.asarray([*np.ravel(np.asarray(y.slots, dtype=float)), y.p])
    return a.shape == b.shape and bool(np.allclose(a, b, rtol=0, atol=tol))


@dataclass
class FrequencyCheck:
    label: str
    env: str
    samples: int
    counts: list
    expected: list
    max_sigma: float
    unmatched: int
    reward_mismatch: int

    @property
    def passed(self) -> bool:
        return self.unmatched == 0 and self.reward_mismatch == 0 and self.max_sigma <= 4.0


def check_group_frequencies(group: TransitionGroup, ctx, n_samples: int, seed: int = 0) -> FrequencyCheck:
    """Sample ``env.step`` from the group's state/action and compare with the transcription."""
    env = make_env(group.env, ctx.link)
    state = group.state(ctx)
    rng = np.random.default_rng(seed)
    step = env.step
    action = group.action
    if len(group.rows) == 1 and group.rows[0].prob == 1:
        # single-outcome rows must not draw randomness; the outcome is then a
        # pure function of the state and one call stands for every sample
        before = rng.bit_generator.state
        outcome = step(state, action, rng)
        drew = rng.bit_generator.state != before
        outcomes = Counter({outcome: n_samples})
    else:
        drew = True
        outcomes = Counter(step(state, action, rng) for _ in range(n_samples))
    probs = [float(r.prob.subs({PG: ctx.p_gen, P: ctx.p})) for r in group.rows]
    targets = [r.next_state(ctx) for r in group.rows]
    time_reward = env.dt if action == Action.WAIT else 0.0
    counts = [0] * len(group.rows)
    unmatched = reward_mismatch = 0
    for (nxt, reward), k in outcomes.items():
        idx = next((i for i, t in enumerate(targets) if _close(nxt, t)), None)
        if idx is None:
            unmatched += k
            continue
        counts[idx] += k
        want = (time_reward,) + tuple(group.rows[idx].reward(ctx))
        if not np.allclose(reward, want, rtol=0, atol=1e-12):
            reward_mismatch += k
    max_sigma = 0.0
    for k, q in zip(counts, probs):
        sd = math.sqrt(n_samples * q * (1 - q))
        dev = abs(k - n_samples * q)
        if sd > 0:
            max_sigma = max(max_sigma, dev / sd)
        elif dev > 0:
            max_sigma = math.inf
    if len(group.rows) == 1 and drew:
        max_sigma = math.inf
    return FrequencyCheck(group.label, group.env, n_samples, counts, probs, max_sigma, unmatched, reward_mismatch)


# ---------------------------------------------------------------------------
# enumerable toy MDP


class ToyMDP:
    """Three decision states with finitely many episodes.

    s0: WAIT -> s1 (prob 0.6) or s2 (prob 0.4), time 1;  CONSUME -> end, time 0.5, fidelity 0.8
    s1: CONSUME -> end, fidelity 0.97;  DISCARD -> end, time 1, fidelity 0.75
    s2: CONSUME -> end, time 0.5, fidelity 0.9 (single admissible action)
    """

    name = "toy"
    channels = ("time", "fidelity")
    actions = (Action.WAIT, Action.CONSUME, Action.DISCARD)
    feature_dim = 1
    S0 = MdpState((0.2,), 1.0)
    S1 = MdpState((0.9,), 1.0)
    S2 = MdpState((0.5,), 1.0)
    P_S1 = 0.6
    # state -> action -> list of (prob, next, (time, fidelity))
    DYNAMICS = {
        S0: {
            Action.WAIT: [(P_S1, S1, (1.0, 0.0)), (1 - P_S1, S2, (1.0, 0.0))],
            Action.CONSUME: [(1.0, TERMINAL, (0.5, 0.8))],
        },
        S1: {
            Action.CONSUME: [(1.0, TERMINAL, (0.0, 0.97))],
            Action.DISCARD: [(1.0, TERMINAL, (1.0, 0.75))],
        },
        S2: {Action.CONSUME: [(1.0, TERMINAL, (0.5, 0.9))]},
    }

    def initial_state(self):
        return self.S0

    def admissible_actions(self, state):
        if state is TERMINAL:
            raise ValueError("no actions are available in the terminal state")
        return tuple(self.DYNAMICS[state])

    def state_features(self, state):
        return np.asarray(state.slots, dtype=float)

    def step(self, state, action, rng):
        outcomes = self.DYNAMICS[state][action]
        u = rng.random()
        acc = 0.0
        for prob, nxt, reward in outcomes:
            acc += prob
            if u < acc:
                return nxt, reward
        return outcomes[-1][1], outcomes[-1][2]

    def episodes(self, policy):
        """Every possible episode as (probability, states, actions, rewards array)."""
        out = []

        def walk(state, prob, states, actions, rewards):
            if state is TERMINAL:
                out.append((prob, states, actions, np.asarray(rewards, dtype=float)))
                return
            probs = policy.action_probabilities(state)
            for a in self.admissible_actions(state):
                for q, nxt, r in self.DYNAMICS[state][a]:
                    walk(nxt, prob * probs[int(a)] * q, states + [state], actions + [a], rewards + [r])

        walk(self.S0, 1.0, [], [], [])
        return out

    def expected_returns(self, policy) -> dict:
        total = sum(prob * rewards.sum(axis=0) for prob, _, _, rewards in self.episodes(policy))
        return dict(zip(self.channels, np.asarray(total).tolist()))

    def exact_gradients(self, policy, gamma: float = 1.0) -> dict:
        """Score-function gradient summed exactly over all episodes."""
        from .optimizer import discounted_returns

        grads = {c: np.zeros_like(policy.weights) for c in self.channels}
        for prob, states, actions, rewards in self.episodes(policy):
            G = discounted_returns(rewards, gamma)
            for t, (s, a) in enumerate(zip(states, actions)):
                score = policy.log_prob_gradient(s, a)
                for c, name in enumerate(self.channels):
                    grads[name] += prob * gamma**t * G[t, c] * score
        return grads


def finite_difference(fn, weights: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a weight matrix."""
    grad = np.zeros_like(weights)
    for idx in itertools.product(*(range(n) for n in weights.shape)):
        w = weights.copy()
        w[idx] += h
        up = fn(w)
        w[idx] -= 2 * h
        down = fn(w)
        grad[idx] = (up - down) / (2 * h)
    return grad


def _rel_err(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-12))


def check_gradients(seed: int = 0, order: int = 2, h: float = 1e-5) -> dict:
    """Relative errors of analytic gradients against central differences on ``ToyMDP``.

    Checks the score function at every (state, admissible action), the exact
    per-channel gradients, and the chain-rule gradient of the BB84 Werner utility.
    """
    from .optimizer import BB84Werner, utility_gradient
    from .policy import FourierBasisSpec, SoftmaxPolicy

    toy = ToyMDP()
    policy = SoftmaxPolicy(toy, FourierBasisSpec(order, order, toy.feature_dim))
    policy.weights = np.random.default_rng(seed).normal(scale=0.5, size=policy.weights.shape)
    w0 = policy.weights.copy()

    def at(w, fn):
        policy.weights = w
        try:
            return fn()
        finally:
            policy.weights = w0

    errors = {"log_prob": 0.0}
    for state in (toy.S0, toy.S1, toy.S2):
        for a in toy.admissible_actions(state):
            fd = finite_difference(lambda w: at(w, lambda: math.log(policy.action_probabilities(state)[int(a)])), w0, h)
            errors["log_prob"] = max(errors["log_prob"], _rel_err(policy.log_prob_gradient(state, a), fd))

    exact = toy.exact_gradients(policy)
    for c in toy.channels:
        fd = finite_difference(lambda w: at(w, lambda: toy.expected_returns(policy)[c]), w0, h)
        errors[f"J_{c}"] = _rel_err(exact[c], fd)

    utility = BB84Werner()
    J = toy.expected_returns(policy)
    chain = utility_gradient(exact, J, utility)
    fd = finite_difference(lambda w: at(w, lambda: utility.value(toy.expected_returns(policy))), w0, h)
    errors["utility"] = _rel_err(chain, fd)
    return errors
