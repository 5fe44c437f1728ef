"""Bell-diagonal state algebra, memory decoherence, DEJMPS distillation and
secret-key-rate utilities.

Bell coefficients are ordered (A, B, C, D) over the Bell basis
(Phi+, Psi-, Psi+, Phi-). Phi+ is the reference state, so the fidelity of a
state is its A coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

SUM_TOL = 1e-12
DRIFT_LIMIT = 1e-6


class BellDiagonalState(NamedTuple):
    """Bell coefficients of a two-qubit Bell-diagonal state."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def werner(cls, fidelity: float) -> "BellDiagonalState":
        rest = (1.0 - fidelity) / 3.0
        return cls(float(fidelity), rest, rest, rest)

    @classmethod
    def from_vector(cls, vec) -> "BellDiagonalState":
        return _normalized(tuple(float(x) for x in vec))

    @property
    def fidelity(self) -> float:
        return self.a

    def validate(self) -> "BellDiagonalState":
        for x in self:
            if not (-SUM_TOL <= x <= 1.0 + SUM_TOL) or math.isnan(x):
                raise ValueError(f"Bell coefficient out of [0, 1]: {tuple(self)}")
        if abs(sum(self) - 1.0) > SUM_TOL:
            raise ValueError(f"Bell coefficients do not sum to 1: {tuple(self)}")
        return self


@dataclass(frozen=True)
class WernerState:
    """Werner state parametrised by its fidelity to Phi+."""

    fidelity: float

    def __post_init__(self):
        if not 0.25 - SUM_TOL <= self.fidelity <= 1.0 + SUM_TOL:
            raise ValueError(f"Werner fidelity must lie in [0.25, 1], got {self.fidelity}")

    def to_bds(self) -> BellDiagonalState:
        return BellDiagonalState.werner(self.fidelity)


@dataclass(frozen=True)
class LinkParameters:
    """Physical parameters of the link between the two nodes.

    Attributes:
        link_length_km: fibre length between the nodes.
        initial_fidelity: fidelity F0 of freshly heralded Werner pairs.
        attenuation_length_km: fibre attenuation length.
        k_loss: extra loss factor beyond fibre transmissivity.
        coherence_time_s: memory coherence time Tc.
        signal_speed_km_per_s: speed of light in fibre.
    """

    link_length_km: float
    initial_fidelity: float = 0.9
    attenuation_length_km: float = 22.0
    k_loss: float = 0.9
    coherence_time_s: float = 0.1
    signal_speed_km_per_s: float = 200_000.0

    def __post_init__(self):
        if self.link_length_km < 0:
            raise ValueError("link_length_km must be non-negative")
        if self.attenuation_length_km <= 0:
            raise ValueError("attenuation_length_km must be positive")
        if not 0.0 <= self.k_loss <= 1.0:
            raise ValueError("k_loss must lie in [0, 1]")
        if self.coherence_time_s <= 0:
            raise ValueError("coherence_time_s must be positive")
        if self.signal_speed_km_per_s <= 0:
            raise ValueError("signal_speed_km_per_s must be positive")
        if not 0.25 < self.initial_fidelity <= 1.0:
            raise ValueError("initial_fidelity must lie in (0.25, 1]")

    @property
    def dt(self) -> float:
        """Duration of one heralded generation attempt (one-way delay)."""
        return self.link_length_km / self.signal_speed_km_per_s

    @property
    def p_gen(self) -> float:
        return generation_probability(self)


def generation_probability(params: LinkParameters) -> float:
    """Success probability of one heralded generation attempt, K * exp(-L/L_att)."""
    return params.k_loss * math.exp(-params.link_length_km / params.attenuation_length_km)


def _normalized(coeffs) -> BellDiagonalState:
    total = sum(coeffs)
    drift = abs(total - 1.0)
    if drift > DRIFT_LIMIT or math.isnan(total):
        raise ValueError(f"Bell coefficients drifted from unit sum by {drift:.3g}")
    if drift > SUM_TOL:
        coeffs = tuple(x / total for x in coeffs)
    return BellDiagonalState(*(min(max(x, 0.0), 1.0) for x in coeffs))


def decay_factor(elapsed_s: float, coherence_time_s: float) -> float:
    """Weight exp(-2t/Tc) kept by a pair after both qubits depolarize for t seconds."""
    if elapsed_s < 0:
        raise ValueError("elapsed time must be non-negative")
    if coherence_time_s <= 0:
        raise ValueError("coherence time must be positive")
    return math.exp(-2.0 * elapsed_s / coherence_time_s)


def depolarize(state: BellDiagonalState, elapsed_s: float, coherence_time_s: float) -> BellDiagonalState:
    """Apply independent single-qubit depolarizing memory noise to both halves of a pair."""
    lam = decay_factor(elapsed_s, coherence_time_s)
    mix = (1.0 - lam) / 4.0
    return _normalized(tuple(lam * x + mix for x in state))


def depolarize_fidelity(fidelity: float, elapsed_s: float, coherence_time_s: float) -> float:
    lam = decay_factor(elapsed_s, coherence_time_s)
    return lam * fidelity + (1.0 - lam) / 4.0


def dejmps_distill(s1: BellDiagonalState, s2: BellDiagonalState) -> tuple[BellDiagonalState, float]:
    """Distil two Bell-diagonal pairs with DEJMPS.

    Returns:
        The post-selected output state and the success probability.
    """
    a1, b1, c1, d1 = s1
    a2, b2, c2, d2 = s2
    p_success = (a1 + b1) * (a2 + b2) + (c1 + d1) * (c2 + d2)
    if a1 >= 0.25 and a2 >= 0.25:
        # valid MDP pairs never fall below this floor
        assert p_success >= 0.25 - SUM_TOL, p_success
    if p_success <= 0.0:
        raise ValueError("distillation has zero success probability")
    out = (
        (a1 * a2 + b1 * b2) / p_success,
        (c1 * d2 + c2 * d1) / p_success,
        (c1 * c2 + d1 * d2) / p_success,
        (a1 * b2 + a2 * b1) / p_success,
    )
    return _normalized(out), p_success


def twirl_to_werner(state: BellDiagonalState) -> WernerState:
    """Symmetrise a Bell-diagonal state into the Werner state of equal fidelity."""
    return WernerState(state.a)


@lru_cache(maxsize=1 << 16)
def distill_werner(f1: float, f2: float) -> tuple[float, float]:
    """DEJMPS on two Werner pairs followed by twirling.

    Returns:
        (output fidelity, success probability).
    """
    out, p_success = dejmps_distill(BellDiagonalState.werner(f1), BellDiagonalState.werner(f2))
    return twirl_to_werner(out).fidelity, p_success


def _xlog2x(x: float) -> float:
    if x <= 0.0:
        return 0.0
    return x * math.log2(x)


def _clamp_prob(p: float) -> float:
    if p < -SUM_TOL or p > 1.0 + SUM_TOL:
        raise ValueError(f"probability argument out of range: {p}")
    return min(max(p, 0.0), 1.0)


def binary_entropy(p: float) -> float:
    p = _clamp_prob(p)
    return -_xlog2x(p) - _xlog2x(1.0 - p)


def shannon_entropy(probs) -> float:
    return -sum(_xlog2x(_clamp_prob(x)) for x in probs)


def _check_time(time_s: float) -> None:
    if not time_s > 0:
        raise ValueError("time must be positive")


def skr_bb84_bds(state: BellDiagonalState, time_s: float) -> float:
    """Asymptotic BB84 secret key rate for a Bell-diagonal state delivered every `time_s`."""
    _check_time(time_s)
    _, b, c, d = state
    return max(0.0, (1.0 - binary_entropy(b + c) - binary_entropy(b + d)) / time_s)


def skr_bb84_werner(fidelity: float, time_s: float) -> float:
    _check_time(time_s)
    return max(0.0, (1.0 - 2.0 * binary_entropy(2.0 / 3.0 * (1.0 - fidelity))) / time_s)


def skr_six_state(state: BellDiagonalState, time_s: float) -> float:
    """Asymptotic six-state secret key rate."""
    _check_time(time_s)
    return max(0.0, 1.0 - shannon_entropy(state)) / time_s


def skr_six_state_werner(fidelity: float, time_s: float) -> float:
    _check_time(time_s)
    f = _clamp_prob(fidelity)
    entropy = -_xlog2x(f) - (1.0 - f) * (math.log2((1.0 - f) / 3.0) if f < 1.0 else 0.0)
    return max(0.0, 1.0 - entropy) / time_s


def bb84_zero_rate_fidelity(tol: float = 1e-12) -> float:
    """Werner fidelity at which the BB84 key rate crosses zero, found by bisection."""
    lo, hi = 0.75, 1.0
    g = lambda f: 1.0 - 2.0 * binary_entropy(2.0 / 3.0 * (1.0 - f))  # noqa: E731
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def random_bds(rng: np.random.Generator, min_fidelity: float = 0.0) -> BellDiagonalState:
    """Draw a random Bell-diagonal state (uniform on the simplex, rejection on A)."""
    while True:
        vec = rng.dirichlet(np.ones(4))
        if vec[0] >= min_fidelity:
            return BellDiagonalState.from_vector(vec)
