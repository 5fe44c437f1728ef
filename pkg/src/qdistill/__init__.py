"""Entanglement-distillation control between two quantum network nodes.

Modules:
    quantum       Bell-diagonal states, decoherence, DEJMPS distillation, key rates
    environments  the WN2M2 / BN2M2 / WN2M3 decision processes
    policy        Fourier-basis softmax policies and their files
    optimizer     chain-rule policy-gradient training on key-rate utilities
    baseline      threshold heuristic and its grid search
    harness       experiment configs, evaluation, sweeps, CSV/JSON/SVG outputs
    oracles       independent reference computations used by the checks
"""
from .baseline import GridSearchSpec, ThresholdPolicy, baseline_action, grid_search
from .environments import BN2M2, TERMINAL, WN2M2, WN2M3, Action, MdpState, consume_asap, make_env, run_episode
from .harness import EvaluationReport, ExperimentConfig, evaluate_policy, load_config, run_sweep
from .optimizer import Adam, TrainerConfig, make_utility, train, utility_gradient
from .policy import FourierBasisSpec, SoftmaxPolicy, load_policy, save_policy
from .quantum import (
    BellDiagonalState,
    LinkParameters,
    WernerState,
    dejmps_distill,
    depolarize,
    distill_werner,
    skr_bb84_bds,
    skr_bb84_werner,
    skr_six_state,
    skr_six_state_werner,
)

__version__ = "0.1.0"

__all__ = [
    "Action", "Adam", "BN2M2", "BellDiagonalState", "EvaluationReport", "ExperimentConfig", "FourierBasisSpec",
    "GridSearchSpec", "LinkParameters", "MdpState", "SoftmaxPolicy", "TERMINAL", "ThresholdPolicy",
    "TrainerConfig", "WN2M2", "WN2M3", "WernerState", "baseline_action", "consume_asap", "dejmps_distill",
    "depolarize", "distill_werner", "evaluate_policy", "grid_search", "load_config", "load_policy", "make_env",
    "make_utility", "run_episode", "run_sweep", "save_policy", "skr_bb84_bds", "skr_bb84_werner", "skr_six_state",
    "skr_six_state_werner", "train", "utility_gradient",
]
