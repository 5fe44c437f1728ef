"""Experiment orchestration: configuration, evaluation, link-length sweeps and result files.

Configuration files use INI syntax (``configparser``) with one section per
module::

    [experiment]
    environment = wn2m3
    utility = bb84
    link_lengths_km = 5, 10, 15
    f0 = 0.9
    seed = 0
    scale = 0.1

    [trainer]
    learning_rate = 0.00025

Anything not given falls back to the reference hyperparameter table for the
(environment, utility, F0, length) combination.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import GridSearchSpec, ThresholdPolicy, grid_search, write_grid_table
from .environments import MAX_EPISODE_STEPS, make_env, rollout_totals
from .optimizer import TrainerConfig, make_utility, train
from .policy import FourierBasisSpec, SoftmaxPolicy, save_policy
from .quantum import LinkParameters

log = logging.getLogger(__name__)

DEFAULT_LENGTHS_KM = tuple(float(x) for x in range(5, 55, 5))

# (env, utility, f0, lengths or None for any) -> (lr, dependent order, independent order, iterations, episodes)
HYPERPARAMETERS = [
    ("wn2m2", "bb84", 0.9, None, (1e-4, 5, 20, 500, 10_000)),
    ("wn2m2", "bb84", 0.83, None, (1e-4, 5, 20, 500, 10_000)),
    ("bn2m2", "bb84", 0.9, None, (2.5e-4, 2, 20, 250, 10_000)),
    ("bn2m2", "bb84", 0.83, tuple(range(5, 45, 5)), (1e-4, 5, 20, 500, 10_000)),
    ("bn2m2", "bb84", 0.83, (45,), (5e-5, 2, 10, 250, 100_000)),
    ("bn2m2", "bb84", 0.83, (50,), (1e-4, 2, 2, 500, 10_000)),
    ("wn2m3", "bb84", 0.9, None, (2.5e-4, 5, 5, 200, 10_000)),
    ("wn2m3", "bb84", 0.83, (5, 10, 15, 20, 25, 30, 40, 45), (2.5e-4, 5, 5, 500, 10_000)),
    ("wn2m3", "bb84", 0.83, (35, 50), (1e-4, 5, 5, 250, 10_000)),
    ("wn2m3", "six_state", 0.9, None, (2.5e-4, 5, 5, 500, 10_000)),
    ("wn2m3", "six_state", 0.83, None, (2.5e-4, 5, 5, 500, 10_000)),
]


def _protocol(utility: str) -> str:
    return "six_state" if utility.lower().replace("-", "_").startswith("six") else "bb84"


def hyperparameters(env: str, utility: str, f0: float, length_km: float) -> dict:
    """Published training hyperparameters for a setting, with a nearest-row fallback.

    Unlisted combinations take the closest row for the same environment,
    preferring a matching protocol, then a matching F0.
    """
    env, proto = env.lower(), _protocol(utility)

    def matches(row, use_proto, use_f0, use_len):
        r_env, r_proto, r_f0, r_len, _ = row
        return (r_env == env and (not use_proto or r_proto == proto) and (not use_f0 or abs(r_f0 - f0) < 1e-9)
                and (not use_len or r_len is None or any(abs(length_km - x) < 1e-9 for x in r_len)))

    for flags in ((True, True, True), (True, True, False), (False, True, True), (True, False, False), (False, False, False)):
        rows = [r for r in HYPERPARAMETERS if matches(r, *flags)]
        if rows:
            lr, dep, ind, iters, eps = rows[0][4]
            return {"learning_rate": lr, "dependent_order": dep, "independent_order": ind,
                    "iterations": iters, "episodes_per_iteration": eps}
    raise ValueError(f"no hyperparameters for environment {env!r}")


def scaled(n: int, scale: float, minimum: int = 1) -> int:
    return max(minimum, int(round(n * scale)))


# ---------------------------------------------------------------------------
# configuration


_TRAINER_KEYS = {"learning_rate", "iterations", "episodes_per_iteration", "discount", "adam_beta1",
                 "adam_beta2", "adam_epsilon", "max_steps"}
_LINK_KEYS = {"attenuation_length_km", "k_loss", "coherence_time_s", "signal_speed_km_per_s"}


@dataclass
class ExperimentConfig:
    environment: str = "wn2m2"
    utility: str = "bb84"
    link_lengths_km: tuple = DEFAULT_LENGTHS_KM
    f0: float = 0.9
    link: dict = field(default_factory=dict)
    trainer: dict = field(default_factory=dict)
    basis: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    eval_trials: int = 10
    eval_episodes_per_trial: int = 250_000
    output_dir: str = "results"
    seed: int = 0
    scale: float = 1.0
    workers: int = 1

    def __post_init__(self):
        self.environment = self.environment.lower()
        # validates the environment name, F0 and utility kind
        make_utility(self.utility, make_env(self.environment, LinkParameters(10.0, self.f0)))
        self.link_lengths_km = tuple(float(x) for x in self.link_lengths_km)
        if not self.link_lengths_km or any(not x > 0 for x in self.link_lengths_km):
            raise ValueError("link_lengths_km must be a non-empty list of positive lengths")
        for name, allowed in (("link", _LINK_KEYS), ("trainer", _TRAINER_KEYS),
                              ("basis", {"dependent_order", "independent_order", "include_sine"}),
                              ("baseline", {"consume_range", "discard_range", "step", "eval_episodes"})):
            unknown = set(getattr(self, name)) - allowed
            if unknown:
                raise ValueError(f"unknown {name} option(s): {sorted(unknown)}")
        if self.eval_trials < 1 or self.eval_episodes_per_trial < 1:
            raise ValueError("eval_trials and eval_episodes_per_trial must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    # resolved settings -----------------------------------------------------
    def link_parameters(self, length_km: float) -> LinkParameters:
        return LinkParameters(float(length_km), self.f0, **self.link)

    def _table(self, length_km: float) -> dict:
        return hyperparameters(self.environment, self.utility, self.f0, length_km)

    def trainer_config(self, length_km: float, workers: int = 1) -> TrainerConfig:
        table = self._table(length_km)
        opts = {k: table[k] for k in ("learning_rate", "iterations", "episodes_per_iteration")}
        opts.update(self.trainer)
        opts["iterations"] = scaled(int(opts["iterations"]), self.scale)
        opts["episodes_per_iteration"] = scaled(int(opts["episodes_per_iteration"]), self.scale)
        return TrainerConfig(seed=self.seed, workers=workers, **opts)

    def basis_spec(self, env, length_km: float) -> FourierBasisSpec:
        table = self._table(length_km)
        return FourierBasisSpec(
            int(self.basis.get("dependent_order", table["dependent_order"])),
            int(self.basis.get("independent_order", table["independent_order"])),
            env.feature_dim,
            bool(self.basis.get("include_sine", True)),
        )

    def grid_spec(self) -> GridSearchSpec:
        default = GridSearchSpec.for_initial_fidelity(self.f0)
        opts = {**dataclasses.asdict(default), **self.baseline}
        opts["eval_episodes"] = scaled(int(opts["eval_episodes"]), self.scale)
        return GridSearchSpec(tuple(opts["consume_range"]), tuple(opts["discard_range"]), float(opts["step"]),
                              opts["eval_episodes"])

    @property
    def trials(self) -> int:
        # at least two trials so that a confidence interval exists
        return scaled(self.eval_trials, self.scale, minimum=2)

    @property
    def episodes_per_trial(self) -> int:
        return scaled(self.eval_episodes_per_trial, self.scale)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["link_lengths_km"] = list(self.link_lengths_km)
        d.pop("output_dir")
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        """SHA-256 of every setting that influences results (not output_dir or workers)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment file; raises ValueError on malformed content."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ValueError(f"malformed config {path}: {exc}") from exc
    known = {"experiment", "link", "trainer", "basis", "baseline", "evaluation"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")

    kwargs = {}
    try:
        if parser.has_section("experiment"):
            exp = dict(parser["experiment"])
            converters = {"environment": str, "utility": str, "link_lengths_km": _floats, "f0": float,
                          "output_dir": str, "seed": int, "scale": float, "workers": int}
            for key, value in exp.items():
                if key not in converters:
                    raise ValueError(f"unknown experiment option {key!r}")
                kwargs[key] = converters[key](value)
        if parser.has_section("evaluation"):
            for key, value in parser["evaluation"].items():
                if key == "trials":
                    kwargs["eval_trials"] = int(value)
                elif key == "episodes_per_trial":
                    kwargs["eval_episodes_per_trial"] = int(value)
                else:
                    raise ValueError(f"unknown evaluation option {key!r}")
        if parser.has_section("link"):
            kwargs["link"] = {k: float(v) for k, v in parser["link"].items()}
        if parser.has_section("trainer"):
            ints = {"iterations", "episodes_per_iteration", "max_steps"}
            kwargs["trainer"] = {k: int(v) if k in ints else float(v) for k, v in parser["trainer"].items()}
        if parser.has_section("basis"):
            sec = parser["basis"]
            kwargs["basis"] = {k: sec.getboolean(k) if k == "include_sine" else int(v) for k, v in sec.items()}
        if parser.has_section("baseline"):
            sec = dict(parser["baseline"])
            base = {}
            for k, v in sec.items():
                if k in ("consume_range", "discard_range"):
                    base[k] = _floats(v)
                elif k == "eval_episodes":
                    base[k] = int(v)
                else:
                    base[k] = float(v)
            kwargs["baseline"] = base
    except ValueError as exc:
        raise ValueError(f"malformed config {path}: {exc}") from exc
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    channels: tuple
    trial_means: list  # one dict of channel means per trial
    trial_utilities: list
    mean: float
    ci95: float
    reldiff: float | None = None

    def with_reldiff(self, baseline: "EvaluationReport") -> "EvaluationReport":
        return dataclasses.replace(self, reldiff=relative_difference(self.mean, baseline.mean))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def __str__(self):
        text = f"utility {self.mean:.6g} +/- {self.ci95:.3g} (95% CI, {len(self.trial_utilities)} trials)"
        if self.reldiff is not None:
            text += f", reldiff {self.reldiff:+.2%}"
        return text


def relative_difference(u_rl: float, u_baseline: float) -> float:
    if u_baseline == 0:
        return math.nan
    return (u_rl - u_baseline) / u_baseline


def confidence_half_width(values) -> float:
    """Normal-approximation 95% half-width of the mean."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return math.nan
    return float(1.96 * values.std(ddof=1) / math.sqrt(len(values)))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def evaluate_policy(env, policy, trials: int, episodes_per_trial: int, utility, seed: int = 0,
                    max_steps: int = MAX_EPISODE_STEPS) -> EvaluationReport:
    """Monte Carlo evaluation: per trial, utility of the channel means (clamped at zero)."""
    if trials < 1 or episodes_per_trial < 1:
        raise ValueError("trials and episodes_per_trial must be positive")
    trial_means, utilities = [], []
    for k in range(trials):
        totals = rollout_totals(env, policy, episodes_per_trial, trial_rng(seed, k), max_steps)
        J = dict(zip(env.channels, totals.mean(axis=0).tolist()))
        if J["time"] == 0:
            raise ValueError(f"trial {k}: mean time return is zero, so the key rate is undefined ({J})")
        trial_means.append(J)
        utilities.append(utility.skr(J))
    return EvaluationReport(tuple(env.channels), trial_means, utilities, float(np.mean(utilities)),
                            confidence_half_width(utilities))


# ---------------------------------------------------------------------------
# result records


def report_rows(report: EvaluationReport, config: ExperimentConfig, length_km: float, policy_kind: str) -> list:
    rows = []
    for k, (J, u) in enumerate(zip(report.trial_means, report.trial_utilities)):
        rows.append({
            "env": config.environment,
            "utility": config.utility,
            "f0": config.f0,
            "length_km": float(length_km),
            "policy_kind": policy_kind,
            "trial": k,
            **{f"J_{c}": J[c] for c in report.channels},
            "utility_value": u,
            "ci95": report.ci95,
            "seed": config.seed,
            "config_hash": config.config_hash(),
        })
    return rows


_INT_COLUMNS = {"trial", "seed", "iteration"}
_STR_COLUMNS = {"env", "utility", "policy_kind", "config_hash"}


def write_records(path, records) -> None:
    """CSV with full-precision floats (``repr``) so that reading it back is exact."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    fields = list(records[0])
    for r in records[1:]:
        fields.extend(k for k in r if k not in fields)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _parse(key: str, value: str):
    if value == "":
        return None
    if key in _STR_COLUMNS:
        return value
    if key in _INT_COLUMNS:
        return int(value)
    try:
        return float(value)
    except ValueError:
        return value


def read_records(path) -> list:
    with open(path, newline="") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]


def curve_rows(curve, include_wall_time: bool = False) -> list:
    """Learning-curve records; wall time is dropped by default to keep files reproducible."""
    return [{k: v for k, v in rec.items() if include_wall_time or k != "wall_time"} for rec in curve]


# ---------------------------------------------------------------------------
# single runs


def train_policy(config: ExperimentConfig, length_km: float, callback=None):
    """Train a softmax policy for one link length; returns (policy, TrainResult)."""
    env = make_env(config.environment, config.link_parameters(length_km))
    utility = make_utility(config.utility, env)
    policy = SoftmaxPolicy(env, config.basis_spec(env, length_km))
    result = train(env, policy, utility, config.trainer_config(length_km, config.workers), callback)
    return policy, result


def run_length(config: ExperimentConfig, length_km: float) -> dict:
    """Baseline search, training and evaluation of both policies at one link length."""
    env = make_env(config.environment, config.link_parameters(length_km))
    utility = make_utility(config.utility, env)
    max_steps = int(config.trainer.get("max_steps", MAX_EPISODE_STEPS))
    best, table = grid_search(env, config.grid_spec(), utility, config.seed, max_steps)
    base_report = evaluate_policy(env, best, config.trials, config.episodes_per_trial, utility, config.seed, max_steps)

    single = config.replace(workers=1)
    policy, result = train_policy(single, length_km)
    rl_report = evaluate_policy(env, policy.greedy(), config.trials, config.episodes_per_trial, utility,
                                config.seed, max_steps).with_reldiff(base_report)
    return {
        "length_km": float(length_km),
        "thresholds": {"f_consume": best.f_consume, "f_discard": best.f_discard},
        "grid_table": table,
        "baseline": base_report,
        "rl": rl_report,
        "weights": policy.weights,
        "policy": policy,
        "curve": result.curve,
    }


def _run_length_safe(config, length_km):
    try:
        return run_length(config, length_km), None
    except Exception as exc:  # one failing length must not abort the sweep
        log.exception("length %s km failed", length_km)
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    records: list
    summary: dict
    failures: dict
    csv_path: Path | None = None
    plot_paths: list = field(default_factory=list)


def run_sweep(config: ExperimentConfig, out_dir=None, plots: bool = True) -> SweepResult:
    """Run every link length; failed lengths are logged in the summary and skipped.

    With ``config.workers > 1`` lengths run in parallel processes; all files are
    written here, by the parent process, in length order.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lengths = config.link_lengths_km
    if config.workers > 1 and len(lengths) > 1:
        with ProcessPoolExecutor(min(config.workers, len(lengths))) as pool:
            outcomes = list(pool.map(_run_length_safe, [config.replace(workers=1)] * len(lengths), lengths))
    else:
        outcomes = [_run_length_safe(config, L) for L in lengths]

    records, per_length, failures = [], [], {}
    for L, (res, err) in zip(lengths, outcomes):
        if res is None:
            failures[str(L)] = err
            continue
        tag = f"L{L:g}km"
        records += report_rows(res["baseline"], config, L, "baseline")
        records += report_rows(res["rl"], config, L, "rl")
        write_grid_table(out / f"grid_{tag}.csv", res["grid_table"])
        write_records(out / f"curve_{tag}.csv", curve_rows(res["curve"]))
        save_policy(out / f"policy_{tag}.npz", res["policy"])
        per_length.append({
            "length_km": L,
            "thresholds": res["thresholds"],
            "baseline_utility": res["baseline"].mean,
            "baseline_ci95": res["baseline"].ci95,
            "rl_utility": res["rl"].mean,
            "rl_ci95": res["rl"].ci95,
            "reldiff": res["rl"].reldiff,
        })

    summary = {"config": config.to_dict(), "config_hash": config.config_hash(), "lengths": per_length,
               "failures": failures}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    result = SweepResult(records, summary, failures)
    if records:
        result.csv_path = out / "results.csv"
        write_records(result.csv_path, records)
        if plots:
            result.plot_paths = plot_results(result.csv_path, out)
    return result


# ---------------------------------------------------------------------------
# plots


def plot_results(csv_path, out_dir) -> list:
    """Utility and reldiff versus link length, drawn only from the CSV on disk."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_records(csv_path)
    out_dir = Path(out_dir)
    stats = {}
    for r in rows:
        stats.setdefault(r["policy_kind"], {}).setdefault(r["length_km"], []).append(r["utility_value"])
    env, util = rows[0]["env"], rows[0]["utility"]

    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "qdistill", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind in sorted(stats):
            Ls = sorted(stats[kind])
            means = [np.mean(stats[kind][L]) for L in Ls]
            cis = [confidence_half_width(stats[kind][L]) for L in Ls]
            ax.errorbar(Ls, means, yerr=cis, marker="o", capsize=3, label=kind)
        ax.set_xlabel("link length L [km]")
        ax.set_ylabel("secret key rate [bits/s]")
        if all(np.mean(v) > 0 for s in stats.values() for v in s.values()):
            ax.set_yscale("log")
        ax.set_title(f"{env.upper()} {util}")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "utility_vs_length.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)

        if "rl" in stats and "baseline" in stats:
            Ls = sorted(set(stats["rl"]) & set(stats["baseline"]))
            rel = [relative_difference(np.mean(stats["rl"][L]), np.mean(stats["baseline"][L])) for L in Ls]
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(Ls, [100 * r for r in rel], marker="o")
            ax.axhline(0.0, color="grey", lw=0.8)
            ax.set_xlabel("link length L [km]")
            ax.set_ylabel("reldiff [%]")
            ax.set_title(f"{env.upper()} {util}: RL vs threshold baseline")
            fig.tight_layout()
            path = out_dir / "reldiff_vs_length.svg"
            fig.savefig(path, metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths


def threshold_policy(spec: str) -> ThresholdPolicy:
    """Parse ``"f_consume,f_discard"``."""
    parts = _floats(spec)
    if len(parts) != 2:
        raise ValueError(f"expected 'f_consume,f_discard', got {spec!r}")
    return ThresholdPolicy(*parts)
