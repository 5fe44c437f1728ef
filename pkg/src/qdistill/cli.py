"""Command-line front end: ``python -m qdistill <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, oracles
from .baseline import grid_search, write_grid_table
from .environments import make_env
from .optimizer import make_utility
from .policy import load_policy, read_policy_file, save_policy
from .quantum import LinkParameters


def _add_common(p: argparse.ArgumentParser, lengths_many: bool = False) -> None:
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--env", choices=["wn2m2", "bn2m2", "wn2m3"], type=str.lower)
    p.add_argument("--utility", help="bb84 or six_state (or an explicit kind such as bb84_werner)")
    if lengths_many:
        p.add_argument("--length-km", help="comma-separated link lengths")
    else:
        p.add_argument("--length-km", type=float)
    p.add_argument("--f0", type=float, help="initial fidelity of generated pairs")
    p.add_argument("--scale", type=float, help="multiplies episodes, iterations, trials and eval episodes")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdistill", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a softmax policy at one link length")
    _add_common(p)

    p = sub.add_parser("evaluate", help="evaluate a saved policy or a threshold policy")
    _add_common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--policy", help="policy file written by 'train'")
    group.add_argument("--thresholds", help="threshold policy as 'f_consume,f_discard'")

    p = sub.add_parser("baseline-search", help="grid search over threshold-policy parameters")
    _add_common(p)

    p = sub.add_parser("sweep", help="baseline + RL over a range of link lengths")
    _add_common(p, lengths_many=True)

    p = sub.add_parser("oracle-check", help="run the independent reference checks")
    p.add_argument("--samples", type=int, default=10**6, help="samples per transition-table row group")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args, single_length: bool) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    changes = {}
    for attr, key in (("env", "environment"), ("utility", "utility"), ("f0", "f0"), ("seed", "seed"),
                      ("scale", "scale"), ("workers", "workers"), ("out", "output_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[key] = value
    if args.length_km is not None:
        changes["link_lengths_km"] = (args.length_km,) if single_length else harness._floats(args.length_km)
    cfg = cfg.replace(**changes) if changes else cfg
    return cfg


def _single_length(cfg: harness.ExperimentConfig, args) -> float:
    if args.length_km is None and len(cfg.link_lengths_km) != 1:
        raise ValueError("give --length-km (or a config with exactly one link length)")
    return cfg.link_lengths_km[0]


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def cmd_train(args) -> int:
    cfg = _config(args, single_length=True)
    L = _single_length(cfg, args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy, result = harness.train_policy(cfg, L, callback=lambda r: logging.info("iteration %d utility %.6g",
                                                                                     r["iteration"], r["utility"]))
    save_policy(out / "policy.npz", policy)
    harness.write_records(out / "learning_curve.csv", harness.curve_rows(result.curve))
    final = result.curve[-1]["utility"] if result.curve else float("nan")
    print(f"trained {cfg.environment} at L = {L:g} km: final batch utility {final:.6g}")
    print(f"policy written to {out / 'policy.npz'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args, single_length=True)
    if args.policy:
        header, _ = read_policy_file(args.policy)
        # environment settings default to those the policy was trained with
        changes = {}
        if args.env is None:
            changes["environment"] = header["env"]
        if args.f0 is None:
            changes["f0"] = header["link"]["initial_fidelity"]
        if args.length_km is None:
            changes["link_lengths_km"] = (header["link"]["link_length_km"],)
        cfg = cfg.replace(**changes) if changes else cfg
    L = cfg.link_lengths_km[0] if args.length_km is None else args.length_km
    env = make_env(cfg.environment, cfg.link_parameters(L))
    utility = make_utility(cfg.utility, env)
    if args.policy:
        policy, kind = load_policy(args.policy, env).greedy(), "rl"
    else:
        policy, kind = harness.threshold_policy(args.thresholds), "baseline"
    max_steps = int(cfg.trainer.get("max_steps", harness.MAX_EPISODE_STEPS))
    report = harness.evaluate_policy(env, policy, cfg.trials, cfg.episodes_per_trial, utility, cfg.seed, max_steps)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_records(out / "evaluation.csv", harness.report_rows(report, cfg, L, kind))
    _write_json(out / "evaluation.json", {"config_hash": cfg.config_hash(), "length_km": L, "policy_kind": kind,
                                          **report.to_dict()})
    print(f"{cfg.environment} L = {L:g} km, {kind}: {report}")
    return 0


def cmd_baseline_search(args) -> int:
    cfg = _config(args, single_length=True)
    L = _single_length(cfg, args)
    env = make_env(cfg.environment, cfg.link_parameters(L))
    utility = make_utility(cfg.utility, env)
    max_steps = int(cfg.trainer.get("max_steps", harness.MAX_EPISODE_STEPS))
    best, table = grid_search(env, cfg.grid_spec(), utility, cfg.seed, max_steps)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_grid_table(out / "grid.csv", table)
    _write_json(out / "baseline.json", {"config_hash": cfg.config_hash(), "length_km": L,
                                        "f_consume": best.f_consume, "f_discard": best.f_discard})
    print(f"best thresholds at L = {L:g} km: f_consume = {best.f_consume:g}, f_discard = {best.f_discard:g}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args, single_length=False)
    result = harness.run_sweep(cfg)
    for row in result.summary["lengths"]:
        print(f"L = {row['length_km']:g} km: baseline {row['baseline_utility']:.6g}, RL {row['rl_utility']:.6g}, "
              f"reldiff {row['reldiff']:+.2%}")
    for L, err in result.failures.items():
        print(f"L = {L} km failed: {err}", file=sys.stderr)
    print(f"results in {cfg.output_dir}")
    return 0 if result.records else 1


def cmd_oracle_check(args) -> int:
    ok = True
    worst = oracles.check_dejmps(1000, seed=args.seed)
    passed = worst < 1e-10
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} DEJMPS density-matrix circuit: max deviation {worst:.2e}")

    errors = oracles.check_gradients(seed=args.seed)
    passed = max(errors.values()) < 1e-4
    ok &= passed
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    print(f"{'PASS' if passed else 'FAIL'} gradients vs finite differences: {detail}")

    for env_name in ("wn2m2", "bn2m2", "wn2m3"):
        ctx = oracles.default_context(env_name)
        for group in oracles.transition_groups(env_name):
            total = oracles.symbolic_total(group)
            check = oracles.check_group_frequencies(group, ctx, args.samples, seed=args.seed)
            passed = total == 1 and check.passed
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'} {env_name} {group.label}: sum {total}, "
                  f"max deviation {check.max_sigma:.2f} sigma")
    return 0 if ok else 1


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline-search": cmd_baseline_search,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError, OSError) as exc:
        print(f"qdistill {args.command}: error: {exc}", file=sys.stderr)
        return 2
