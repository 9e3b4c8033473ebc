"""Command-line interface.

Subcommands:

* ``train``  -- run training for a config (single seed writes the learning
  curve CSV; ``--seeds`` compares curriculum modes and writes a summary CSV).
* ``eval``   -- evaluate a saved policy on a config's target distribution.
* ``verify`` -- randomized closed-form-vs-oracle, finite-difference and
  timing suites; exits nonzero on any violation.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 runtime warnings escalated by ``--warnings-as-errors``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, available_presets, load_config, preset_path
from .harness import (
    evaluate,
    evaluate_run,
    records_to_csv,
    run_multi_seed,
    run_training,
    summary_to_csv,
    verify,
)
from .learner import load_policy, save_policy

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY = 2
EXIT_WARNINGS = 3


def _resolve_config(raw: str):
    path = Path(raw)
    if path.exists():
        return load_config(path)
    return load_config(preset_path(raw))


def _add_common(parser):
    parser.add_argument("--config", required=True, help="config file path or preset name")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spgl",
        description="Self-paced Gaussian curriculum learning for contextual tasks.",
        epilog=f"shipped presets: {', '.join(available_presets())}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training experiment")
    _add_common(train)
    train.add_argument("--out", default=None, help="output CSV path")
    train.add_argument(
        "--curriculum",
        choices=("default", "spgl", "numerical"),
        default=None,
        help="override the config's curriculum mode",
    )
    train.add_argument(
        "--seeds", default=None, help="comma-separated seeds for a multi-seed comparison"
    )
    train.add_argument(
        "--compare",
        default="default,spgl",
        help="curriculum modes compared in multi-seed runs",
    )
    train.add_argument("--save-policy", default=None, help="save the final policy (npz)")
    train.add_argument(
        "--warnings-as-errors",
        action="store_true",
        help="exit 3 when degenerate curriculum updates occurred",
    )

    ev = sub.add_parser("eval", help="evaluate a saved policy on the target distribution")
    _add_common(ev)
    ev.add_argument("--policy", required=True, help="policy file from train --save-policy")
    ev.add_argument("--episodes", type=int, default=None, help="evaluation episode count")

    ver = sub.add_parser("verify", help="run the randomized verification suites")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--instances", type=int, default=100, help="instances per suite")
    ver.add_argument("--no-timing", action="store_true", help="skip the wall-clock comparison")
    ver.add_argument(
        "--timing-updates", type=int, default=50, help="updates in the timing comparison"
    )
    ver.add_argument(
        "--perturb",
        type=float,
        default=0.0,
        help="fault injection: corrupt closed forms by this relative amount",
    )
    ver.add_argument("--quiet", action="store_true")
    return parser


def _cmd_train(args) -> int:
    config = _resolve_config(args.config)
    seed = config.seed if args.seed is None else args.seed

    if args.seeds is not None:
        seeds = [int(s) for s in args.seeds.replace(",", " ").split()]
        modes = [m.strip() for m in args.compare.split(",") if m.strip()]
        summaries, all_records = run_multi_seed(config, seeds, modes=modes)
        out = Path(args.out or f"{config.name}_summary.csv")
        out.write_text(summary_to_csv(summaries))
        for (mode, run_seed), records in all_records.items():
            curve_path = out.with_name(f"{out.stem}_{mode}_seed{run_seed}.csv")
            curve_path.write_text(records_to_csv(records, config.target.d))
        if not args.quiet:
            print(summary_to_csv(summaries), end="")
            print(f"summary written to {out}")
        return EXIT_OK

    mode = args.curriculum or config.curriculum_mode
    progress = None
    if not args.quiet:

        def progress(record):
            if record.iteration % 50 == 0:
                print(
                    f"iter {record.iteration:5d}  return {record.mean_return:8.3f}  "
                    f"success {record.success_rate:5.1f}%  kl {record.kl_to_target:10.4g}  "
                    f"step {record.step_kind}"
                )

    result = run_training(config, seed, curriculum_mode=mode, progress=progress)
    out = Path(args.out or f"{config.name}_{mode}_seed{seed}.csv")
    out.write_text(records_to_csv(result.records, config.target.d))
    ev = evaluate_run(config, result, seed)
    if args.save_policy:
        save_policy(result.policy, args.save_policy)
    if not args.quiet:
        print(f"curve written to {out}")
        print(
            f"final eval: return {ev.mean_return:.3f} +- {ev.return_se:.3f}, "
            f"success {ev.success_rate:.1f}% +- {ev.success_se:.1f}"
        )
    if args.warnings_as_errors and result.degenerate_updates > 0:
        print(f"{result.degenerate_updates} degenerate updates occurred", file=sys.stderr)
        return EXIT_WARNINGS
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _resolve_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    policy = load_policy(args.policy)
    env = config.make_environment()
    episodes = args.episodes or config.eval_episodes
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10_000]))
    ev = evaluate(policy, config.target, env, episodes, rng, config.learner)
    print(
        f"return {ev.mean_return:.6g} +- {ev.return_se:.3g}, "
        f"success {ev.success_rate:.6g}% +- {ev.success_se:.3g} "
        f"({episodes} episodes)"
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = verify(
        seed=args.seed,
        instance_count=args.instances,
        perturb=args.perturb,
        include_timing=not args.no_timing,
        timing_updates=args.timing_updates,
    )
    if not args.quiet:
        for line in report.format_lines():
            print(line)
    return EXIT_OK if report.passed else EXIT_VERIFY


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error("unknown command")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
