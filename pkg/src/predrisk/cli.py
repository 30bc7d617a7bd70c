"""Command-line entry points: run, toy, verify, and sweep."""

from __future__ import annotations

import argparse
import sys

from .experiments import EXPERIMENTS, LOSSES, desk_config, run_experiment, run_sweep


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--loss", choices=LOSSES, default=None)
    parser.add_argument("--m", type=int, default=None)
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument(
        "--lambda-mode", choices=("beta-nm", "lambda-star", "explicit"), default=None
    )
    parser.add_argument("--lambda-value", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--n-train", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--lr0", type=float, default=None)
    parser.add_argument("--decay-rate", type=float, default=None)
    parser.add_argument("--decay-steps", type=int, default=None)
    parser.add_argument("--eval-samples", type=int, default=None)
    parser.add_argument("--out", dest="out_dir", default=None)


_RUN_FIELDS = (
    "loss",
    "m",
    "beta",
    "lambda_mode",
    "lambda_value",
    "seed",
    "n_train",
    "steps",
    "lr0",
    "decay_rate",
    "decay_steps",
    "eval_samples",
    "out_dir",
)


def _config_from_args(experiment: str, args: argparse.Namespace):
    overrides = {
        name: getattr(args, name)
        for name in _RUN_FIELDS
        if getattr(args, name, None) is not None
    }
    return desk_config(experiment, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predrisk",
        description="Train and evaluate multisample predictive-risk objectives "
        "on the synthetic experiments, or verify the bound inequalities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one experiment and emit its reports")
    run.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    _add_run_flags(run)

    toy = sub.add_parser("toy", help="run the six toy-model solvers and summarize")
    toy.add_argument("--seed", type=int, default=None)
    toy.add_argument("--n-train", type=int, default=None)
    toy.add_argument("--beta", type=float, default=None)
    toy.add_argument("--out", dest="out_dir", default=None)

    verify = sub.add_parser("verify", help="run the inequality and chain checks")
    verify.add_argument("--trials", type=int, default=None)
    verify.add_argument("--seed", type=int, default=None)
    verify.add_argument("--out", dest="out_dir", default=None)

    sweep = sub.add_parser("sweep", help="fan a config out over seeds and losses")
    sweep.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        result = run_experiment(_config_from_args(args.experiment, args))
        summary = result.summary
        if result.kind == "train":
            print(
                f"{args.experiment} loss={result.config.loss} seed={result.config.seed}: "
                f"lpp={summary['lpp_nats']:.4f} nats, "
                f"kl_to_truth={summary['kl_to_truth_nats']:.4f} nats"
            )
        if result.kind == "verify":
            return 0 if summary["all_passed"] else 1
        return 0
    if args.command == "toy":
        overrides = {
            k: v
            for k, v in (
                ("seed", args.seed),
                ("n_train", args.n_train),
                ("beta", args.beta),
                ("out_dir", args.out_dir),
            )
            if v is not None
        }
        result = run_experiment(desk_config("toy", **overrides))
        for name in result.summary["risk_order"]:
            bits = result.summary["risks"][name]["kl_bits"]
            print(f"{name:>9}: KL(truth || predictive) = {bits:8.4f} bits")
        return 0
    if args.command == "verify":
        overrides = {
            k: v
            for k, v in (
                ("trials", args.trials),
                ("seed", args.seed),
                ("out_dir", args.out_dir),
            )
            if v is not None
        }
        result = run_experiment(desk_config("verify", **overrides))
        for check in result.checks:
            status = "pass" if check["passed"] else "FAIL"
            print(
                f"{status}  {check['name']:<24} trials={check['trials']:<8} "
                f"violations={check['violations']} worst_slack={check['worst_slack']:.3e}"
            )
        return 0 if result.summary["all_passed"] else 1
    if args.command == "sweep":
        run_sweep(args.config)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
