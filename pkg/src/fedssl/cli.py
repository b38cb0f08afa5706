"""Command-line entry point: run, sweep, and validate experiment configs."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ExperimentConfig, parse_config, resolved_ini
from .runner import run_experiment, run_sweep
from .variants import VARIANT_KINDS


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("config", help="path to an INI experiment config")
    sub.add_argument("--out", help="override the output directory")
    sub.add_argument("--trials", type=int, help="override the trial count")
    sub.add_argument("--seed", type=int, help="override the base seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedssl",
        description="Deterministic federated semi-supervised learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment (all trials)")
    _add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="run a variant x dirichlet-alpha grid")
    _add_common(sweep_p)
    sweep_p.add_argument("--alphas", type=float, nargs="+", required=True,
                         help="dirichlet alpha values")
    sweep_p.add_argument("--variants", nargs="+", required=True,
                         choices=VARIANT_KINDS, help="variant kinds")

    val_p = sub.add_parser("validate", help="parse a config and echo it resolved")
    _add_common(val_p)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(parse_config(args.config), args)
        if args.command == "validate":
            print(resolved_ini(cfg), end="")
        elif args.command == "run":
            run_experiment(cfg)
        else:
            run_sweep(cfg, list(args.alphas), list(args.variants))
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
