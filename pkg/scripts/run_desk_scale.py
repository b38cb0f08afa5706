"""Compare supervised-only, FedProx-FixMatch, and FedSwitch at desk scale.

Run:
    python3 scripts/run_desk_scale.py [--trials N] [--rounds N] [--out DIR]

All three arms share configs/desk_scale.ini; the supervised arm sets
lambda_u = 0 so unlabeled batches contribute nothing. Prints mean final
accuracy per arm, the pseudo-labeling gain over the supervised baseline,
and mean uplink traffic per trial.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from fedssl import parse_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent

ARMS = (
    ("supervised", "fedprox_fixmatch", 0.0),
    ("fedprox_fixmatch", "fedprox_fixmatch", 2.0),
    ("fedswitch", "fedswitch", 2.0),
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk_scale", help="output root")
    ap.add_argument("--trials", type=int, default=None, help="override trial count")
    ap.add_argument("--rounds", type=int, default=None, help="override round count")
    args = ap.parse_args()

    base = parse_config(ROOT / "configs" / "desk_scale.ini")
    if args.trials is not None:
        base = replace(base, trials=args.trials)
    if args.rounds is not None:
        base = replace(base, training=replace(base.training, rounds=args.rounds))

    finals = {}
    for name, kind, lam in ARMS:
        cfg = replace(
            base,
            variant=replace(base.variant, kind=kind),
            training=replace(base.training, lambda_u=lam),
            output=str(Path(args.out) / name),
        )
        trials = run_experiment(cfg)
        accs = [t.final_accuracy for t in trials]
        uplink = sum(t.uplink_bytes for t in trials) / len(trials)
        finals[name] = float(np.mean(accs))
        print(f"  {name:18s} final {np.mean(accs):.4f} +/- {np.std(accs):.4f}"
              f"  uplink {uplink / 1e6:.2f} MB/trial")

    print(f"pseudo-label gain over supervised: "
          f"{finals['fedprox_fixmatch'] - finals['supervised']:+.4f}")
    print(f"fedswitch vs fedprox_fixmatch:     "
          f"{finals['fedswitch'] - finals['fedprox_fixmatch']:+.4f}")


if __name__ == "__main__":
    main()
