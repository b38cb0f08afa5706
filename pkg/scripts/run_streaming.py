"""Compare round-to-round stability when client pools drift mid-run.

Run:
    python3 scripts/run_streaming.py [--trials N] [--rounds N] [--out DIR]

Each client reveals its unlabeled pool in 10 staged steps over the run at
dirichlet alpha 0.1, so the reachable data distribution shifts while
training. Per-batch teacher EMA (ts_client_ema, fedswitch) should damp the
resulting accuracy wobble relative to plain FedProx-FixMatch; the metric
is the trailing-window accuracy standard deviation from each trial's
summary.txt.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from fedssl import parse_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent

ARMS = (
    ("fedprox_fixmatch", "0.0"),
    ("ts_client_ema", "0.0"),
    ("fedswitch", "auto"),
)


def trailing_stds(exp_dir: Path) -> list[float]:
    """Pull trailing_accuracy_std out of every trial summary under exp_dir."""
    vals = []
    for f in sorted(exp_dir.glob("trial_*/summary.txt")):
        for line in f.read_text(encoding="utf-8").splitlines():
            key, _, raw = line.partition(" = ")
            if key == "trailing_accuracy_std":
                vals.append(float(raw))
    return vals


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/streaming", help="output root")
    ap.add_argument("--trials", type=int, default=None, help="override trial count")
    ap.add_argument("--rounds", type=int, default=None, help="override round count")
    args = ap.parse_args()

    base = parse_config(ROOT / "configs" / "desk_scale.ini")
    base = replace(base, shard=replace(base.shard, dirichlet_alpha=0.1, streaming_steps=10))
    if args.trials is not None:
        base = replace(base, trials=args.trials)
    if args.rounds is not None:
        base = replace(base, training=replace(base.training, rounds=args.rounds))

    for kind, beta in ARMS:
        out_dir = Path(args.out) / kind
        cfg = replace(
            base,
            variant=replace(base.variant, kind=kind, iidness_prior=beta if beta == "auto" else float(beta)),
            output=str(out_dir),
        )
        trials = run_experiment(cfg)
        accs = [t.final_accuracy for t in trials]
        stds = trailing_stds(out_dir)
        print(f"  {kind:18s} final {np.mean(accs):.4f}"
              f"  trailing std {np.mean(stds):.5f} (per trial: "
              + ", ".join(f"{s:.5f}" for s in stds) + ")")


if __name__ == "__main__":
    main()
