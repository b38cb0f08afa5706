"""Multi-trial experiment runner and sweep grid.

Each trial derives independent seeds for sharding, model init, and the
round loop from (base seed, trial index, purpose tag), so trials differ in
exactly the ways a repeated experiment should. The generated dataset itself
is shared across trials, mirroring a fixed benchmark corpus.

All output files are deterministic byte-for-byte for a given config: floats
are written with repr(), rows in fixed order, no timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, resolved_ini
from .data import Dataset, ShardPlan, dirichlet_shard, gen_blobs, label_histogram, load_csv, make_stream_schedule
from .engine import init_server, run_round
from .metrics import CommLedger, RoundReport, stability_stats
from .nn import ModelSpec
from .rng import derive_seed
from .semisup import KlStats, kl_to_uniform
from .variants import VARIANT_KINDS, VariantConfig


@dataclass(frozen=True)
class TrialSummary:
    """One trial's headline numbers."""

    trial: int
    trial_seed: int
    final_accuracy: float
    best_accuracy: float
    rounds_to_threshold: int | None
    downlink_bytes: int
    uplink_bytes: int


@dataclass(frozen=True)
class TrialDiagnostics:
    """Secondary per-trial statistics used by summaries and sweep grids."""

    resolved_beta: float
    trailing_accuracy_std: float
    max_drawdown: float
    trailing_kl_ratio: float | None
    teacher_round_fraction: float


@dataclass(frozen=True)
class SweepCell:
    """One (variant, dirichlet alpha) grid point."""

    variant_kind: str
    dirichlet_alpha: float
    trials: tuple[TrialSummary, ...]


def _load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.generator == "blobs":
        train = gen_blobs(d.num_classes, d.dim, d.train_per_class, d.spread,
                          seed=derive_seed(cfg.seed, "train-data"))
        test = gen_blobs(d.num_classes, d.dim, d.eval_per_class, d.spread,
                         seed=derive_seed(cfg.seed, "eval-data"))
    else:
        train = load_csv(d.csv_path, d.num_classes, scale01=d.scale01)
        test = load_csv(d.eval_csv_path, d.num_classes, scale01=d.scale01)
        if train.dim != test.dim:
            raise ValueError(
                f"train and eval dimensions disagree: {train.dim} vs {test.dim}"
            )
    return train, test


def _truth_kl(shards, data: Dataset, num_classes: int) -> dict[int, float]:
    """Ground-truth KL-to-uniform of each client's unlabeled label mix."""
    return {
        sh.client_id: kl_to_uniform(label_histogram(data.labels[sh.unlabeled_idx], num_classes))
        for sh in shards
    }


def _ratio_row(client_kl: dict[int, KlStats], truth: dict[int, float]) -> tuple[float, float, float | None]:
    cids = sorted(client_kl)
    pseudo_mean = float(np.mean([client_kl[c].dkl_teacher for c in cids]))
    truth_mean = float(np.mean([truth[c] for c in cids]))
    ratios = [client_kl[c].dkl_teacher / truth[c] for c in cids if truth[c] > 0.0]
    ratio = float(np.mean(ratios)) if ratios else None
    return pseudo_mean, truth_mean, ratio


def _opt(value: float | None) -> str:
    return "" if value is None else repr(value)


def _run_trial(
    cfg: ExperimentConfig,
    trial: int,
    data: Dataset,
    eval_data: Dataset,
    spec: ModelSpec,
    out_dir: Path,
) -> tuple[TrialSummary, TrialDiagnostics]:
    trial_seed = derive_seed(cfg.seed, "trial", trial)
    plan = ShardPlan(
        num_clients=cfg.shard.num_clients,
        dirichlet_alpha=cfg.shard.dirichlet_alpha,
        labeled_per_client=cfg.shard.labeled_per_client,
        server_holds_labels=cfg.shard.server_holds_labels,
        seed=derive_seed(trial_seed, "shard"),
    )
    sharding = dirichlet_shard(data, plan)
    shards = sharding.shards
    pool = None
    if cfg.shard.server_holds_labels:
        idx = sharding.server_labeled_idx
        pool = Dataset(data.inputs[idx], data.labels[idx], cfg.dataset.num_classes)

    truth = _truth_kl(shards, data, cfg.dataset.num_classes)
    beta = cfg.variant.iidness_prior
    if beta == "auto":
        beta = float(np.mean([truth[sh.client_id] for sh in shards]))
    variant = VariantConfig(cfg.variant.kind, cfg.variant.resolved_alpha, beta)

    if cfg.shard.streaming_steps > 0:
        shards = [
            make_stream_schedule(sh, cfg.shard.streaming_steps,
                                 seed=derive_seed(trial_seed, "stream", sh.client_id))
            for sh in shards
        ]

    server = init_server(spec, variant, seed=derive_seed(trial_seed, "init"),
                         server_labeled_pool=pool)
    round_plan = cfg.training.round_plan(cfg.shard.num_clients)
    hyper = cfg.training.hyper()
    ledger = CommLedger(bytes_per_param=cfg.training.bytes_per_param)
    base_seed = derive_seed(trial_seed, "rounds")
    positions: dict[int, int] = {}

    reports: list[RoundReport] = []
    ratio_rows: list[tuple[int, float, float, float | None]] = []
    for _ in range(cfg.training.rounds):
        client_kl: dict[int, KlStats] = {}
        server, report = run_round(
            server, shards, variant, round_plan, hyper, spec, cfg.augment,
            data, eval_data, base_seed=base_seed, ledger=ledger,
            stream_positions=positions, client_kl_out=client_kl,
        )
        reports.append(report)
        pseudo_mean, truth_mean, ratio = _ratio_row(client_kl, truth)
        ratio_rows.append((report.round, pseudo_mean, truth_mean, ratio))

    out_dir.mkdir(parents=True, exist_ok=True)
    rounds_csv = [RoundReport.csv_header()] + [r.csv_row() for r in reports]
    (out_dir / "rounds.csv").write_text("\n".join(rounds_csv) + "\n", encoding="utf-8")

    tx_csv = ["round,direction,role,client_id,num_params,bytes"] + [
        f"{e.round},{e.direction},{e.role},{e.client_id},{e.num_params},{e.bytes}"
        for e in ledger.entries
    ]
    (out_dir / "transmissions.csv").write_text("\n".join(tx_csv) + "\n", encoding="utf-8")

    ratio_csv = ["round,pseudo_kl,truth_kl,ratio"] + [
        f"{rnd},{repr(p)},{repr(t)},{_opt(r)}" for rnd, p, t, r in ratio_rows
    ]
    (out_dir / "kl_ratio.csv").write_text("\n".join(ratio_csv) + "\n", encoding="utf-8")

    accs = [r.acc_student for r in reports]
    final_acc = accs[-1]
    best_acc = max(accs)
    rounds_to_threshold = None
    if cfg.accuracy_threshold is not None:
        for i, a in enumerate(accs):
            if a >= cfg.accuracy_threshold:
                rounds_to_threshold = i + 1
                break

    window = cfg.effective_window
    trailing_std, drawdown = stability_stats(reports, window)
    tail_ratios = [r for _, _, _, r in ratio_rows[-window:] if r is not None]
    trailing_ratio = float(np.mean(tail_ratios)) if tail_ratios else None
    teacher_rounds = sum(1 for r in reports if r.send_teacher)

    summary = TrialSummary(
        trial=trial,
        trial_seed=trial_seed,
        final_accuracy=final_acc,
        best_accuracy=best_acc,
        rounds_to_threshold=rounds_to_threshold,
        downlink_bytes=ledger.total_bytes("downlink"),
        uplink_bytes=ledger.total_bytes("uplink"),
    )
    diag = TrialDiagnostics(
        resolved_beta=beta,
        trailing_accuracy_std=trailing_std,
        max_drawdown=drawdown,
        trailing_kl_ratio=trailing_ratio,
        teacher_round_fraction=teacher_rounds / len(reports),
    )

    lines = [
        f"trial = {trial}",
        f"trial_seed = {trial_seed}",
        f"variant = {variant.kind}",
        f"ema_alpha = {repr(variant.ema_alpha)}",
        f"iidness_prior = {repr(beta)}",
        f"final_accuracy = {repr(final_acc)}",
        f"best_accuracy = {repr(best_acc)}",
        f"rounds_to_threshold = {rounds_to_threshold if rounds_to_threshold is not None else 'none'}",
        f"downlink_bytes = {summary.downlink_bytes}",
        f"uplink_bytes = {summary.uplink_bytes}",
        f"stability_window = {window}",
        f"trailing_accuracy_std = {repr(trailing_std)}",
        f"max_drawdown = {repr(drawdown)}",
        f"trailing_kl_ratio = {_opt(trailing_ratio) or 'none'}",
        f"teacher_round_fraction = {repr(diag.teacher_round_fraction)}",
    ]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary, diag


def _run_all(cfg: ExperimentConfig) -> tuple[list[TrialSummary], list[TrialDiagnostics]]:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.ini").write_text(resolved_ini(cfg), encoding="utf-8")

    data, eval_data = _load_datasets(cfg)
    spec = ModelSpec(
        input_dim=data.dim,
        hidden_dims=cfg.training.hidden_dims,
        num_classes=cfg.dataset.num_classes,
    )

    summaries: list[TrialSummary] = []
    diags: list[TrialDiagnostics] = []
    for t in range(cfg.trials):
        try:
            summary, diag = _run_trial(cfg, t, data, eval_data, spec,
                                       out / f"trial_{t:03d}")
        except (ValueError, RuntimeError) as exc:
            raise RuntimeError(f"trial {t}: {exc}") from exc
        summaries.append(summary)
        diags.append(diag)

    finals = [s.final_accuracy for s in summaries]
    mean = float(np.mean(finals))
    std = float(np.std(finals))
    lines = [
        f"trials = {cfg.trials}",
        f"final_accuracy_mean = {repr(mean)}",
        f"final_accuracy_std = {repr(std)}",
        f"best_accuracy_mean = {repr(float(np.mean([s.best_accuracy for s in summaries])))}",
        f"downlink_bytes_total = {sum(s.downlink_bytes for s in summaries)}",
        f"uplink_bytes_total = {sum(s.uplink_bytes for s in summaries)}",
        "",
    ]
    for s in summaries:
        lines.append(
            f"trial {s.trial}: seed={s.trial_seed} "
            f"final={repr(s.final_accuracy)} best={repr(s.best_accuracy)}"
        )
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{cfg.variant.kind}: final accuracy {mean:.4f} ± {std:.4f} "
          f"over {cfg.trials} trial(s)")
    return summaries, diags


def run_experiment(cfg: ExperimentConfig) -> list[TrialSummary]:
    """Run all trials of one experiment; write outputs under cfg.output."""
    return _run_all(cfg)[0]


def _alpha_tag(alpha: float) -> str:
    return f"alpha_{alpha:g}"


def run_sweep(
    cfg: ExperimentConfig,
    alphas: list[float],
    kinds: list[str],
) -> list[SweepCell]:
    """Cartesian (variant x dirichlet alpha) grid; one full experiment per
    cell under cfg.output/<kind>/alpha_<a>/ plus a grid CSV at the root.
    """
    if not alphas or not kinds:
        raise ValueError("sweep needs at least one alpha and one variant")
    for kind in kinds:
        if kind not in VARIANT_KINDS:
            raise ValueError(f"unknown variant '{kind}'")
    for alpha in alphas:
        if alpha <= 0:
            raise ValueError(f"dirichlet alpha must be positive, got {alpha}")

    root = Path(cfg.output)
    cells: list[SweepCell] = []
    rows = [
        "variant,dirichlet_alpha,final_accuracy_mean,final_accuracy_std,"
        "best_accuracy_mean,trailing_accuracy_std_mean,kl_ratio_mean,"
        "downlink_bytes_mean,uplink_bytes_mean"
    ]
    for kind in kinds:
        for alpha in alphas:
            sub = replace(
                cfg,
                shard=replace(cfg.shard, dirichlet_alpha=float(alpha)),
                variant=replace(cfg.variant, kind=kind),
                output=str(root / kind / _alpha_tag(alpha)),
            )
            summaries, diags = _run_all(sub)
            cells.append(SweepCell(kind, float(alpha), tuple(summaries)))

            finals = [s.final_accuracy for s in summaries]
            ratios = [d.trailing_kl_ratio for d in diags if d.trailing_kl_ratio is not None]
            rows.append(",".join([
                kind,
                repr(float(alpha)),
                repr(float(np.mean(finals))),
                repr(float(np.std(finals))),
                repr(float(np.mean([s.best_accuracy for s in summaries]))),
                repr(float(np.mean([d.trailing_accuracy_std for d in diags]))),
                _opt(float(np.mean(ratios)) if ratios else None),
                repr(float(np.mean([s.downlink_bytes for s in summaries]))),
                repr(float(np.mean([s.uplink_bytes for s in summaries]))),
            ]))

    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return cells
