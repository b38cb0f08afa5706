"""Experiment configuration: strict INI parsing with materialized defaults.

Unknown sections and keys are hard errors; silent typos are the main
reproducibility hazard. Every default is filled at parse time so the
resolved config written next to the results fully describes the run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data import AugmentConfig
from .engine import RoundPlan, TOPOLOGIES
from .semisup import SslHyper
from .variants import DEFAULT_EMA_ALPHA, VARIANT_KINDS

GENERATORS = ("blobs", "csv")


@dataclass(frozen=True)
class DatasetConfig:
    """Where examples come from: synthetic blobs or CSV files."""

    generator: str = "blobs"
    num_classes: int = 10
    dim: int = 16
    train_per_class: int = 420
    eval_per_class: int = 50
    spread: float = 0.35
    csv_path: str | None = None
    eval_csv_path: str | None = None
    scale01: bool = False

    def __post_init__(self) -> None:
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.train_per_class < 1 or self.eval_per_class < 1:
            raise ValueError("per-class example counts must be >= 1")
        if self.spread < 0:
            raise ValueError("spread must be non-negative")
        if self.generator == "csv" and not (self.csv_path and self.eval_csv_path):
            raise ValueError("generator = csv requires csv_path and eval_csv_path")


@dataclass(frozen=True)
class ShardConfig:
    """How the training pool is split across simulated clients."""

    num_clients: int = 20
    dirichlet_alpha: float = 100.0
    labeled_per_client: int = 10
    server_holds_labels: bool = False
    streaming_steps: int = 0

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.labeled_per_client < 0:
            raise ValueError("labeled_per_client must be non-negative")
        if self.streaming_steps < 0:
            raise ValueError("streaming_steps must be >= 0 (0 disables streaming)")


@dataclass(frozen=True)
class VariantSettings:
    """Variant choice with deferred hyper-parameters.

    ema_alpha = None means the per-kind default; iidness_prior may be the
    literal string "auto", resolved per trial to the mean ground-truth KL of
    the clients' unlabeled label distributions.
    """

    kind: str = "fedswitch"
    ema_alpha: float | None = None
    iidness_prior: float | str = 0.0

    def __post_init__(self) -> None:
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"kind must be one of {VARIANT_KINDS}")
        if self.ema_alpha is not None and not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in [0, 1]")
        if isinstance(self.iidness_prior, str):
            if self.iidness_prior != "auto":
                raise ValueError("iidness_prior must be a number or 'auto'")
        elif self.iidness_prior < 0:
            raise ValueError("iidness_prior must be non-negative")

    @property
    def resolved_alpha(self) -> float:
        if self.ema_alpha is not None:
            return self.ema_alpha
        # the teacherless baseline ignores the value; keep the field default
        return DEFAULT_EMA_ALPHA.get(self.kind, 0.999)


@dataclass(frozen=True)
class TrainConfig:
    """Round count, protocol shape, optimizer, and objective weights."""

    rounds: int = 300
    participation_rate: float = 0.25
    local_epochs: int = 1
    server_epochs: int = 1
    labeled_batch_size: int = 32
    unlabeled_batch_size: int = 64
    server_batch_size: int = 32
    learning_rate: float = 0.1
    server_learning_rate: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    topology: str = "labels_at_client"
    hidden_dims: tuple[int, ...] = (32,)
    bytes_per_param: int = 8
    tau: float = 0.95
    lambda_u: float = 1.0
    mu: float = 0.001

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims entries must be >= 1")
        # delegate the remaining ranges to the objects the runner builds
        self.round_plan(num_clients=1)
        self.hyper()

    def round_plan(self, num_clients: int) -> RoundPlan:
        return RoundPlan(
            num_clients=num_clients,
            participation_rate=self.participation_rate,
            local_epochs=self.local_epochs,
            server_epochs=self.server_epochs,
            topology=self.topology,
            labeled_batch_size=self.labeled_batch_size,
            unlabeled_batch_size=self.unlabeled_batch_size,
            server_batch_size=self.server_batch_size,
            learning_rate=self.learning_rate,
            server_learning_rate=self.server_learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            bytes_per_param=self.bytes_per_param,
        )

    def hyper(self) -> SslHyper:
        return SslHyper(tau=self.tau, lambda_u=self.lambda_u, mu=self.mu)


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment: every block present, every default filled."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    shard: ShardConfig = field(default_factory=ShardConfig)
    variant: VariantSettings = field(default_factory=VariantSettings)
    training: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    trials: int = 1
    seed: int = 0
    output: str = "runs/experiment"
    stability_window: int | None = None
    accuracy_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.output:
            raise ValueError("output directory must be non-empty")
        if self.stability_window is not None and self.stability_window < 1:
            raise ValueError("stability_window must be >= 1")
        if self.accuracy_threshold is not None and not 0.0 < self.accuracy_threshold <= 1.0:
            raise ValueError("accuracy_threshold must be in (0, 1]")
        server_side = self.training.topology != "labels_at_client"
        if server_side != self.shard.server_holds_labels:
            raise ValueError(
                "topology and labeled placement disagree: labels_at_server_* "
                "topologies require server_holds_labels = true and vice versa"
            )

    @property
    def effective_window(self) -> int:
        """Trailing-round window for stability stats: explicit, else 12.5%."""
        if self.stability_window is not None:
            return min(self.stability_window, self.training.rounds)
        return max(1, self.training.rounds // 8)


_SCHEMA: dict[str, tuple[str, ...]] = {
    "dataset": (
        "generator", "num_classes", "dim", "train_per_class", "eval_per_class",
        "spread", "csv_path", "eval_csv_path", "scale01",
    ),
    "shard": (
        "num_clients", "dirichlet_alpha", "labeled_per_client",
        "server_holds_labels", "streaming_steps",
    ),
    "variant": ("kind", "ema_alpha", "iidness_prior"),
    "training": (
        "rounds", "participation_rate", "local_epochs", "server_epochs",
        "labeled_batch_size", "unlabeled_batch_size", "server_batch_size",
        "learning_rate", "server_learning_rate", "momentum", "weight_decay",
        "topology", "hidden_dims", "bytes_per_param", "tau", "lambda_u", "mu",
    ),
    "augment": (
        "weak_noise_sigma", "weak_shift_fraction",
        "strong_noise_sigma", "strong_mask_prob",
    ),
    "run": ("trials", "seed", "output", "stability_window", "accuracy_threshold"),
}

_BOOLEANS = {"true": True, "yes": True, "1": True, "on": True,
             "false": False, "no": False, "0": False, "off": False}


class _Section:
    """Typed access to one INI section with path-qualified errors."""

    def __init__(self, name: str, raw: dict[str, str]):
        self.name = name
        self.raw = raw

    def _get(self, key: str) -> str | None:
        value = self.raw.get(key)
        if value is None or value.strip() == "":
            return None
        return value.strip()

    def string(self, key: str, default: str | None) -> str | None:
        value = self._get(key)
        return default if value is None else value

    def integer(self, key: str, default: int | None) -> int | None:
        value = self._get(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"[{self.name}] {key}: expected an integer, got '{value}'") from None

    def real(self, key: str, default: float | None) -> float | None:
        value = self._get(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"[{self.name}] {key}: expected a number, got '{value}'") from None

    def boolean(self, key: str, default: bool) -> bool:
        value = self._get(key)
        if value is None:
            return default
        flag = _BOOLEANS.get(value.lower())
        if flag is None:
            raise ValueError(f"[{self.name}] {key}: expected a boolean, got '{value}'")
        return flag

    def int_tuple(self, key: str, default: tuple[int, ...]) -> tuple[int, ...]:
        value = self._get(key)
        if value is None:
            return default
        try:
            return tuple(int(tok.strip()) for tok in value.split(",") if tok.strip())
        except ValueError:
            raise ValueError(
                f"[{self.name}] {key}: expected comma-separated integers, got '{value}'"
            ) from None

    def real_or_auto(self, key: str, default: float | str) -> float | str:
        value = self._get(key)
        if value is None:
            return default
        if value.lower() == "auto":
            return "auto"
        try:
            return float(value)
        except ValueError:
            raise ValueError(
                f"[{self.name}] {key}: expected a number or 'auto', got '{value}'"
            ) from None


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse INI text into a validated, fully defaulted ExperimentConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"config syntax error: {exc}") from None

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key '{key}' in [{section}]")

    def sec(name: str) -> _Section:
        return _Section(name, dict(parser[name]) if parser.has_section(name) else {})

    d = sec("dataset")
    dataset = DatasetConfig(
        generator=d.string("generator", "blobs"),
        num_classes=d.integer("num_classes", 10),
        dim=d.integer("dim", 16),
        train_per_class=d.integer("train_per_class", 420),
        eval_per_class=d.integer("eval_per_class", 50),
        spread=d.real("spread", 0.35),
        csv_path=d.string("csv_path", None),
        eval_csv_path=d.string("eval_csv_path", None),
        scale01=d.boolean("scale01", False),
    )

    s = sec("shard")
    shard = ShardConfig(
        num_clients=s.integer("num_clients", 20),
        dirichlet_alpha=s.real("dirichlet_alpha", 100.0),
        labeled_per_client=s.integer("labeled_per_client", 10),
        server_holds_labels=s.boolean("server_holds_labels", False),
        streaming_steps=s.integer("streaming_steps", 0),
    )

    v = sec("variant")
    variant = VariantSettings(
        kind=v.string("kind", "fedswitch"),
        ema_alpha=v.real("ema_alpha", None),
        iidness_prior=v.real_or_auto("iidness_prior", 0.0),
    )

    t = sec("training")
    training = TrainConfig(
        rounds=t.integer("rounds", 300),
        participation_rate=t.real("participation_rate", 0.25),
        local_epochs=t.integer("local_epochs", 1),
        server_epochs=t.integer("server_epochs", 1),
        labeled_batch_size=t.integer("labeled_batch_size", 32),
        unlabeled_batch_size=t.integer("unlabeled_batch_size", 64),
        server_batch_size=t.integer("server_batch_size", 32),
        learning_rate=t.real("learning_rate", 0.1),
        server_learning_rate=t.real("server_learning_rate", 0.1),
        momentum=t.real("momentum", 0.0),
        weight_decay=t.real("weight_decay", 0.0),
        topology=t.string("topology", "labels_at_client"),
        hidden_dims=t.int_tuple("hidden_dims", (32,)),
        bytes_per_param=t.integer("bytes_per_param", 8),
        tau=t.real("tau", 0.95),
        lambda_u=t.real("lambda_u", 1.0),
        mu=t.real("mu", 0.001),
    )
    if training.topology not in TOPOLOGIES:
        raise ValueError(f"[training] topology must be one of {TOPOLOGIES}")

    a = sec("augment")
    augment = AugmentConfig(
        weak_noise_sigma=a.real("weak_noise_sigma", 0.05),
        weak_shift_fraction=a.real("weak_shift_fraction", 0.02),
        strong_noise_sigma=a.real("strong_noise_sigma", 0.15),
        strong_mask_prob=a.real("strong_mask_prob", 0.2),
    )

    r = sec("run")
    return ExperimentConfig(
        dataset=dataset,
        shard=shard,
        variant=variant,
        training=training,
        augment=augment,
        trials=r.integer("trials", 1),
        seed=r.integer("seed", 0),
        output=r.string("output", "runs/experiment"),
        stability_window=r.integer("stability_window", None),
        accuracy_threshold=r.real("accuracy_threshold", None),
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def resolved_ini(cfg: ExperimentConfig) -> str:
    """Render a config with every default materialized.

    ema_alpha is written as the numeric value the run uses. iidness_prior
    stays 'auto' when set that way; its per-trial resolution is recorded in
    each trial summary instead.
    """
    sections: list[tuple[str, list[tuple[str, object]]]] = [
        ("dataset", [
            ("generator", cfg.dataset.generator),
            ("num_classes", cfg.dataset.num_classes),
            ("dim", cfg.dataset.dim),
            ("train_per_class", cfg.dataset.train_per_class),
            ("eval_per_class", cfg.dataset.eval_per_class),
            ("spread", cfg.dataset.spread),
            ("csv_path", cfg.dataset.csv_path),
            ("eval_csv_path", cfg.dataset.eval_csv_path),
            ("scale01", cfg.dataset.scale01),
        ]),
        ("shard", [
            ("num_clients", cfg.shard.num_clients),
            ("dirichlet_alpha", cfg.shard.dirichlet_alpha),
            ("labeled_per_client", cfg.shard.labeled_per_client),
            ("server_holds_labels", cfg.shard.server_holds_labels),
            ("streaming_steps", cfg.shard.streaming_steps),
        ]),
        ("variant", [
            ("kind", cfg.variant.kind),
            ("ema_alpha", cfg.variant.resolved_alpha),
            ("iidness_prior", cfg.variant.iidness_prior),
        ]),
        ("training", [
            ("rounds", cfg.training.rounds),
            ("participation_rate", cfg.training.participation_rate),
            ("local_epochs", cfg.training.local_epochs),
            ("server_epochs", cfg.training.server_epochs),
            ("labeled_batch_size", cfg.training.labeled_batch_size),
            ("unlabeled_batch_size", cfg.training.unlabeled_batch_size),
            ("server_batch_size", cfg.training.server_batch_size),
            ("learning_rate", cfg.training.learning_rate),
            ("server_learning_rate", cfg.training.server_learning_rate),
            ("momentum", cfg.training.momentum),
            ("weight_decay", cfg.training.weight_decay),
            ("topology", cfg.training.topology),
            ("hidden_dims", cfg.training.hidden_dims),
            ("bytes_per_param", cfg.training.bytes_per_param),
            ("tau", cfg.training.tau),
            ("lambda_u", cfg.training.lambda_u),
            ("mu", cfg.training.mu),
        ]),
        ("augment", [
            ("weak_noise_sigma", cfg.augment.weak_noise_sigma),
            ("weak_shift_fraction", cfg.augment.weak_shift_fraction),
            ("strong_noise_sigma", cfg.augment.strong_noise_sigma),
            ("strong_mask_prob", cfg.augment.strong_mask_prob),
        ]),
        ("run", [
            ("trials", cfg.trials),
            ("seed", cfg.seed),
            ("output", cfg.output),
            ("stability_window", cfg.effective_window),
            ("accuracy_threshold", cfg.accuracy_threshold),
        ]),
    ]
    lines: list[str] = []
    for name, pairs in sections:
        lines.append(f"[{name}]")
        for key, value in pairs:
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)
