"""Accuracy evaluation, communication accounting, KL-ratio analysis, and
training-stability statistics.

Every model payload that crosses the network is one ledger entry; bytes are
num_params times bytes_per_param (8 for the float64 core, 4 for comparison
runs). The two KL scalars each client reports ride outside the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .nn import ModelSpec, ParamVector, forward_probs
from .semisup import kl_to_uniform

DIRECTIONS = ("downlink", "uplink")
ROLES = ("student", "teacher")


@dataclass
class Transmission:
    """One model payload crossing the network."""

    round: int
    direction: str
    role: str
    client_id: int
    num_params: int
    bytes: int

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if self.round < 0 or self.num_params < 1:
            raise ValueError("round must be >= 0 and num_params >= 1")


@dataclass
class CommLedger:
    """Append-only transmission log with per-round and per-role rollups."""

    bytes_per_param: int = 8
    entries: list[Transmission] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.bytes_per_param not in (4, 8):
            raise ValueError("bytes_per_param must be 4 or 8")

    def record(
        self, round: int, direction: str, role: str, client_id: int, num_params: int
    ) -> Transmission:
        entry = Transmission(
            round=round,
            direction=direction,
            role=role,
            client_id=client_id,
            num_params=num_params,
            bytes=num_params * self.bytes_per_param,
        )
        self.entries.append(entry)
        return entry

    def extend(self, entries: list[Transmission]) -> None:
        for e in entries:
            if e.bytes != e.num_params * self.bytes_per_param:
                raise ValueError("entry byte count disagrees with this ledger's scale")
            self.entries.append(e)

    def model_count(self, direction: str, role: str | None = None) -> int:
        return sum(
            1
            for e in self.entries
            if e.direction == direction and (role is None or e.role == role)
        )

    def total_bytes(self, direction: str) -> int:
        return sum(e.bytes for e in self.entries if e.direction == direction)

    def round_totals(self, round: int) -> dict[str, int]:
        down = [e for e in self.entries if e.round == round and e.direction == "downlink"]
        up = [e for e in self.entries if e.round == round and e.direction == "uplink"]
        return {
            "downlink_models": len(down),
            "downlink_bytes": sum(e.bytes for e in down),
            "uplink_models": len(up),
            "uplink_bytes": sum(e.bytes for e in up),
        }


def record_transmission(
    ledger: CommLedger,
    round: int,
    direction: str,
    role: str,
    num_params: int,
    client_id: int,
) -> CommLedger:
    """Append one model payload to the ledger and return it."""
    ledger.record(round, direction, role, client_id, num_params)
    return ledger


@dataclass
class RoundReport:
    """Everything one round contributes to the per-round CSV."""

    round: int
    acc_student: float
    acc_teacher: float
    dkl_teacher: float
    dkl_student: float
    send_teacher: bool
    downlink_bytes: int
    uplink_bytes: int

    def __post_init__(self) -> None:
        for name in ("acc_student", "acc_teacher"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v!r}")

    @staticmethod
    def csv_header() -> str:
        return "round,acc_student,acc_teacher,dkl_T,dkl_S,send_teacher,downlink_bytes,uplink_bytes"

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.round),
                repr(self.acc_student),
                repr(self.acc_teacher),
                repr(self.dkl_teacher),
                repr(self.dkl_student),
                str(int(self.send_teacher)),
                str(self.downlink_bytes),
                str(self.uplink_bytes),
            ]
        )


@dataclass
class KlRatioStat:
    """Pseudo-label skew relative to the client's true label skew."""

    client_id: int
    pseudo_kl: float
    ground_truth_kl: float
    ratio: float | None

    def __post_init__(self) -> None:
        if self.pseudo_kl < 0 or self.ground_truth_kl < 0:
            raise ValueError("KL values must be non-negative")


def evaluate(params: ParamVector, spec: ModelSpec, test: Dataset) -> float:
    """Fraction of argmax predictions matching the labels."""
    if test.size < 1:
        raise ValueError("test set must be non-empty")
    probs = forward_probs(params, spec, test.inputs)
    return float((probs.argmax(axis=1) == test.labels).mean())


def kl_ratio_stats(
    clients: list[int],
    pseudo_dists: list[np.ndarray],
    true_histograms: list[np.ndarray],
) -> list[KlRatioStat]:
    """Per-client pseudo-KL / truth-KL; the ratio is absent when the client's
    label histogram is uniform (truth KL 0).
    """
    if not len(clients) == len(pseudo_dists) == len(true_histograms):
        raise ValueError("clients, pseudo_dists, true_histograms must have equal length")
    stats = []
    for cid, pd, th in zip(clients, pseudo_dists, true_histograms):
        pseudo = kl_to_uniform(pd)
        truth = kl_to_uniform(th)
        ratio = pseudo / truth if truth > 0 else None
        stats.append(KlRatioStat(cid, pseudo, truth, ratio))
    return stats


def mean_kl_ratio(stats: list[KlRatioStat]) -> float | None:
    """Mean ratio over clients with a defined ratio; None if none have one."""
    defined = [s.ratio for s in stats if s.ratio is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def stability_stats(reports: list, window: int) -> tuple[float, float]:
    """(population std, max peak-to-trough drop) of student accuracy over the
    trailing `window` reports. Accepts RoundReports or bare floats.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > len(reports):
        raise ValueError(f"window {window} exceeds {len(reports)} reports")
    acc = np.array(
        [r.acc_student if isinstance(r, RoundReport) else float(r) for r in reports],
        dtype=np.float64,
    )[-window:]
    peaks = np.maximum.accumulate(acc)
    drawdown = float(np.max(peaks - acc))
    return float(np.std(acc)), drawdown
