"""Run metrics, paired-experiment statistics, and carbon-footprint arithmetic.

Three per-run metrics: synchronization time (mean time for a block to reach
the node threshold), synchronized-blocks rate, and messages per synchronized
block. Message counts cover block-propagation traffic only; transaction-phase
traffic is tallied separately and excluded from the headline metric.

The comparison methodology is an unpaired Wilcoxon rank-sum test with
continuity correction over the pooled per-arm samples, plus ECDF curves per
metric. A paired signed-rank variant is available for sensitivity analysis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class SimReport:
    """The three propagation metrics for one run plus raw tallies.

    ``sync_time_s`` and ``msgs_per_sync_block`` are None when no block reached
    the synchronization threshold.
    """

    sync_time_s: float | None
    sync_rate: float
    msgs_per_sync_block: float | None
    forged: int
    synchronized: int
    messages: int
    messages_received: int = 0
    bytes_sent: float = 0.0
    tx_messages: int = 0
    anomalies: int = 0

    @classmethod
    def from_tallies(
        cls,
        forged: int,
        synchronized: int,
        sync_times: Sequence[float],
        messages: int,
        messages_received: int = 0,
        bytes_sent: float = 0.0,
        tx_messages: int = 0,
        anomalies: int = 0,
    ) -> "SimReport":
        if synchronized > 0:
            sync_time = float(np.mean(sync_times))
            per_block = messages / synchronized
        else:
            sync_time = None
            per_block = None
        rate = synchronized / forged if forged > 0 else 0.0
        return cls(
            sync_time_s=sync_time,
            sync_rate=rate,
            msgs_per_sync_block=per_block,
            forged=forged,
            synchronized=synchronized,
            messages=messages,
            messages_received=messages_received,
            bytes_sent=bytes_sent,
            tx_messages=tx_messages,
            anomalies=anomalies,
        )

    def to_dict(self) -> dict:
        return {
            "sync_time_s": self.sync_time_s,
            "sync_rate": self.sync_rate,
            "msgs_per_sync_block": self.msgs_per_sync_block,
            "forged": self.forged,
            "synchronized": self.synchronized,
            "messages": self.messages,
            "messages_received": self.messages_received,
            "bytes_sent": self.bytes_sent,
            "tx_messages": self.tx_messages,
            "anomalies": self.anomalies,
        }


def compute_report(log: Iterable[tuple], n_nodes: int, threshold: float = 0.5) -> SimReport:
    """Rebuild a SimReport from raw event-log rows.

    A block counts as synchronized when the number of nodes knowing it first
    reaches ceil(threshold * n_nodes); its sync time runs from forged_at to
    that instant. Messages are counted at emission ("send" rows), all
    block-propagation kinds. An empty log yields a zeroed report.
    """
    need = math.ceil(threshold * n_nodes)
    forged_at: dict[int, float] = {}
    known_counts: dict[int, int] = {}
    sync_at: dict[int, float] = {}
    messages = 0
    received = 0
    bytes_sent = 0.0
    for row in log:
        tag = row[0]
        if tag == "send":
            messages += 1
            bytes_sent += row[6]
        elif tag == "recv":
            received += 1
        elif tag == "known":
            _, t, _node, block_id = row
            c = known_counts.get(block_id, 0) + 1
            known_counts[block_id] = c
            if c == need and block_id not in sync_at:
                sync_at[block_id] = t
        elif tag == "forge":
            forged_at[row[2]] = row[1]
    sync_times = [
        sync_at[b] - t0 for b, t0 in forged_at.items() if b in sync_at
    ]
    return SimReport.from_tallies(
        forged=len(forged_at),
        synchronized=len(sync_times),
        sync_times=sync_times,
        messages=messages,
        messages_received=received,
        bytes_sent=bytes_sent,
    )


# -- rank statistics ---------------------------------------------------------


def _midranks(pooled: np.ndarray) -> np.ndarray:
    """Ranks 1..N with ties sharing the mean of their rank range."""
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled), dtype=float)
    sorted_vals = pooled[order]
    i = 0
    n = len(pooled)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Unpaired Wilcoxon rank-sum (Mann-Whitney U) with continuity correction.

    Returns (U for sample ``a``, two-sided p). Midranks handle ties; the
    p-value uses the normal approximation with tie-corrected variance and a
    0.5 continuity correction applied to max(U_a, U_b). When every pooled
    value is identical the variance vanishes and p is 1 by convention.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    n1, n2 = len(x), len(y)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    ranks = _midranks(pooled)
    r1 = float(np.sum(ranks[:n1]))
    u1 = r1 - n1 * (n1 + 1) / 2.0

    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return u1, 1.0

    u_max = max(u1, n1 * n2 - u1)
    z = (u_max - n1 * n2 / 2.0 - 0.5) / math.sqrt(var)
    p = 2.0 * _norm_sf(z)
    return u1, float(min(max(p, 0.0), 1.0))


def wilcoxon_signed_rank(diffs: Sequence[float]) -> tuple[float, float]:
    """Paired signed-rank test (normal approximation, zero-diffs dropped).

    Sensitivity-analysis companion to the unpaired test; returns (W+, p).
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = _midranks(np.abs(d))
    w_plus = float(np.sum(ranks[d > 0]))
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    if var <= 0:
        return w_plus, 1.0
    z = (w_plus - mean - 0.5 * np.sign(w_plus - mean)) / math.sqrt(var)
    p = 2.0 * _norm_sf(abs(z))
    return w_plus, float(min(max(p, 0.0), 1.0))


@dataclass(frozen=True)
class EcdfCurve:
    values: tuple[float, ...]
    fractions: tuple[float, ...]


def ecdf(values: Sequence[float]) -> EcdfCurve:
    """Sorted sample values with cumulative fractions k/n (ties keep one step each)."""
    if len(values) == 0:
        raise ValueError("ecdf of an empty sample")
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    fracs = np.arange(1, n + 1) / n
    return EcdfCurve(values=tuple(v.tolist()), fractions=tuple(fracs.tolist()))


# -- carbon arithmetic ---------------------------------------------------------


@dataclass(frozen=True)
class CarbonModel:
    """Per-byte emission factors and the average block size they apply to.

    ``per_byte_gco2`` is the switching-infrastructure factor; the much larger
    ``qos_per_byte_gco2`` figure corresponds to a degraded-QoS scenario and is
    kept for reference.
    """

    per_byte_gco2: float = 4.42e-09
    qos_per_byte_gco2: float = 0.156
    avg_block_bytes: float = 154363.0

    @property
    def per_message_gco2(self) -> float:
        return self.avg_block_bytes * self.per_byte_gco2


def carbon_estimate(model: CarbonModel, messages_saved: float) -> float:
    """gCO2eq avoided per broadcasting phase for a given message saving."""
    if messages_saved < 0:
        raise ValueError("messages_saved must be non-negative")
    return model.per_message_gco2 * messages_saved


# -- paired-experiment summary -------------------------------------------------


@dataclass(frozen=True)
class PairedRun:
    seed: int
    baseline: SimReport
    treated: SimReport


METRICS = ("sync_time_s", "sync_rate", "msgs_per_sync_block")


@dataclass
class MetricComparison:
    metric: str
    baseline_mean: float
    treated_mean: float
    change: float
    change_kind: str  # "percent" or "percentage_points"
    statistic: float
    p_value: float
    signed_rank_p: float | None
    n_pairs: int
    excluded_pairs: int
    baseline_ecdf: EcdfCurve = field(repr=False, default=None)  # type: ignore[assignment]
    treated_ecdf: EcdfCurve = field(repr=False, default=None)  # type: ignore[assignment]


@dataclass
class ComparisonSummary:
    metrics: dict[str, MetricComparison]
    n_pairs: int
    notes: str

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "notes": self.notes,
            "metrics": {
                name: {
                    "baseline_mean": m.baseline_mean,
                    "treated_mean": m.treated_mean,
                    "change": m.change,
                    "change_kind": m.change_kind,
                    "statistic": m.statistic,
                    "p_value": m.p_value,
                    "signed_rank_p": m.signed_rank_p,
                    "n_pairs": m.n_pairs,
                    "excluded_pairs": m.excluded_pairs,
                }
                for name, m in self.metrics.items()
            },
        }


def summarize_experiment(
    pairs: Sequence[PairedRun], include_signed_rank: bool = False
) -> ComparisonSummary:
    """Per-metric arm means, relative changes, rank-sum test, and ECDF curves.

    Pairs where a metric is undefined in either arm (no synchronized block)
    are excluded for that metric only, with the exclusion count reported.
    sync_rate changes are percentage points; the other two are percent
    relative to the baseline mean.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs to summarize")
    out: dict[str, MetricComparison] = {}
    for metric in METRICS:
        base_vals, treat_vals = [], []
        excluded = 0
        for p in pairs:
            bv = getattr(p.baseline, metric)
            tv = getattr(p.treated, metric)
            if bv is None or tv is None:
                excluded += 1
                continue
            base_vals.append(float(bv))
            treat_vals.append(float(tv))
        if not base_vals:
            raise ValueError(f"metric {metric} undefined in every pair")
        b_mean = float(np.mean(base_vals))
        t_mean = float(np.mean(treat_vals))
        if metric == "sync_rate":
            change = (t_mean - b_mean) * 100.0
            kind = "percentage_points"
        else:
            change = (t_mean - b_mean) / b_mean * 100.0
            kind = "percent"
        stat, p_value = wilcoxon_rank_sum(treat_vals, base_vals)
        signed_p = None
        if include_signed_rank:
            diffs = np.asarray(treat_vals) - np.asarray(base_vals)
            signed_p = wilcoxon_signed_rank(diffs)[1]
        out[metric] = MetricComparison(
            metric=metric,
            baseline_mean=b_mean,
            treated_mean=t_mean,
            change=change,
            change_kind=kind,
            statistic=stat,
            p_value=p_value,
            signed_rank_p=signed_p,
            n_pairs=len(base_vals),
            excluded_pairs=excluded,
            baseline_ecdf=ecdf(base_vals),
            treated_ecdf=ecdf(treat_vals),
        )
    return ComparisonSummary(
        metrics=out,
        n_pairs=len(pairs),
        notes="message counts cover block-propagation traffic only (tx phase excluded)",
    )


# -- persistence ---------------------------------------------------------------

PAIRS_CSV_FIELDS = (
    "seed", "arm", "sync_time_s", "sync_rate", "msgs_per_sync_block",
    "messages", "forged", "synchronized",
)


def write_pairs_csv(path: str, pairs: Sequence[PairedRun]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIRS_CSV_FIELDS)
        for p in pairs:
            for arm, report in (("baseline", p.baseline), ("treated", p.treated)):
                writer.writerow([
                    p.seed,
                    arm,
                    "" if report.sync_time_s is None else repr(report.sync_time_s),
                    repr(report.sync_rate),
                    "" if report.msgs_per_sync_block is None else repr(report.msgs_per_sync_block),
                    report.messages,
                    report.forged,
                    report.synchronized,
                ])


def read_pairs_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_ecdf_csv(path: str, summary: ComparisonSummary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "arm", "value", "fraction"])
        for name, m in summary.metrics.items():
            for arm, curve in (("baseline", m.baseline_ecdf), ("treated", m.treated_ecdf)):
                for v, f in zip(curve.values, curve.fractions):
                    writer.writerow([name, arm, repr(v), repr(f)])


def write_comparison_json(path: str, summary: ComparisonSummary) -> None:
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
