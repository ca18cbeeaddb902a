"""Run metrics computed from the trace alone.

Throughput and latency aggregates exclude a configurable warmup fraction of
the run horizon.  Latency is client-observed: submission to final outcome,
committed transactions only.  The lock-contention span (LCS) of a committed
subtransaction is the time from its first lock grant to its last lock
release at one data source.  All CSV output uses fixed number formatting so
identical traces serialize to identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .trace import (EV_LOCK_GRANT, EV_LOCK_RELEASE, EV_OUTCOME, EV_SUBMIT, Rec)

LCS_BIN_US = 10_000

ABORT_CLASSES = ("admission", "lock_timeout", "failure", "client")


def percentile(sorted_values: list, q: float) -> float:
    """Nearest-rank percentile; q in (0, 1]."""
    if not sorted_values:
        return 0.0
    idx = max(0, math.ceil(q * len(sorted_values)) - 1)
    return float(sorted_values[idx])


def lcs_spans(records: list[Rec]) -> dict:
    """(tid, site) -> lock span in us, committed subtransactions only."""
    committed = {r.tid for r in records
                 if r.event == EV_OUTCOME and r.detail.startswith("committed")}
    first_grant: dict = {}
    last_release: dict = {}
    for r in records:
        if r.tid not in committed:
            continue
        key = (r.tid, r.site)
        if r.event == EV_LOCK_GRANT and key not in first_grant:
            first_grant[key] = r.time_us
        elif r.event == EV_LOCK_RELEASE:
            last_release[key] = r.time_us
    return {k: last_release[k] - t0 for k, t0 in first_grant.items()
            if k in last_release}


@dataclass
class MetricsReport:
    horizon_us: int = 0
    warmup_us: int = 0
    committed: int = 0
    aborted: int = 0
    aborted_by_class: dict = field(default_factory=dict)
    throughput_tps: float = 0.0
    latencies_us: list = field(default_factory=list)          # sorted
    latencies_by_kind: dict = field(default_factory=dict)     # kind -> sorted list
    lcs_values_us: list = field(default_factory=list)         # sorted
    wan_rt_counts: dict = field(default_factory=dict)         # n -> count

    @property
    def latency_mean_us(self) -> float:
        return (sum(self.latencies_us) / len(self.latencies_us)
                if self.latencies_us else 0.0)

    def latency_pct_us(self, q: float) -> float:
        return percentile(self.latencies_us, q)

    def kind_stats(self, kind: str) -> tuple:
        lats = self.latencies_by_kind.get(kind, [])
        if not lats:
            return 0, 0.0, 0.0
        return len(lats), sum(lats) / len(lats), percentile(lats, 0.99)

    @property
    def wan_rt_mean(self) -> float:
        total = sum(n * c for n, c in self.wan_rt_counts.items())
        count = sum(self.wan_rt_counts.values())
        return total / count if count else 0.0


def compute_metrics(records: list[Rec], warmup_frac: float = 0.0) -> MetricsReport:
    rep = MetricsReport()
    if not records:
        return rep
    rep.horizon_us = records[-1].time_us
    rep.warmup_us = int(warmup_frac * rep.horizon_us)
    submit_at = {r.tid: r.time_us for r in records if r.event == EV_SUBMIT}
    spans = lcs_spans(records)
    by_tid_site: dict = {}
    for (tid, site), span in spans.items():
        by_tid_site.setdefault(tid, []).append(span)
    for r in records:
        if r.event != EV_OUTCOME or r.time_us < rep.warmup_us:
            continue
        status, cls, kind, wan = r.detail.split(":")
        if status == "committed":
            rep.committed += 1
            lat = r.time_us - submit_at.get(r.tid, r.time_us)
            rep.latencies_us.append(lat)
            rep.latencies_by_kind.setdefault(kind, []).append(lat)
            rep.lcs_values_us.extend(by_tid_site.get(r.tid, []))
            if kind == "distributed":
                n = int(wan.split("=", 1)[1])
                rep.wan_rt_counts[n] = rep.wan_rt_counts.get(n, 0) + 1
        else:
            rep.aborted += 1
            rep.aborted_by_class[cls] = rep.aborted_by_class.get(cls, 0) + 1
    window_us = rep.horizon_us - rep.warmup_us
    if window_us > 0:
        rep.throughput_tps = rep.committed / (window_us / 1_000_000)
    rep.latencies_us.sort()
    for lats in rep.latencies_by_kind.values():
        lats.sort()
    rep.lcs_values_us.sort()
    return rep


# ----------------------------------------------------------------- CSV output

def _fmt(v) -> str:
    if isinstance(v, bool):
        raise TypeError("no boolean metrics")
    if isinstance(v, int):
        return str(v)
    return f"{v:.6f}"


SUMMARY_COLUMNS = (
    "committed", "aborted",
    "aborted_admission", "aborted_lock_timeout", "aborted_failure",
    "aborted_client",
    "throughput_tps",
    "latency_mean_us", "latency_p50_us", "latency_p99_us", "latency_p999_us",
    "centralized_committed", "centralized_latency_mean_us",
    "centralized_latency_p99_us",
    "distributed_committed", "distributed_latency_mean_us",
    "distributed_latency_p99_us",
    "lcs_mean_us", "lcs_p99_us",
    "wan_rt_mean",
    "horizon_us",
)


def summary_row(rep: MetricsReport) -> list:
    c_n, c_mean, c_p99 = rep.kind_stats("centralized")
    d_n, d_mean, d_p99 = rep.kind_stats("distributed")
    lcs = rep.lcs_values_us
    lcs_mean = sum(lcs) / len(lcs) if lcs else 0.0
    return [
        rep.committed, rep.aborted,
        rep.aborted_by_class.get("admission", 0),
        rep.aborted_by_class.get("lock_timeout", 0),
        rep.aborted_by_class.get("failure", 0),
        rep.aborted_by_class.get("client", 0),
        rep.throughput_tps,
        rep.latency_mean_us, rep.latency_pct_us(0.50),
        rep.latency_pct_us(0.99), rep.latency_pct_us(0.999),
        c_n, c_mean, c_p99,
        d_n, d_mean, d_p99,
        lcs_mean, percentile(lcs, 0.99),
        rep.wan_rt_mean,
        rep.horizon_us,
    ]


def write_summary_csv(rep: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(SUMMARY_COLUMNS) + "\n")
        f.write(",".join(_fmt(v) for v in summary_row(rep)) + "\n")


def write_latency_cdf(rep: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("latency_us,cumulative_fraction\n")
        n = len(rep.latencies_us)
        for i, lat in enumerate(rep.latencies_us):
            f.write(f"{lat},{(i + 1) / n:.8f}\n")


def write_lcs_hist(rep: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("bin_lo_us,bin_hi_us,count\n")
        if not rep.lcs_values_us:
            return
        top_bin = rep.lcs_values_us[-1] // LCS_BIN_US
        counts = [0] * (top_bin + 1)
        for v in rep.lcs_values_us:
            counts[v // LCS_BIN_US] += 1
        for i, c in enumerate(counts):
            f.write(f"{i * LCS_BIN_US},{(i + 1) * LCS_BIN_US},{c}\n")
