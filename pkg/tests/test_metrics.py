"""Metrics: percentiles, lock-contention spans, report aggregation, and the
fixed-format CSV writers."""

import pytest

from dtxsim.metrics import (ABORT_CLASSES, LCS_BIN_US, MetricsReport,
                            SUMMARY_COLUMNS, compute_metrics, lcs_spans,
                            percentile, summary_row, write_latency_cdf,
                            write_lcs_hist, write_summary_csv)
from dtxsim.trace import (EV_LOCK_GRANT, EV_LOCK_RELEASE, EV_OUTCOME,
                          EV_SUBMIT, Rec)

from _support import run_dict, ycsb_dict


def submit(t, tid):
    return Rec(t, tid, "dm", EV_SUBMIT, "")


def outcome(t, tid, status="committed", cls="", kind="centralized", wan=1):
    return Rec(t, tid, "dm", EV_OUTCOME, f"{status}:{cls}:{kind}:wan={wan}")


def grant(t, tid, site, key="k", mode="x"):
    return Rec(t, tid, site, EV_LOCK_GRANT, f"{key}:{mode}")


def release(t, tid, site, key="k"):
    return Rec(t, tid, site, EV_LOCK_RELEASE, key)


# ----------------------------------------------------------------- percentile

def test_percentile_nearest_rank():
    vals = [10.0, 20.0, 30.0, 40.0]
    assert percentile(vals, 0.25) == 10.0
    assert percentile(vals, 0.50) == 20.0
    assert percentile(vals, 0.75) == 30.0
    assert percentile(vals, 0.99) == 40.0
    assert percentile(vals, 1.00) == 40.0
    assert percentile([7.0], 0.5) == 7.0
    assert percentile([], 0.99) == 0.0


# ------------------------------------------------------------------ LCS spans

def test_lcs_span_first_grant_to_last_release():
    recs = [grant(10, 1, "ds1", "a"), grant(20, 1, "ds1", "b"),
            release(30, 1, "ds1", "a"), release(50, 1, "ds1", "b"),
            outcome(60, 1)]
    assert lcs_spans(recs) == {(1, "ds1"): 40}


def test_lcs_excludes_aborted_and_unreleased():
    recs = [grant(10, 1, "ds1"), release(30, 1, "ds1"),
            outcome(40, 1, status="aborted", cls="lock_timeout", wan=0),
            grant(15, 2, "ds1"),            # never released: ignored
            outcome(50, 2)]
    assert lcs_spans(recs) == {}


def test_lcs_keyed_per_site():
    recs = [grant(10, 1, "ds1"), release(20, 1, "ds1"),
            grant(10, 1, "ds2"), release(40, 1, "ds2"),
            outcome(60, 1, kind="distributed", wan=2)]
    assert lcs_spans(recs) == {(1, "ds1"): 10, (1, "ds2"): 30}


# ------------------------------------------------------------- report content

def test_compute_metrics_latency_and_classes():
    recs = [submit(0, 1), submit(0, 2), submit(0, 3),
            outcome(100, 1),
            outcome(150, 3, status="aborted", cls="lock_timeout", wan=0),
            outcome(300, 2, kind="distributed", wan=2)]
    rep = compute_metrics(recs)
    assert rep.committed == 2
    assert rep.aborted == 1
    assert rep.aborted_by_class == {"lock_timeout": 1}
    assert rep.latencies_us == [100, 300]
    assert rep.latency_mean_us == 200.0
    assert rep.latencies_by_kind == {"centralized": [100],
                                     "distributed": [300]}
    assert rep.wan_rt_counts == {2: 1}
    assert rep.wan_rt_mean == 2.0
    assert rep.horizon_us == 300
    assert rep.throughput_tps == pytest.approx(2 / (300 / 1e6))


def test_compute_metrics_warmup_excludes_early_outcomes():
    recs = [submit(0, 1), submit(600, 2),
            outcome(400, 1),                 # inside warmup: dropped entirely
            outcome(1000, 2)]
    rep = compute_metrics(recs, warmup_frac=0.5)
    assert rep.warmup_us == 500
    assert rep.committed == 1
    assert rep.latencies_us == [400]
    assert rep.throughput_tps == pytest.approx(1 / (500 / 1e6))


def test_compute_metrics_empty():
    rep = compute_metrics([])
    assert rep.committed == 0 and rep.aborted == 0
    assert rep.latency_mean_us == 0.0
    assert rep.latency_pct_us(0.99) == 0.0
    assert rep.wan_rt_mean == 0.0


def test_kind_stats_empty_kind():
    assert MetricsReport().kind_stats("distributed") == (0, 0.0, 0.0)


# ----------------------------------------------------------------- CSV output

def sample_report() -> MetricsReport:
    recs = [submit(0, 1), submit(0, 2), submit(10, 3),
            grant(20, 1, "ds1"), release(120, 1, "ds1"),
            outcome(150, 1),
            outcome(500, 3, status="aborted", cls="client", wan=0),
            outcome(90_000, 2, kind="distributed", wan=2)]
    return compute_metrics(recs)


def test_summary_row_matches_columns(tmp_path):
    rep = sample_report()
    row = summary_row(rep)
    assert len(row) == len(SUMMARY_COLUMNS)
    path = tmp_path / "summary.csv"
    write_summary_csv(rep, path)
    header, data = path.read_text().splitlines()
    assert header == ",".join(SUMMARY_COLUMNS)
    cells = data.split(",")
    assert len(cells) == len(SUMMARY_COLUMNS)
    as_map = dict(zip(SUMMARY_COLUMNS, cells))
    assert as_map["committed"] == "2"
    assert as_map["aborted_client"] == "1"
    assert as_map["wan_rt_mean"] == "2.000000"


def test_latency_cdf_monotone_and_complete(tmp_path):
    path = tmp_path / "latency_cdf.csv"
    write_latency_cdf(sample_report(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "latency_us,cumulative_fraction"
    lats, fracs = [], []
    for line in lines[1:]:
        lat, frac = line.split(",")
        lats.append(int(lat))
        fracs.append(float(frac))
    assert lats == sorted(lats)
    assert fracs == sorted(fracs)
    assert fracs[-1] == 1.0


def test_lcs_hist_bins(tmp_path):
    path = tmp_path / "lcs_hist.csv"
    rep = sample_report()
    write_lcs_hist(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_lo_us,bin_hi_us,count"
    total = 0
    for i, line in enumerate(lines[1:]):
        lo, hi, count = (int(x) for x in line.split(","))
        assert lo == i * LCS_BIN_US and hi == (i + 1) * LCS_BIN_US
        total += count
    assert total == len(rep.lcs_values_us) == 1


def test_csv_bytes_stable(tmp_path):
    rep = sample_report()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_summary_csv(rep, a)
    write_summary_csv(rep, b)
    assert a.read_bytes() == b.read_bytes()


# ------------------------------------------------------------- real-run checks

def test_outcome_conservation_on_real_run():
    world, quiesced = run_dict(ycsb_dict(
        workload={"terminals": 6, "txn_budget": 60, "theta": 1.1,
                  "client_abort_ratio": 0.05}))
    assert quiesced
    rep = compute_metrics(world.trace.records)
    assert rep.committed + rep.aborted == world.pool.submitted == 60
    assert set(rep.aborted_by_class) <= set(ABORT_CLASSES)
    assert len(rep.latencies_us) == rep.committed
    assert sum(len(v) for v in rep.latencies_by_kind.values()) == rep.committed
