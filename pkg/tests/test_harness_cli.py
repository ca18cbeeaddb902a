"""World harness end-to-end runs, output files, and the command-line
interface (run / sweep / check subcommands, exit codes)."""

import json

import pytest

from dtxsim.cli import main
from dtxsim.config import ConfigError, experiment_from_dict
from dtxsim.harness import run_experiment, sweep
from dtxsim.metrics import SUMMARY_COLUMNS
from dtxsim.trace import TraceRecorder, read_tsv

from _support import deep_merge, ycsb_dict


def small_cfg(**over):
    return experiment_from_dict(ycsb_dict(**over))


# ------------------------------------------------------------ run_experiment

def test_run_experiment_smoke():
    result = run_experiment(small_cfg())
    assert result.ok
    assert result.quiesced
    assert result.atomicity_violations == []
    assert result.serializability_violations == []
    assert result.report.committed > 0
    assert result.report.committed + result.report.aborted <= 60


def test_run_experiment_writes_outputs(tmp_path):
    result = run_experiment(small_cfg(), out_dir=str(tmp_path),
                            write_trace=True)
    assert result.ok
    for name in ("summary.csv", "latency_cdf.csv", "lcs_hist.csv",
                 "trace.tsv"):
        assert (tmp_path / name).exists(), name
    reread = read_tsv(str(tmp_path / "trace.tsv"))
    assert reread == result.records


def test_run_experiment_is_deterministic():
    r1 = run_experiment(small_cfg())
    r2 = run_experiment(small_cfg())
    assert r1.records == r2.records
    assert r1.report.latencies_us == r2.report.latencies_us


def test_virtual_time_cap_reports_failure():
    result = run_experiment(small_cfg(workload={"txn_budget": 100_000}),
                            cap_s=0.05)
    assert not result.quiesced
    assert not result.ok


def test_sweep_runs_each_seed_and_writes_rows(tmp_path):
    results = sweep(small_cfg(workload={"txn_budget": 20, "terminals": 4}),
                    seeds=[1, 2, 3], out_dir=str(tmp_path))
    assert [r.cfg.seed for r in results] == [1, 2, 3]
    assert all(r.ok for r in results)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "seed," + ",".join(SUMMARY_COLUMNS)
    assert len(lines) == 4
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3"]
    # different seeds produce different workloads
    assert len({tuple(r.report.latencies_us) for r in results}) > 1


# ----------------------------------------------------------------- config API

def test_contention_presets_resolve_theta():
    for name, theta in (("lc", 0.3), ("mc", 0.9), ("hc", 1.5)):
        cfg = small_cfg(workload={"contention": name})
        assert cfg.workload.resolved_theta() == theta


def test_adv_opt_requires_scheduling():
    with pytest.raises(ConfigError):
        small_cfg(scheduler={"adv_opt": True, "scheduling": False})


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigError):
        experiment_from_dict(deep_merge(ycsb_dict(), {"typo_section": {}}))


def test_topology_file_reference(tmp_path):
    topo = {"rtt_ms": {"ds1": 10.0, "ds2": 40.0}}
    (tmp_path / "topo.json").write_text(json.dumps(topo))
    cfg_dict = deep_merge(ycsb_dict(), {"topology": "topo.json"})
    (tmp_path / "cfg.json").write_text(json.dumps(cfg_dict))
    from dtxsim.config import load_experiment
    cfg = load_experiment(str(tmp_path / "cfg.json"))
    assert cfg.topology.sites == ["ds1", "ds2"]


# ------------------------------------------------------------------------ CLI

def write_cfg(tmp_path, name="cfg.json", **over):
    path = tmp_path / name
    path.write_text(json.dumps(ycsb_dict(**over)))
    return str(path)


def test_cli_run_ok(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--trace"]) == 0
    printed = capsys.readouterr().out
    assert "atomicity: ok" in printed
    assert "serializability: ok" in printed
    assert (out / "trace.tsv").exists()


def test_cli_run_seed_override(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", cfg, "--seed", "7"]) == 0
    assert "seed=7" in capsys.readouterr().out


def test_cli_run_cap_exceeded_fails(tmp_path, capsys):
    cfg = write_cfg(tmp_path, workload={"txn_budget": 100_000})
    assert main(["run", "--config", cfg, "--cap-s", "0.05"]) == 1
    assert "virtual-time cap" in capsys.readouterr().out


def test_cli_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path)]) == 2
    path.write_text(json.dumps({"nope": 1}))
    assert main(["run", "--config", str(path)]) == 2
    capsys.readouterr()


def test_cli_sweep(tmp_path, capsys):
    cfg = write_cfg(tmp_path, workload={"txn_budget": 20, "terminals": 4})
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--seeds", "1..3",
                 "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.count("seed=") == 3
    assert (out / "summary.csv").exists()


def test_cli_check_clean_trace(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--trace"]) == 0
    capsys.readouterr()
    assert main(["check", "--trace", str(out / "trace.tsv")]) == 0
    assert "atomicity: ok" in capsys.readouterr().out


def test_cli_check_flags_violating_trace(tmp_path, capsys):
    trace = TraceRecorder()
    trace.log(1, 1, "ds1", "dispatch", "round=0")
    trace.log(1, 1, "ds2", "dispatch", "round=0")
    trace.log(5, 1, "ds1", "subtxn_final", "committed")
    trace.log(6, 1, "ds2", "subtxn_final", "aborted:crash")
    path = tmp_path / "trace.tsv"
    trace.write_tsv(str(path))
    assert main(["check", "--trace", str(path)]) == 1
    assert "mixed outcome" in capsys.readouterr().out
