"""Experiment runner: builds a world from a config, injects faults, runs to
quiescence, and emits trace, metrics, and checker verdicts.

A world is one virtual-time kernel plus the network, one engine and agent
per data-source site, the transaction manager, and a workload driver.  The
run loop advances the kernel one timestamp batch at a time until every
submitted transaction has resolved (or a virtual-time cap is hit), then
drains a grace window so post-resolution cleanup lands in the trace.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from .agent import SiteAgent
from .checkers import check_atomicity, check_serializability
from .config import DM, ExperimentConfig
from .coordinator import Coordinator
from .datasource import DataSourceEngine
from .kernel import Kernel, US_PER_S, ms
from .metrics import (MetricsReport, compute_metrics, write_latency_cdf,
                      write_lcs_hist, write_summary_csv)
from .net import LatencyModel, Network
from .scheduler import Scheduler
from .trace import TraceRecorder
from .workload import ScriptRunner, TerminalPool, TransactionFactory

GRACE_TAIL_US = 2 * US_PER_S
DEFAULT_CAP_S = 3600.0


class World:
    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.kernel = Kernel(cfg.seed)
        self.trace = TraceRecorder()
        top = cfg.topology
        self.model = LatencyModel(top.all_sites(), top.one_way_us_matrix(),
                                  jitter_pct=top.jitter_pct,
                                  schedule=top.schedule_us())
        self.net = Network(self.kernel, self.model)
        self.engines: dict[str, DataSourceEngine] = {}
        self.agents: dict[str, SiteAgent] = {}
        for site in top.sites:
            engine = DataSourceEngine(self.kernel, site, cfg.datasource, self.trace)
            agent = SiteAgent(self.kernel, self.net, site, engine,
                              cfg.features, cfg.protocol, self.trace)
            self.engines[site] = engine
            self.agents[site] = agent
            self.net.register(site, agent.on_message)
        self.scheduler = Scheduler(
            cfg.scheduler,
            rtt_us=lambda site: self.coordinator.monitor.estimated_rtt_us(site),
            rng=self.kernel.rng("sched"))
        if cfg.workload.kind == "script":
            self.pool = ScriptRunner(self.kernel, cfg.workload.script)
        else:
            factory = TransactionFactory(cfg.workload, top.sites,
                                         cfg.datasource.keys_per_node)
            self.pool = TerminalPool(self.kernel, factory, cfg.workload)
        self.coordinator = Coordinator(
            self.kernel, self.net, self.scheduler, cfg.features, cfg.protocol,
            top.sites, self.trace, self.pool,
            lock_timeout_us=ms(cfg.datasource.lock_wait_timeout_ms))
        self.pool.bind(self.coordinator)
        self.net.register(DM, self.coordinator.on_message)
        self.last_fault_us = 0
        for f in cfg.faults:
            at = ms(f.at_ms)
            self.last_fault_us = max(self.last_fault_us, at)
            self.kernel.schedule(at, f.site, f"fault_{f.action}",
                                 lambda ev=f: self._apply_fault(ev))

    # ---------------------------------------------------------------- faults

    def _apply_fault(self, f) -> None:
        if f.site == DM:
            if f.action == "crash":
                self._dm_crash()
            elif f.action == "crash_after_flush":
                self.coordinator.flush_hook = self._dm_crash
            elif self.net.is_up(DM) and self.coordinator.flush_hook is not None:
                # the armed flush-time crash has not fired yet; a supervisor
                # cannot restart a live process, so repair right after it dies
                self.coordinator.flush_hook = self._dm_crash_then_restart
            elif not self.net.is_up(DM):
                self._dm_restart()
            # restarting a healthy middleware: nothing to repair
        else:
            if f.action == "crash":
                self.net.mark_down(f.site)
                self.agents[f.site].crash()
            elif not self.net.is_up(f.site):
                self.net.mark_up(f.site)
                self.agents[f.site].restart()
            # restarting a healthy site: nothing to repair

    def _dm_restart(self) -> None:
        self.net.mark_up(DM)
        self.coordinator.restart()

    def _dm_crash_then_restart(self) -> None:
        self._dm_crash()
        self.kernel.schedule_in(ms(1.0), DM, "deferred_restart",
                                self._dm_restart)

    def _dm_crash(self) -> None:
        self.net.mark_down(DM)
        self.coordinator.crash()
        # sites notice the broken middleware connection one delay later
        now = self.kernel.now
        for site, agent in self.agents.items():
            self.kernel.schedule_in(self.model.one_way_us(DM, site, now),
                                    site, "dm_disconnect",
                                    agent.on_dm_disconnect)

    # ------------------------------------------------------------------- run

    def start(self) -> None:
        self.coordinator.monitor.start()
        self.pool.start()

    def run(self, cap_s: float = DEFAULT_CAP_S) -> bool:
        """Advance until the workload quiesces; returns False on cap hit."""
        cap_us = int(cap_s * US_PER_S)
        self.start()
        while not self.pool.done:
            nxt = self.kernel.next_event_at()
            if nxt is None or nxt > cap_us:
                return False
            self.kernel.run_until(nxt)
        grace_end = max(self.kernel.now, self.last_fault_us) + GRACE_TAIL_US
        while True:
            nxt = self.kernel.next_event_at()
            if nxt is None or nxt > grace_end:
                return True
            self.kernel.run_until(nxt)


@dataclass
class RunResult:
    cfg: ExperimentConfig
    quiesced: bool
    records: list
    report: MetricsReport
    atomicity_violations: list = field(default_factory=list)
    serializability_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.quiesced and not self.atomicity_violations
                and not self.serializability_violations)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   write_trace: bool = False, cap_s: float = DEFAULT_CAP_S,
                   check: bool = True) -> RunResult:
    world = World(cfg)
    quiesced = world.run(cap_s=cap_s)
    records = world.trace.records
    report = compute_metrics(records, cfg.warmup_frac)
    result = RunResult(cfg=cfg, quiesced=quiesced, records=records, report=report)
    if check:
        result.atomicity_violations = check_atomicity(records)
        result.serializability_violations = check_serializability(records)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_summary_rows(os.path.join(out_dir, "summary.csv"),
                           [(cfg.seed, report)])
        write_latency_cdf(report, os.path.join(out_dir, "latency_cdf.csv"))
        write_lcs_hist(report, os.path.join(out_dir, "lcs_hist.csv"))
        if write_trace:
            world.trace.write_tsv(os.path.join(out_dir, "trace.tsv"))
    return result


def write_summary_rows(path: str, rows: list) -> None:
    from .metrics import SUMMARY_COLUMNS, _fmt, summary_row
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("seed," + ",".join(SUMMARY_COLUMNS) + "\n")
        for seed, report in rows:
            f.write(f"{seed}," + ",".join(_fmt(v) for v in summary_row(report))
                    + "\n")


def sweep(cfg: ExperimentConfig, seeds: list[int],
          out_dir: Optional[str] = None, cap_s: float = DEFAULT_CAP_S,
          check: bool = True) -> list[RunResult]:
    import copy
    results = []
    for seed in seeds:
        cell = copy.deepcopy(cfg)
        cell.seed = seed
        results.append(run_experiment(cell, out_dir=None, cap_s=cap_s,
                                      check=check))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_summary_rows(os.path.join(out_dir, "summary.csv"),
                           [(r.cfg.seed, r.report) for r in results])
    return results
