"""Experiment configuration: dataclasses plus JSON loading and validation.

A run is described by one JSON document (or the equivalent dataclass tree):
topology, workload, scheduler knobs, protocol feature flags, fault schedule,
and seed.  Validation failures name the offending field path so a bad config
is diagnosable without reading source.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .kernel import ms

DM = "dm"

CONTENTION_THETA = {"lc": 0.3, "mc": 0.9, "hc": 1.5}


class ConfigError(ValueError):
    pass


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _no_extras(d: dict, known: set, path: str) -> None:
    extras = set(d) - known
    _require(not extras, path, f"unknown keys {sorted(extras)}")


@dataclass
class TopologyConfig:
    sites: list[str]                       # data-source sites; middleware is DM
    one_way_ms: dict                       # {src: {dst: ms}} over sites + DM
    jitter_pct: float = 0.0
    schedule: list = field(default_factory=list)  # [(at_ms, one_way_ms), ...]

    def all_sites(self) -> list[str]:
        return [DM] + list(self.sites)

    def one_way_us_matrix(self, matrix_ms: Optional[dict] = None) -> dict:
        src_matrix = matrix_ms if matrix_ms is not None else self.one_way_ms
        out: dict = {}
        for src in self.all_sites():
            out[src] = {}
            for dst in self.all_sites():
                if src == dst:
                    out[src][dst] = 0
                else:
                    out[src][dst] = ms(src_matrix[src][dst])
        return out

    def schedule_us(self) -> list[tuple[int, dict]]:
        return [(ms(at_ms), self.one_way_us_matrix(m)) for at_ms, m in self.schedule]

    def validate(self, path: str = "topology") -> None:
        _require(len(self.sites) >= 1, f"{path}.sites", "need at least one data source site")
        _require(DM not in self.sites, f"{path}.sites", f"'{DM}' is reserved for the middleware")
        _require(len(set(self.sites)) == len(self.sites), f"{path}.sites", "duplicate site ids")
        _require(self.jitter_pct >= 0, f"{path}.jitter_pct", "must be >= 0")
        for src in self.all_sites():
            row = self.one_way_ms.get(src)
            _require(row is not None, f"{path}.one_way_ms.{src}", "missing row")
            for dst in self.all_sites():
                if dst == src:
                    continue
                _require(dst in row, f"{path}.one_way_ms.{src}.{dst}", "missing entry")
                _require(row[dst] >= 0, f"{path}.one_way_ms.{src}.{dst}", "must be >= 0")
        for i, entry in enumerate(self.schedule):
            _require(len(entry) == 2, f"{path}.schedule[{i}]", "expected (at_ms, matrix)")


def star_topology(rtt_ms: dict, jitter_pct: float = 0.0) -> TopologyConfig:
    """Build a topology from middleware round trips per site.

    One-way delay to a site is half its round trip.  Delay between two data
    sources defaults to the larger of their one-way delays from the
    middleware, which keeps peer messages between a near and a far site on
    the same scale as the far link.
    """
    sites = list(rtt_ms)
    one_way = {s: rtt / 2.0 for s, rtt in rtt_ms.items()}
    matrix: dict = {DM: {}}
    for s in sites:
        matrix[DM][s] = one_way[s]
        matrix[s] = {DM: one_way[s]}
        for t in sites:
            if t != s:
                matrix[s][t] = max(one_way[s], one_way[t])
    return TopologyConfig(sites=sites, one_way_ms=matrix, jitter_pct=jitter_pct)


def default_topology(jitter_pct: float = 0.0) -> TopologyConfig:
    """Four data nodes at round trips of 0, 27, 73 and 251 ms from the DM."""
    return star_topology({"ds1": 0.0, "ds2": 27.0, "ds3": 73.0, "ds4": 251.0},
                         jitter_pct=jitter_pct)


@dataclass
class NodeConfig:
    keys_per_node: int = 1_000_000
    lock_wait_timeout_ms: float = 5000.0
    service_time_ms: float = 0.1

    def validate(self, path: str = "datasource") -> None:
        _require(self.keys_per_node >= 1, f"{path}.keys_per_node", "must be >= 1")
        _require(self.lock_wait_timeout_ms > 0, f"{path}.lock_wait_timeout_ms", "must be > 0")
        _require(self.service_time_ms >= 0, f"{path}.service_time_ms", "must be >= 0")


@dataclass
class ProtocolConfig:
    log_flush_ms: float = 1.0
    lan_hop_ms: float = 0.5
    probe_interval_ms: float = 10.0
    alpha_net: float = 0.875
    recovery_retry_ms: float = 500.0

    def validate(self, path: str = "protocol") -> None:
        _require(self.log_flush_ms >= 0, f"{path}.log_flush_ms", "must be >= 0")
        _require(self.lan_hop_ms >= 0, f"{path}.lan_hop_ms", "must be >= 0")
        _require(self.probe_interval_ms > 0, f"{path}.probe_interval_ms", "must be > 0")
        _require(0 <= self.alpha_net < 1, f"{path}.alpha_net", "must be in [0, 1)")
        _require(self.recovery_retry_ms > 0, f"{path}.recovery_retry_ms", "must be > 0")


@dataclass
class SchedulerConfig:
    scheduling: bool = False     # postpone statement dispatch per site
    adv_opt: bool = False        # hotspot forecasting plus admission gate
    alpha: float = 0.8           # smoothing for per-key latency stats
    beta: float = 0.7            # scale-down applied to forecast latency
    footprint_capacity: int = 4096
    retry_limit: int = 10

    def validate(self, path: str = "scheduler") -> None:
        _require(0 <= self.alpha <= 1, f"{path}.alpha", "must be in [0, 1]")
        _require(0 < self.beta <= 1, f"{path}.beta", "must be in (0, 1]")
        _require(self.footprint_capacity >= 1, f"{path}.footprint_capacity", "must be >= 1")
        _require(self.retry_limit >= 1, f"{path}.retry_limit", "must be >= 1")
        if self.adv_opt:
            _require(self.scheduling, f"{path}.adv_opt", "requires scheduling on")


@dataclass
class FeatureConfig:
    decentralized_prepare: bool = False
    early_abort: bool = False


@dataclass
class FaultEvent:
    at_ms: float
    site: str
    action: str                  # crash | restart | crash_after_flush

    ACTIONS = ("crash", "restart", "crash_after_flush")

    def validate(self, sites: list[str], path: str) -> None:
        _require(self.at_ms >= 0, f"{path}.at_ms", "must be >= 0")
        _require(self.action in self.ACTIONS, f"{path}.action",
                 f"must be one of {self.ACTIONS}")
        _require(self.site == DM or self.site in sites, f"{path}.site",
                 f"unknown site '{self.site}'")
        if self.action == "crash_after_flush":
            _require(self.site == DM, f"{path}.site",
                     "crash_after_flush applies to the middleware only")


@dataclass
class WorkloadConfig:
    kind: str = "ycsb"                     # ycsb | script
    terminals: int = 64
    ops_per_txn: int = 5
    read_fraction: float = 0.5
    contention: Optional[str] = None       # lc | mc | hc preset for theta
    theta: float = 0.9
    dist_txn_ratio: float = 0.2
    dist_participants: int = 2
    rounds: int = 1
    txn_budget: int = 1000
    duration_ms: Optional[float] = None    # alternative stop condition
    home_sites: Optional[list[str]] = None     # candidate sites for single-site txns
    dist_site_sets: Optional[list[list[str]]] = None  # candidate sets for multi-site txns
    client_abort_ratio: float = 0.0
    script: list = field(default_factory=list)

    def resolved_theta(self) -> float:
        if self.contention is not None:
            return CONTENTION_THETA[self.contention]
        return self.theta

    def validate(self, sites: list[str], path: str = "workload") -> None:
        _require(self.kind in ("ycsb", "script"), f"{path}.kind", "must be ycsb or script")
        if self.kind == "script":
            _require(len(self.script) > 0, f"{path}.script", "script workload needs entries")
            return
        _require(self.terminals >= 1, f"{path}.terminals", "must be >= 1")
        _require(self.ops_per_txn >= 1, f"{path}.ops_per_txn", "must be >= 1")
        _require(0 <= self.read_fraction <= 1, f"{path}.read_fraction", "must be in [0, 1]")
        if self.contention is not None:
            _require(self.contention in CONTENTION_THETA, f"{path}.contention",
                     f"must be one of {sorted(CONTENTION_THETA)}")
        _require(self.resolved_theta() >= 0, f"{path}.theta", "must be >= 0")
        _require(0 <= self.dist_txn_ratio <= 1, f"{path}.dist_txn_ratio", "must be in [0, 1]")
        _require(2 <= self.dist_participants, f"{path}.dist_participants", "must be >= 2")
        _require(self.rounds >= 1, f"{path}.rounds", "must be >= 1")
        _require(self.txn_budget >= 0, f"{path}.txn_budget", "must be >= 0")
        _require(0 <= self.client_abort_ratio <= 1, f"{path}.client_abort_ratio",
                 "must be in [0, 1]")
        for s in self.home_sites or []:
            _require(s in sites, f"{path}.home_sites", f"unknown site '{s}'")
        for i, group in enumerate(self.dist_site_sets or []):
            _require(len(group) >= 2, f"{path}.dist_site_sets[{i}]", "needs >= 2 sites")
            for s in group:
                _require(s in sites, f"{path}.dist_site_sets[{i}]", f"unknown site '{s}'")


@dataclass
class ExperimentConfig:
    topology: TopologyConfig
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    datasource: NodeConfig = field(default_factory=NodeConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    faults: list[FaultEvent] = field(default_factory=list)
    seed: int = 1
    warmup_frac: float = 0.1

    def validate(self) -> None:
        self.topology.validate()
        self.workload.validate(self.topology.sites)
        self.scheduler.validate()
        self.datasource.validate()
        self.protocol.validate()
        _require(0 <= self.warmup_frac < 1, "warmup_frac", "must be in [0, 1)")
        _require(0 <= self.seed < 2 ** 64, "seed", "must fit in 64 bits")
        for i, f in enumerate(self.faults):
            f.validate(self.topology.sites, f"faults[{i}]")


def _topology_from_dict(d: dict, path: str) -> TopologyConfig:
    _no_extras(d, {"sites", "one_way_ms", "jitter_pct", "schedule", "rtt_ms"}, path)
    if "rtt_ms" in d:
        top = star_topology(dict(d["rtt_ms"]), jitter_pct=d.get("jitter_pct", 0.0))
    else:
        top = TopologyConfig(
            sites=list(d.get("sites", [])),
            one_way_ms=dict(d.get("one_way_ms", {})),
            jitter_pct=d.get("jitter_pct", 0.0),
        )
    for i, entry in enumerate(d.get("schedule", [])):
        _require(isinstance(entry, dict) and "one_way_ms" in entry
                 and ("at_ms" in entry or "at_s" in entry),
                 f"{path}.schedule[{i}]", "expected {at_ms|at_s, one_way_ms}")
        at_ms = entry.get("at_ms", entry.get("at_s", 0) * 1000.0)
        top.schedule.append((at_ms, entry["one_way_ms"]))
    return top


def _fill(obj, d: dict, path: str):
    known = set(obj.__dataclass_fields__)
    _no_extras(d, known, path)
    for k, v in d.items():
        setattr(obj, k, v)
    return obj


def experiment_from_dict(d: dict, base_dir: str = ".") -> ExperimentConfig:
    _no_extras(d, {"topology", "workload", "scheduler", "features", "datasource",
                   "protocol", "faults", "seed", "warmup_frac"}, "config")
    topo = d.get("topology")
    if topo is None:
        topology = default_topology()
    elif isinstance(topo, str):
        ref = topo if os.path.isabs(topo) else os.path.join(base_dir, topo)
        with open(ref, "r", encoding="utf-8") as f:
            topology = _topology_from_dict(json.load(f), f"topology({topo})")
    else:
        topology = _topology_from_dict(topo, "topology")

    cfg = ExperimentConfig(topology=topology)
    _fill(cfg.workload, d.get("workload", {}), "workload")
    _fill(cfg.scheduler, d.get("scheduler", {}), "scheduler")
    _fill(cfg.features, d.get("features", {}), "features")
    _fill(cfg.datasource, d.get("datasource", {}), "datasource")
    _fill(cfg.protocol, d.get("protocol", {}), "protocol")
    for i, fd in enumerate(d.get("faults", [])):
        _no_extras(fd, {"at_ms", "at_s", "site", "action"}, f"faults[{i}]")
        at_ms = fd.get("at_ms", fd.get("at_s", 0) * 1000.0)
        cfg.faults.append(FaultEvent(at_ms=at_ms, site=fd.get("site", DM),
                                     action=fd.get("action", "crash")))
    cfg.seed = d.get("seed", 1)
    cfg.warmup_frac = d.get("warmup_frac", 0.1)
    cfg.validate()
    return cfg


def load_experiment(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return experiment_from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))
