"""Closed-loop transactional workload generation.

Keys live in a global integer keyspace range-partitioned across data
sources: node i owns [i*keys_per_node, (i+1)*keys_per_node).  Key skew
within a node follows a bounded Zipfian distribution (Gray et al.'s O(1)
rejection-free sampler), with ranks scattered over the node's range by an
FNV-1a scramble so that hot keys are not adjacent.

Terminals are closed-loop clients: each submits its next transaction the
moment the previous one resolves.  Transaction ids are client-assigned
(terminal*10^7 + serial) so the client side can re-identify outstanding
transactions across a middleware crash.  A scripted open-loop generator
covers hand-built timing scenarios.
"""

from __future__ import annotations

from typing import Optional

from .config import ExperimentConfig, WorkloadConfig
from .coordinator import Coordinator, Statement, Transaction
from .datasource import OP_READ, OP_WRITE
from .kernel import Kernel, ms

TID_STRIDE = 10_000_000
CLIENT_RETRY_US = 10_000


def fnv1a_64(value: int) -> int:
    h = 0xcbf29ce484222325
    for _ in range(8):
        h ^= value & 0xFF
        h = (h * 0x100000001b3) & 0xFFFFFFFFFFFFFFFF
        value >>= 8
    return h


class ZipfSampler:
    """Bounded Zipfian ranks over [0, n) in O(1) per draw.

    Rank r is drawn with probability proportional to 1/(r+1)^theta, using
    the closed-form approximate inverse CDF of Gray et al.; theta == 0 is
    exactly uniform and theta == 1 is nudged to avoid the degenerate
    exponent.
    """

    def __init__(self, n: int, theta: float):
        if n < 2:
            raise ValueError("zipf sampler needs n >= 2")
        if theta < 0:
            raise ValueError("zipf theta must be >= 0")
        if abs(theta - 1.0) < 1e-6:
            theta = 1.0 + 1e-4
        self.n = n
        self.theta = theta
        self.zetan = sum(1.0 / (i ** theta) for i in range(1, n + 1))
        self.alpha = 1.0 / (1.0 - theta)
        zeta2 = 1.0 + 0.5 ** theta
        if n == 2:
            # zetan == zeta2, so cut2 == 1 and the closed-form tail below
            # is never consulted; eta's expression would divide by zero
            self.eta = 0.0
        else:
            self.eta = ((1.0 - (2.0 / n) ** (1.0 - theta))
                        / (1.0 - zeta2 / self.zetan))
        self.cut1 = 1.0 / self.zetan
        self.cut2 = (1.0 + 0.5 ** theta) / self.zetan

    def next_rank(self, rng) -> int:
        u = rng.random()
        if u < self.cut1:
            return 0
        if u < self.cut2:
            return 1
        rank = int(self.n * (self.eta * u - self.eta + 1.0) ** self.alpha)
        return min(rank, self.n - 1)


class KeyChooser:
    """Maps (site, skew draw) to a key in that site's partition."""

    def __init__(self, sites: list[str], keys_per_node: int, theta: float):
        self.keys_per_node = keys_per_node
        self.bases = {site: i * keys_per_node for i, site in enumerate(sites)}
        self.sampler = ZipfSampler(keys_per_node, theta)

    def site_of(self, key: int, sites: list[str]) -> str:
        return sites[key // self.keys_per_node]

    def draw_distinct(self, site: str, count: int, rng) -> list[int]:
        if count > self.keys_per_node:
            raise ValueError("more distinct keys requested than the node holds")
        base = self.bases[site]
        out: set[int] = set()
        while len(out) < count:
            rank = self.sampler.next_rank(rng)
            out.add(base + fnv1a_64(rank) % self.keys_per_node)
        return sorted(out)


class TransactionFactory:
    def __init__(self, cfg: WorkloadConfig, sites: list[str], keys_per_node: int):
        self.cfg = cfg
        self.sites = list(sites)
        self.homes = list(cfg.home_sites) if cfg.home_sites else list(sites)
        self.chooser = KeyChooser(self.sites, keys_per_node,
                                  cfg.resolved_theta())
        if cfg.dist_site_sets:
            self.site_sets = [list(s) for s in cfg.dist_site_sets]
        else:
            self.site_sets = None

    def _choose_participants(self, rng) -> list[str]:
        if rng.random() >= self.cfg.dist_txn_ratio or len(self.sites) < 2:
            return [self.homes[rng.randrange(len(self.homes))]]
        if self.site_sets is not None:
            return list(self.site_sets[rng.randrange(len(self.site_sets))])
        count = min(self.cfg.dist_participants, len(self.sites))
        return sorted(rng.sample(self.sites, count))

    def build(self, tid: int, rng) -> Transaction:
        cfg = self.cfg
        participants = self._choose_participants(rng)
        # every participant gets at least one op; leftovers round-robin
        counts = {site: 1 for site in participants}
        for i in range(cfg.ops_per_txn - len(participants)):
            counts[participants[i % len(participants)]] += 1
        per_site_ops: dict[str, list] = {}
        for site in participants:
            keys = self.chooser.draw_distinct(site, counts[site], rng)
            per_site_ops[site] = [
                (OP_READ if rng.random() < cfg.read_fraction else OP_WRITE, k)
                for k in keys]
        rounds = self._split_rounds(participants, per_site_ops)
        client_abort = (cfg.client_abort_ratio > 0
                        and rng.random() < cfg.client_abort_ratio)
        return Transaction(tid=tid, rounds=rounds, client_abort=client_abort)

    def _split_rounds(self, participants: list[str],
                      per_site_ops: dict[str, list]) -> list:
        n_rounds = max(1, self.cfg.rounds)
        chunks: dict[str, list] = {}
        for site in participants:
            ops = per_site_ops[site]
            n = min(n_rounds, len(ops))
            size, extra = divmod(len(ops), n)
            parts, idx = [], 0
            for i in range(n):
                step = size + (1 if i < extra else 0)
                parts.append(ops[idx:idx + step])
                idx += step
            chunks[site] = parts
        rounds = []
        for r in range(n_rounds):
            stmts = []
            for site in participants:
                parts = chunks[site]
                if r < len(parts):
                    stmts.append(Statement(site=site, ops=parts[r],
                                           is_last=(r == len(parts) - 1)))
            if stmts:
                rounds.append(stmts)
        return rounds


class TerminalPool:
    """Closed-loop clients; serves as the client port of the middleware."""

    def __init__(self, kernel: Kernel, factory: TransactionFactory,
                 cfg: WorkloadConfig):
        self.kernel = kernel
        self.factory = factory
        self.cfg = cfg
        self.coordinator: Optional[Coordinator] = None
        self.serials = {t: 0 for t in range(1, cfg.terminals + 1)}
        self._outstanding: dict[int, Transaction] = {}
        self._accepted: set[int] = set()
        self.submitted = 0
        self.resolved = 0
        self.committed = 0
        self.stopped: set[int] = set()
        self.duration_us = (ms(cfg.duration_ms)
                            if cfg.duration_ms is not None else None)

    def bind(self, coordinator: Coordinator) -> None:
        self.coordinator = coordinator

    def start(self) -> None:
        for term in sorted(self.serials):
            self.kernel.schedule_in(0, f"t{term}", "terminal_start",
                                    lambda t=term: self._next(t))

    @property
    def done(self) -> bool:
        return not self._outstanding and len(self.stopped) == len(self.serials)

    def outstanding(self) -> dict[int, Transaction]:
        # only submissions the middleware accepted; unaccepted ones are
        # still retrying client-side and must not be resolved for us
        return {tid: txn for tid, txn in self._outstanding.items()
                if tid in self._accepted}

    def outstanding_count(self) -> int:
        return len(self._outstanding)

    def _budget_left(self) -> bool:
        if self.cfg.txn_budget is not None and self.submitted >= self.cfg.txn_budget:
            return False
        if self.duration_us is not None and self.kernel.now >= self.duration_us:
            return False
        return True

    def _next(self, term: int) -> None:
        if not self._budget_left():
            self.stopped.add(term)
            return
        self.serials[term] += 1
        tid = term * TID_STRIDE + self.serials[term]
        rng = self.kernel.rng(f"wl.t{term}")
        txn = self.factory.build(tid, rng)
        self._outstanding[tid] = txn
        self.submitted += 1
        self._try_submit(tid)

    def _try_submit(self, tid: int) -> None:
        if tid not in self._outstanding:
            return                      # resolved during middleware recovery
        if self.coordinator.is_down:
            self.kernel.schedule_in(CLIENT_RETRY_US, f"t{tid // TID_STRIDE}",
                                    "client_retry",
                                    lambda: self._try_submit(tid))
            return
        self.coordinator.submit(self._outstanding[tid])
        self._accepted.add(tid)

    def deliver(self, tid: int, committed: bool, abort_class: str) -> None:
        if tid not in self._outstanding:
            return
        del self._outstanding[tid]
        self._accepted.discard(tid)
        self.resolved += 1
        if committed:
            self.committed += 1
        term = tid // TID_STRIDE
        self.kernel.schedule_in(0, f"t{term}", "terminal_next",
                                lambda: self._next(term))


class ScriptRunner:
    """Open-loop submissions at fixed virtual times, for timing scenarios."""

    def __init__(self, kernel: Kernel, script: list):
        self.kernel = kernel
        self.coordinator: Optional[Coordinator] = None
        self.script = script
        self._outstanding: dict[int, Transaction] = {}
        self._accepted: set[int] = set()
        self.submitted = 0
        self.resolved = 0
        self.committed = 0
        self.outcomes: dict[int, tuple] = {}

    def bind(self, coordinator: Coordinator) -> None:
        self.coordinator = coordinator

    @property
    def done(self) -> bool:
        return self.submitted == len(self.script) and not self._outstanding

    def outstanding(self) -> dict[int, Transaction]:
        return {tid: txn for tid, txn in self._outstanding.items()
                if tid in self._accepted}

    def start(self) -> None:
        for idx, entry in enumerate(self.script):
            tid = entry.get("tid", idx + 1)
            txn = script_transaction(tid, entry)
            self.kernel.schedule(ms(entry.get("at_ms", 0.0)), "script", "submit",
                                 lambda t=txn: self._submit(t))

    def _submit(self, txn: Transaction) -> None:
        self._outstanding[txn.tid] = txn
        self.submitted += 1
        self._retry(txn.tid)

    def _retry(self, tid: int) -> None:
        if tid not in self._outstanding:
            return
        if self.coordinator.is_down:
            self.kernel.schedule_in(CLIENT_RETRY_US, "script", "client_retry",
                                    lambda: self._retry(tid))
            return
        self.coordinator.submit(self._outstanding[tid])
        self._accepted.add(tid)

    def deliver(self, tid: int, committed: bool, abort_class: str) -> None:
        if tid not in self._outstanding:
            return
        del self._outstanding[tid]
        self._accepted.discard(tid)
        self.resolved += 1
        if committed:
            self.committed += 1
        self.outcomes[tid] = (committed, abort_class)


def script_transaction(tid: int, entry: dict) -> Transaction:
    """Builds a transaction from a script entry.

    Entry shape: {"at_ms": float, "rounds": [[{"site": str, "ops":
    [[op, key], ...]}, ...], ...], "client_abort": bool}.  The last
    statement of each participant is flagged automatically.
    """
    rounds = []
    for stmts in entry["rounds"]:
        rounds.append([Statement(site=s["site"],
                                 ops=[(op, key) for op, key in s["ops"]])
                       for s in stmts])
    last_pos: dict[str, tuple] = {}
    for r, stmts in enumerate(rounds):
        for i, stmt in enumerate(stmts):
            last_pos[stmt.site] = (r, i)
    for r, i in last_pos.values():
        rounds[r][i].is_last = True
    return Transaction(tid=tid, rounds=rounds,
                       client_abort=bool(entry.get("client_abort", False)))
