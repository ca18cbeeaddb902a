"""Latency-aware dispatch planning and hotspot-based admission.

The planner delays sending a statement to a near data source so that every
participant of a round finishes executing (and, on the fast path, preparing)
at about the same instant.  That shortens how long near sites sit on locks
waiting for far sites, without delaying the transaction's completion.

Per-key statistics live in a bounded footprint: an AVL-ordered map (point
and range lookup in O(log n)) with least-recently-used eviction.  They feed
two estimates: a forecast of local execution latency used to refine the
postponement, and an abort probability used to gate admission under heavy
contention.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .config import SchedulerConfig

ADMIT = "admit"
DELAY = "delay"
REJECT = "reject"


@dataclass
class HotspotEntry:
    key: int
    weighted_latency_us: float = 0.0   # smoothed share of execution latency
    admitted: int = 0                  # transactions ever admitted on this key
    committed: int = 0                 # of those, how many committed
    in_flight: int = 0                 # admitted but not yet finished
    # LRU chain
    prev: Optional["HotspotEntry"] = None
    next: Optional["HotspotEntry"] = None


class _AvlNode:
    __slots__ = ("key", "entry", "left", "right", "height")

    def __init__(self, key: int, entry: HotspotEntry):
        self.key = key
        self.entry = entry
        self.left: Optional[_AvlNode] = None
        self.right: Optional[_AvlNode] = None
        self.height = 1


def _h(n: Optional[_AvlNode]) -> int:
    return n.height if n else 0


def _fix(n: _AvlNode) -> None:
    n.height = 1 + max(_h(n.left), _h(n.right))


def _rot_right(y: _AvlNode) -> _AvlNode:
    x = y.left
    y.left = x.right
    x.right = y
    _fix(y)
    _fix(x)
    return x


def _rot_left(x: _AvlNode) -> _AvlNode:
    y = x.right
    x.right = y.left
    y.left = x
    _fix(x)
    _fix(y)
    return y


def _rebalance(n: _AvlNode) -> _AvlNode:
    _fix(n)
    bal = _h(n.left) - _h(n.right)
    if bal > 1:
        if _h(n.left.left) < _h(n.left.right):
            n.left = _rot_left(n.left)
        return _rot_right(n)
    if bal < -1:
        if _h(n.right.right) < _h(n.right.left):
            n.right = _rot_right(n.right)
        return _rot_left(n)
    return n


def _insert(n: Optional[_AvlNode], key: int, entry: HotspotEntry) -> _AvlNode:
    if n is None:
        return _AvlNode(key, entry)
    if key < n.key:
        n.left = _insert(n.left, key, entry)
    elif key > n.key:
        n.right = _insert(n.right, key, entry)
    else:
        n.entry = entry
        return n
    return _rebalance(n)


def _delete(n: Optional[_AvlNode], key: int) -> Optional[_AvlNode]:
    if n is None:
        return None
    if key < n.key:
        n.left = _delete(n.left, key)
    elif key > n.key:
        n.right = _delete(n.right, key)
    else:
        if n.left is None:
            return n.right
        if n.right is None:
            return n.left
        succ = n.right
        while succ.left is not None:
            succ = succ.left
        n.key, n.entry = succ.key, succ.entry
        n.right = _delete(n.right, succ.key)
    return _rebalance(n)


class HotspotMap:
    """Key-ordered statistics map bounded by LRU eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._root: Optional[_AvlNode] = None
        self._size = 0
        # LRU sentinels: _head.next is most recent, _tail.prev least recent
        self._head = HotspotEntry(key=-1)
        self._tail = HotspotEntry(key=-1)
        self._head.next = self._tail
        self._tail.prev = self._head

    def __len__(self) -> int:
        return self._size

    def _unlink(self, e: HotspotEntry) -> None:
        e.prev.next = e.next
        e.next.prev = e.prev

    def _push_front(self, e: HotspotEntry) -> None:
        e.next = self._head.next
        e.prev = self._head
        self._head.next.prev = e
        self._head.next = e

    def _touch(self, e: HotspotEntry) -> None:
        self._unlink(e)
        self._push_front(e)

    def get(self, key: int) -> Optional[HotspotEntry]:
        n = self._root
        while n is not None:
            if key < n.key:
                n = n.left
            elif key > n.key:
                n = n.right
            else:
                self._touch(n.entry)
                return n.entry
        return None

    def get_or_create(self, key: int) -> HotspotEntry:
        e = self.get(key)
        if e is not None:
            return e
        if self._size >= self.capacity:
            victim = self._tail.prev
            self._unlink(victim)
            self._root = _delete(self._root, victim.key)
            self._size -= 1
        e = HotspotEntry(key=key)
        self._root = _insert(self._root, key, e)
        self._size += 1
        self._push_front(e)
        return e

    def range_entries(self, lo: int, hi: int) -> list[HotspotEntry]:
        """Entries with lo <= key <= hi in key order (LRU order untouched)."""
        out: list[HotspotEntry] = []

        def walk(n: Optional[_AvlNode]) -> None:
            if n is None:
                return
            if n.key > lo:
                walk(n.left)
            if lo <= n.key <= hi:
                out.append(n.entry)
            if n.key < hi:
                walk(n.right)

        walk(self._root)
        return out

    # test support: structural invariants

    def height(self) -> int:
        return _h(self._root)

    def check_structure(self) -> None:
        def walk(n: Optional[_AvlNode]) -> int:
            if n is None:
                return 0
            hl, hr = walk(n.left), walk(n.right)
            assert abs(hl - hr) <= 1, f"unbalanced at key {n.key}"
            assert n.height == 1 + max(hl, hr)
            return n.height

        keys: list[int] = []

        def inorder(n: Optional[_AvlNode]) -> None:
            if n is None:
                return
            inorder(n.left)
            keys.append(n.key)
            inorder(n.right)

        walk(self._root)
        inorder(self._root)
        assert keys == sorted(keys), "search-tree order violated"
        assert len(keys) == self._size


class Scheduler:
    """Admission control plus per-site dispatch postponement."""

    def __init__(self, cfg: SchedulerConfig, rtt_us: Callable[[str], float],
                 rng: random.Random):
        self.cfg = cfg
        self.rtt_us = rtt_us
        self.rng = rng
        self.footprint = HotspotMap(cfg.footprint_capacity)
        self._admitted: set[int] = set()

    # ------------------------------------------------------------- formulas

    @staticmethod
    def optimal_start_basic(rtts: dict, target: str) -> float:
        """Delay for `target` so all participants finish together: the slowest
        link gets 0, everyone else waits out the difference."""
        if target not in rtts:
            raise ValueError(f"target '{target}' not among participants {list(rtts)}")
        return max(rtts.values()) - rtts[target]

    @staticmethod
    def optimal_start_adv(rtts: dict, lels: dict, target: str) -> float:
        """Like the basic rule but each participant's window is its round trip
        plus its forecast local execution latency."""
        if target not in rtts:
            raise ValueError(f"target '{target}' not among participants {list(rtts)}")
        windows = {s: rtts[s] + lels.get(s, 0.0) for s in rtts}
        start = max(windows.values()) - windows[target]
        return max(start, 0.0)

    def forecast_local_latency_us(self, keys: Iterable[int]) -> float:
        """Scaled sum of per-key smoothed latencies; unknown keys count 0."""
        total = 0.0
        for k in keys:
            e = self.footprint.get(k)
            if e is not None:
                total += e.weighted_latency_us
        return self.cfg.beta * total

    def abort_probability(self, keys: Iterable[int]) -> float:
        """Chance this transaction aborts, accumulated per key from the
        commit ratio raised to the number of concurrent holders."""
        p = 0.0
        for k in keys:
            e = self.footprint.get(k)
            if e is None or e.admitted == 0:
                continue
            factor = (e.committed / e.admitted) ** max(e.in_flight - 1, 0)
            p = 1.0 - (1.0 - p) * factor
        return p

    def update_footprint(self, keys: list[int], measured_lel_us: float,
                         committed: bool) -> None:
        """Fold one finished subtransaction's execution latency into its keys.

        The latency is split across keys in proportion to their current
        smoothed values (evenly when all are zero), then folded in with
        exponential smoothing.
        """
        if not keys:
            return
        entries = [self.footprint.get_or_create(k) for k in keys]
        total = sum(e.weighted_latency_us for e in entries)
        alpha = self.cfg.alpha
        for e in entries:
            share = e.weighted_latency_us / total if total > 0 else 1.0 / len(entries)
            e.weighted_latency_us = (alpha * e.weighted_latency_us
                                     + (1.0 - alpha) * measured_lel_us * share)

    # ------------------------------------------------------- protocol facing

    def evaluate_admission(self, txn_keys: list[int], site_keys: dict) -> tuple[str, int]:
        """Admission decision for one gate evaluation.

        Returns (ADMIT, 0) or (DELAY, backoff_us).  The caller counts failed
        evaluations and converts the retry-limit-th failure into a reject.
        Without the contention option every transaction is admitted.
        """
        if not self.cfg.adv_opt:
            return ADMIT, 0
        p = self.abort_probability(txn_keys)
        if p > self.rng.random():
            return DELAY, self.backoff_us(site_keys)
        return ADMIT, 0

    def backoff_us(self, site_keys: dict) -> int:
        worst = 0.0
        for site, keys in site_keys.items():
            worst = max(worst, self.rtt_us(site) + self.forecast_local_latency_us(keys))
        return max(int(round(worst)), 1000)

    def on_admitted(self, tid: int, txn_keys: list[int]) -> None:
        if not self.cfg.adv_opt:
            return
        self._admitted.add(tid)
        for k in txn_keys:
            e = self.footprint.get_or_create(k)
            e.admitted += 1
            e.in_flight += 1

    def plan_round(self, site_keys: dict) -> dict:
        """Postponement in microseconds for each site of one dispatch round."""
        if not self.cfg.scheduling or len(site_keys) <= 1:
            return {site: 0 for site in site_keys}
        rtts = {site: float(self.rtt_us(site)) for site in site_keys}
        if self.cfg.adv_opt:
            lels = {site: self.forecast_local_latency_us(keys)
                    for site, keys in site_keys.items()}
            return {site: int(round(self.optimal_start_adv(rtts, lels, site)))
                    for site in site_keys}
        return {site: int(round(self.optimal_start_basic(rtts, site)))
                for site in site_keys}

    def record_completion(self, tid: int, txn_keys: list[int],
                          subtxn_stats: list, committed: bool) -> None:
        """Settle per-key stats when a transaction resolves.

        subtxn_stats is a list of (keys, exec_latency_us, exec_completed);
        only subtransactions that finished executing contribute latency.
        Counters only move for transactions this scheduler incarnation
        admitted, so a middleware restart cannot unbalance them.
        """
        if not self.cfg.adv_opt or tid not in self._admitted:
            return
        self._admitted.discard(tid)
        for keys, lel_us, exec_completed in subtxn_stats:
            if exec_completed and keys:
                self.update_footprint(list(keys), float(lel_us), committed)
        for k in txn_keys:
            e = self.footprint.get_or_create(k)
            if committed:
                e.committed += 1
            if e.in_flight > 0:
                e.in_flight -= 1

    def reset(self) -> None:
        """Drop all volatile scheduling state (middleware crash)."""
        self.footprint = HotspotMap(self.cfg.footprint_capacity)
        self._admitted.clear()
