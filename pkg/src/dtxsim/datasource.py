"""Simulated data source: record store, lock manager, subtransaction states.

Locking is strict two-phase: shared for reads, exclusive for writes, granted
FIFO per key, and held until the subtransaction commits or aborts.  Writes
are buffered and applied at commit, incrementing the record version by one,
so committed effects are countable after a run.

A subtransaction moves ACTIVE -> ENDED -> PREPARED -> COMMITTED/ABORTED,
or straight to ABORTED from ACTIVE/ENDED.  Only the record store, the final
outcomes map and PREPARED state (with its locks) survive a crash; everything
else is volatile and a restart discards it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .config import NodeConfig
from .kernel import Kernel, ms
from .trace import (EV_LOCK_GRANT, EV_LOCK_RELEASE, EV_SUBTXN_FINAL, TraceRecorder)

OP_READ = "r"
OP_WRITE = "w"


class ProtocolError(RuntimeError):
    """An impossible transition or message for the current protocol state."""


class LockMode(Enum):
    SHARED = "s"
    EXCLUSIVE = "x"


class SubtxnState(Enum):
    ACTIVE = "active"
    ENDED = "ended"
    PREPARED = "prepared"
    COMMITTED = "committed"
    ABORTED = "aborted"


_LEGAL = {
    SubtxnState.ACTIVE: {SubtxnState.ENDED, SubtxnState.ABORTED},
    SubtxnState.ENDED: {SubtxnState.PREPARED, SubtxnState.ABORTED},
    SubtxnState.PREPARED: {SubtxnState.COMMITTED, SubtxnState.ABORTED},
    SubtxnState.COMMITTED: set(),
    SubtxnState.ABORTED: set(),
}

FINAL_STATES = (SubtxnState.COMMITTED, SubtxnState.ABORTED)


@dataclass
class SubtxnTiming:
    first_lock_at: Optional[int]
    last_unlock_at: Optional[int]
    local_exec_us: int

    def lock_span_us(self) -> int:
        if self.first_lock_at is None or self.last_unlock_at is None:
            return 0
        return self.last_unlock_at - self.first_lock_at


@dataclass
class _Waiter:
    tid: int
    key: int
    mode: LockMode
    enqueued_at: int
    deadline: int
    epoch: int
    granted: bool = False
    cancelled: bool = False


@dataclass
class _LockState:
    holders: dict = field(default_factory=dict)   # tid -> LockMode
    queue: list = field(default_factory=list)     # [_Waiter]


@dataclass
class _StmtRun:
    ops: list
    idx: int
    arrived_at: int
    done: Callable          # done(ok: bool, reason: str)


@dataclass
class _Subtxn:
    tid: int
    state: SubtxnState = SubtxnState.ACTIVE
    held: dict = field(default_factory=dict)      # key -> LockMode
    writes: list = field(default_factory=list)    # keys with buffered increments
    first_lock_at: Optional[int] = None
    local_exec_us: int = 0
    stmt: Optional[_StmtRun] = None
    waiting: Optional[_Waiter] = None


@dataclass
class _PreparedRecord:
    held: dict
    writes: list
    first_lock_at: Optional[int]
    local_exec_us: int


class DataSourceEngine:
    def __init__(self, kernel: Kernel, site: str, cfg: NodeConfig, trace: TraceRecorder):
        self.kernel = kernel
        self.site = site
        self.cfg = cfg
        self.trace = trace
        self.service_us = ms(cfg.service_time_ms)
        self.timeout_us = ms(cfg.lock_wait_timeout_ms)
        # durable across crashes
        self.records: dict[int, int] = {}
        self.finals: dict[int, bool] = {}                 # tid -> committed?
        self.prepared_store: dict[int, _PreparedRecord] = {}
        # volatile
        self.subtxns: dict[int, _Subtxn] = {}
        self._locks: dict[int, _LockState] = {}
        self._epoch = 0

    # ------------------------------------------------------------------ state

    def state_of(self, tid: int) -> Optional[SubtxnState]:
        if tid in self.subtxns:
            return self.subtxns[tid].state
        if tid in self.finals:
            return SubtxnState.COMMITTED if self.finals[tid] else SubtxnState.ABORTED
        return None

    def prepared_tids(self) -> list[int]:
        return [tid for tid, s in self.subtxns.items() if s.state == SubtxnState.PREPARED]

    def _transition(self, sub: _Subtxn, new: SubtxnState) -> None:
        if new not in _LEGAL[sub.state]:
            raise ProtocolError(
                f"{self.site}: illegal transition {sub.state.value} -> {new.value} "
                f"for txn {sub.tid}")
        sub.state = new

    # -------------------------------------------------------------- execution

    def begin(self, tid: int) -> None:
        if tid in self.subtxns or tid in self.finals:
            raise ProtocolError(f"{self.site}: begin for known txn {tid}")
        self.subtxns[tid] = _Subtxn(tid)

    def exec_statement(self, tid: int, ops: list, done: Callable) -> None:
        """Run one statement (a list of (op, key) pairs) asynchronously.

        Each operation takes its lock, then spends the configured service
        time.  `done(ok, reason)` fires when the last operation finishes or
        the statement fails; a lock-wait timeout aborts the subtransaction
        locally first.
        """
        sub = self.subtxns.get(tid)
        if sub is None or sub.state != SubtxnState.ACTIVE:
            done(False, "not_active")
            return
        if sub.stmt is not None:
            raise ProtocolError(f"{self.site}: overlapping statements for txn {tid}")
        sub.stmt = _StmtRun(ops=list(ops), idx=0, arrived_at=self.kernel.now, done=done)
        self._advance(sub)

    def _advance(self, sub: _Subtxn) -> None:
        stmt = sub.stmt
        while stmt is not None and stmt.idx < len(stmt.ops):
            op, key = stmt.ops[stmt.idx]
            mode = LockMode.EXCLUSIVE if op == OP_WRITE else LockMode.SHARED
            if not self._covers(sub, key, mode):
                if not self._try_lock(sub, key, mode):
                    return                      # parked; grant or timeout resumes
            if self.service_us > 0:
                epoch = self._epoch
                self.kernel.schedule_in(
                    self.service_us, self.site, "op_service",
                    lambda s=sub, e=epoch: self._op_done(s, e))
                return
            self._apply_op(sub)
        if stmt is not None:
            self._finish_stmt(sub)

    def _op_done(self, sub: _Subtxn, epoch: int) -> None:
        if epoch != self._epoch or sub.stmt is None:
            return                              # crashed or aborted meanwhile
        if sub.state != SubtxnState.ACTIVE:
            return
        self._apply_op(sub)
        self._advance(sub)

    def _apply_op(self, sub: _Subtxn) -> None:
        op, key = sub.stmt.ops[sub.stmt.idx]
        if op == OP_WRITE:
            sub.writes.append(key)
        sub.stmt.idx += 1

    def _finish_stmt(self, sub: _Subtxn) -> None:
        stmt = sub.stmt
        sub.stmt = None
        sub.local_exec_us += self.kernel.now - stmt.arrived_at
        stmt.done(True, "")

    # ------------------------------------------------------------------ locks

    def _covers(self, sub: _Subtxn, key: int, mode: LockMode) -> bool:
        cur = sub.held.get(key)
        return cur == LockMode.EXCLUSIVE or cur == mode

    def _record_grant(self, sub: _Subtxn, key: int, mode: LockMode) -> None:
        sub.held[key] = mode
        if sub.first_lock_at is None:
            sub.first_lock_at = self.kernel.now
        self.trace.log(self.kernel.now, sub.tid, self.site, EV_LOCK_GRANT,
                       f"{key}:{mode.value}")

    def _try_lock(self, sub: _Subtxn, key: int, mode: LockMode) -> bool:
        ls = self._locks.setdefault(key, _LockState())
        cur = sub.held.get(key)
        if cur == LockMode.SHARED and mode == LockMode.EXCLUSIVE:
            # upgrade: allowed immediately only as the sole holder
            if len(ls.holders) == 1:
                ls.holders[sub.tid] = LockMode.EXCLUSIVE
                self._record_grant(sub, key, mode)
                return True
        elif not ls.queue and self._compatible(ls, mode):
            ls.holders[sub.tid] = mode
            self._record_grant(sub, key, mode)
            return True
        w = _Waiter(tid=sub.tid, key=key, mode=mode, enqueued_at=self.kernel.now,
                    deadline=self.kernel.now + self.timeout_us, epoch=self._epoch)
        ls.queue.append(w)
        sub.waiting = w
        self.kernel.schedule(w.deadline, self.site, "lock_timeout",
                             lambda: self._timeout(w))
        return False

    def _cancel_waiter(self, w: _Waiter) -> None:
        w.cancelled = True
        ls = self._locks.get(w.key)
        if ls is not None and w in ls.queue:
            ls.queue.remove(w)
            self._grant_waiters(w.key)

    @staticmethod
    def _compatible(ls: _LockState, mode: LockMode) -> bool:
        if not ls.holders:
            return True
        return mode == LockMode.SHARED and all(
            m == LockMode.SHARED for m in ls.holders.values())

    def _waiter_compatible(self, ls: _LockState, w: _Waiter) -> bool:
        others = [m for t, m in ls.holders.items() if t != w.tid]
        if w.mode == LockMode.EXCLUSIVE:
            return not others
        return all(m == LockMode.SHARED for m in others)

    def _grant_waiters(self, key: int) -> None:
        ls = self._locks.get(key)
        if ls is None:
            return
        resumed = []
        while ls.queue:
            w = ls.queue[0]
            if w.cancelled:
                ls.queue.pop(0)
                continue
            if not self._waiter_compatible(ls, w):
                break                           # FIFO: never overtake the head
            ls.queue.pop(0)
            w.granted = True
            sub = self.subtxns[w.tid]
            ls.holders[w.tid] = w.mode
            self._record_grant(sub, key, w.mode)
            sub.waiting = None
            resumed.append(sub)
        for sub in resumed:
            if sub.stmt is None or sub.state != SubtxnState.ACTIVE:
                continue
            if self.service_us > 0:
                epoch = self._epoch
                self.kernel.schedule_in(self.service_us, self.site, "op_service",
                                        lambda s=sub, e=epoch: self._op_done(s, e))
            else:
                self._apply_op(sub)
                self._advance(sub)

    def _timeout(self, w: _Waiter) -> None:
        if w.granted or w.cancelled or w.epoch != self._epoch:
            return
        self._cancel_waiter(w)
        sub = self.subtxns.get(w.tid)
        if sub is None or sub.state in FINAL_STATES:
            return
        stmt = sub.stmt
        sub.stmt = None
        sub.waiting = None
        self._abort(sub, "lock_timeout")
        if stmt is not None:
            sub.local_exec_us += self.kernel.now - stmt.arrived_at
            stmt.done(False, "lock_timeout")

    def _release_all(self, sub: _Subtxn) -> None:
        keys = list(sub.held)
        for key in keys:
            ls = self._locks.get(key)
            if ls is not None:
                ls.holders.pop(sub.tid, None)
            self.trace.log(self.kernel.now, sub.tid, self.site, EV_LOCK_RELEASE, str(key))
        sub.held.clear()
        for key in keys:
            self._grant_waiters(key)

    # --------------------------------------------------------------- finishes

    def end(self, tid: int) -> bool:
        sub = self.subtxns.get(tid)
        if sub is None or sub.state != SubtxnState.ACTIVE or sub.stmt is not None:
            return False
        self._transition(sub, SubtxnState.ENDED)
        return True

    def prepare(self, tid: int) -> bool:
        """Vote on commit; a yes makes the subtransaction durable first."""
        sub = self.subtxns.get(tid)
        if sub is None or sub.state != SubtxnState.ENDED:
            return False
        self.prepared_store[tid] = _PreparedRecord(
            held=dict(sub.held), writes=list(sub.writes),
            first_lock_at=sub.first_lock_at, local_exec_us=sub.local_exec_us)
        self._transition(sub, SubtxnState.PREPARED)
        return True

    def commit(self, tid: int, one_phase: bool = False) -> SubtxnTiming:
        """Apply buffered writes and release locks.  Idempotent on replay."""
        if tid in self.finals:
            if not self.finals[tid]:
                raise ProtocolError(f"{self.site}: commit for aborted txn {tid}")
            return SubtxnTiming(None, None, 0)
        sub = self.subtxns.get(tid)
        if sub is None:
            raise ProtocolError(f"{self.site}: commit for unknown txn {tid}")
        if one_phase and sub.state == SubtxnState.ENDED:
            # collapsed finish for single-participant transactions
            self.prepare(tid)
        if sub.state != SubtxnState.PREPARED:
            raise ProtocolError(
                f"{self.site}: commit in state {sub.state.value} for txn {tid}")
        for key in sub.writes:
            self.records[key] = self.records.get(key, 0) + 1
        self._transition(sub, SubtxnState.COMMITTED)
        timing = SubtxnTiming(sub.first_lock_at, self.kernel.now if sub.held else None,
                              sub.local_exec_us)
        self._release_all(sub)
        self.prepared_store.pop(tid, None)
        self.finals[tid] = True
        del self.subtxns[tid]
        self.trace.log(self.kernel.now, tid, self.site, EV_SUBTXN_FINAL, "committed")
        return timing

    def rollback(self, tid: int) -> Optional[SubtxnTiming]:
        """Undo and forget.  Unknown or already-aborted transactions ack as done."""
        if tid in self.finals:
            if self.finals[tid]:
                raise ProtocolError(f"{self.site}: rollback for committed txn {tid}")
            return None
        sub = self.subtxns.get(tid)
        if sub is None:
            return None
        if sub.waiting is not None:
            self._cancel_waiter(sub.waiting)
            sub.waiting = None
        sub.stmt = None
        return self._abort(sub, "rollback")

    def _abort(self, sub: _Subtxn, reason: str) -> SubtxnTiming:
        timing = SubtxnTiming(sub.first_lock_at,
                              self.kernel.now if sub.held else None,
                              sub.local_exec_us)
        self._release_all(sub)
        self._transition(sub, SubtxnState.ABORTED)
        self.prepared_store.pop(sub.tid, None)
        self.finals[sub.tid] = False
        del self.subtxns[sub.tid]
        self.trace.log(self.kernel.now, sub.tid, self.site, EV_SUBTXN_FINAL,
                       f"aborted:{reason}")
        return timing

    # ----------------------------------------------------------------- faults

    def crash(self) -> None:
        """Lose all volatile state.  PREPARED subtransactions stay durable."""
        self._epoch += 1
        for tid, sub in list(self.subtxns.items()):
            if sub.state == SubtxnState.PREPARED:
                continue
            for key in sub.held:
                self.trace.log(self.kernel.now, tid, self.site, EV_LOCK_RELEASE, str(key))
            self.finals[tid] = False
            self.trace.log(self.kernel.now, tid, self.site, EV_SUBTXN_FINAL,
                           "aborted:crash")
        self.subtxns = {}
        self._locks = {}

    def restart(self) -> None:
        """Rebuild from durable state: PREPARED come back holding their locks."""
        self._locks = {}
        self.subtxns = {}
        for tid, prec in self.prepared_store.items():
            sub = _Subtxn(tid, state=SubtxnState.PREPARED, held=dict(prec.held),
                          writes=list(prec.writes), first_lock_at=prec.first_lock_at,
                          local_exec_us=prec.local_exec_us)
            self.subtxns[tid] = sub
            for key, mode in prec.held.items():
                self._locks.setdefault(key, _LockState()).holders[tid] = mode

    def abort_unprepared(self, reason: str) -> None:
        """Abort every subtransaction that has not voted yet.

        Used when the connection to the middleware is lost: without a vote
        the middleware cannot have decided commit, so local abort is safe.
        """
        doomed = [s for s in self.subtxns.values() if s.state != SubtxnState.PREPARED]
        for sub in doomed:
            if sub.waiting is not None:
                sub.waiting.cancelled = True    # bulk: queues drain via releases below
                sub.waiting = None
            sub.stmt = None
        for sub in doomed:
            if sub.tid in self.subtxns:      # may already be gone via cascade
                self._abort(sub, reason)
