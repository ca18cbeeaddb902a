"""Middleware transaction manager: dispatch, atomic commitment, recovery.

One transaction is a list of rounds; a round is a batch of statements, each
bound to one data source, and each participant's final statement carries an
is_last mark.  The manager dispatches rounds (optionally postponing per-site
sends per the scheduler's plan), collects results and votes, flushes a
decision record, then drives commit or rollback to every participant.

The commit log and the client's own record of outstanding transactions are
the only things that survive a middleware crash.  Recovery queries every
data source for surviving prepared subtransactions, finishes transactions
with a logged decision, aborts the rest, and answers the clients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import agent as m
from .config import FeatureConfig, ProtocolConfig
from .datasource import ProtocolError
from .kernel import Kernel, ms
from .net import Msg, Network, PROBE_REPLY, RttMonitor
from .scheduler import ADMIT, Scheduler
from .trace import (EV_ADMIT_DELAY, EV_CRASH, EV_DISPATCH, EV_FLUSH, EV_OUTCOME,
                    EV_RECOVERY, EV_RESTART, EV_SUBMIT, NO_TID, TraceRecorder)

DM = "dm"

CENTRALIZED = "centralized"
DISTRIBUTED = "distributed"

ABORT_ADMISSION = "admission"
ABORT_TIMEOUT = "lock_timeout"
ABORT_FAILURE = "failure"
ABORT_CLIENT = "client"


@dataclass
class Statement:
    site: str
    ops: list                      # [(op, key), ...]
    is_last: bool = False


@dataclass
class Transaction:
    tid: int
    rounds: list                   # [[Statement, ...], ...]
    client_abort: bool = False

    @property
    def participants(self) -> list[str]:
        seen: dict[str, None] = {}
        for rnd in self.rounds:
            for stmt in rnd:
                seen.setdefault(stmt.site, None)
        return list(seen)

    @property
    def kind(self) -> str:
        return DISTRIBUTED if len(self.participants) > 1 else CENTRALIZED

    def site_keys(self, round_idx: Optional[int] = None) -> dict:
        rounds = self.rounds if round_idx is None else [self.rounds[round_idx]]
        out: dict[str, list] = {}
        for rnd in rounds:
            for stmt in rnd:
                out.setdefault(stmt.site, []).extend(k for _, k in stmt.ops)
        return out

    def all_keys(self) -> list:
        keys: list = []
        for rnd in self.rounds:
            for stmt in rnd:
                keys.extend(k for _, k in stmt.ops)
        return keys

    def validate(self) -> None:
        if not self.rounds or not any(self.rounds):
            raise ValueError(f"txn {self.tid}: no statements")
        last_marks: dict[str, int] = {}
        for rnd in self.rounds:
            for stmt in rnd:
                if stmt.is_last:
                    last_marks[stmt.site] = last_marks.get(stmt.site, 0) + 1
        for site in self.participants:
            if last_marks.get(site, 0) != 1:
                raise ValueError(
                    f"txn {self.tid}: participant {site} needs exactly one "
                    f"last-marked statement, has {last_marks.get(site, 0)}")


class PState(Enum):
    EXECUTING = "executing"
    IDLE = "idle"
    PREPARED = "prepared"
    FAILURE = "failure"
    ROLLBACK_ONLY = "rollback_only"
    ROLLBACKED = "rollbacked"
    COMMITTED = "committed"

READY = (PState.IDLE, PState.PREPARED)


@dataclass(frozen=True)
class CommitLogRecord:
    tid: int
    decision: str                  # commit | abort
    logged_at: int
    participants: tuple


class CommitLog:
    """Append-once decision log; survives middleware crashes."""

    def __init__(self):
        self._recs: dict[int, CommitLogRecord] = {}

    def append(self, rec: CommitLogRecord) -> None:
        if rec.tid in self._recs:
            raise ProtocolError(f"duplicate commit-log record for txn {rec.tid}")
        self._recs[rec.tid] = rec

    def get(self, tid: int) -> Optional[CommitLogRecord]:
        return self._recs.get(tid)

    def __len__(self) -> int:
        return len(self._recs)


@dataclass
class _TxnCtx:
    txn: Transaction
    submitted_at: int
    retry_count: int = 0
    round_idx: int = 0
    pstate: dict = field(default_factory=dict)       # site -> PState
    round_pending: set = field(default_factory=set)  # sites owing a result
    dispatched: set = field(default_factory=set)     # sites sent >= 1 statement
    decided: Optional[bool] = None
    flushed: bool = False
    abort_class: str = ""
    acked: set = field(default_factory=set)
    timings: dict = field(default_factory=dict)      # site -> timing data dict
    wan_rts: int = 0
    last_progress: int = 0
    watchdog_gen: int = 0
    peer_spread: bool = False


class Coordinator:
    def __init__(self, kernel: Kernel, net: Network, scheduler: Scheduler,
                 features: FeatureConfig, proto: ProtocolConfig,
                 sites: list[str], trace: TraceRecorder,
                 client_port, lock_timeout_us: int):
        self.kernel = kernel
        self.net = net
        self.scheduler = scheduler
        self.features = features
        self.proto = proto
        self.sites = list(sites)
        self.trace = trace
        self.client_port = client_port
        self.lock_timeout_us = lock_timeout_us
        self.flush_us = ms(proto.log_flush_ms)
        self.retry_us = ms(proto.recovery_retry_ms)
        self.log = CommitLog()                 # durable
        self._txns: dict[int, _TxnCtx] = {}    # volatile
        self._epoch = 0
        self._down = False
        self._qid = 0
        self._recovery_pending: set[str] = set()
        self._full_recovery = False
        self._recovered_states: dict[int, dict[str, str]] = {}
        self._site_qid: dict[str, int] = {}
        self.monitor = RttMonitor(kernel, net, DM, self.sites,
                                  interval_us=ms(proto.probe_interval_ms),
                                  alpha=proto.alpha_net)
        self.flush_hook = None                 # test/fault hook, may crash us
        self.committed = 0
        self.aborted = 0

    @property
    def is_down(self) -> bool:
        return self._down

    # --------------------------------------------------------------- intake

    def submit(self, txn: Transaction) -> None:
        if self._down:
            raise ProtocolError("middleware is down")
        txn.validate()
        ctx = _TxnCtx(txn=txn, submitted_at=self.kernel.now,
                      last_progress=self.kernel.now)
        for site in txn.participants:
            ctx.pstate[site] = PState.EXECUTING
        self._txns[txn.tid] = ctx
        self.trace.log(self.kernel.now, txn.tid, DM, EV_SUBMIT, txn.kind)
        self._try_admit(txn.tid)

    def _try_admit(self, tid: int) -> None:
        ctx = self._txns.get(tid)
        if ctx is None or ctx.decided is not None:
            return
        txn = ctx.txn
        verdict, backoff = self.scheduler.evaluate_admission(
            txn.all_keys(), txn.site_keys())
        if verdict == ADMIT:
            self.scheduler.on_admitted(tid, txn.all_keys())
            self._arm_watchdog(ctx)
            self._dispatch_round(ctx)
            return
        ctx.retry_count += 1
        if ctx.retry_count >= self.scheduler.cfg.retry_limit:
            self._resolve(ctx, committed=False, abort_class=ABORT_ADMISSION)
            return
        self.trace.log(self.kernel.now, tid, DM, EV_ADMIT_DELAY,
                       f"retry={ctx.retry_count}")
        epoch = self._epoch
        self.kernel.schedule_in(backoff, DM, "admission_retry",
                                lambda: epoch == self._epoch and self._try_admit(tid))

    # ------------------------------------------------------------- dispatch

    def _dispatch_round(self, ctx: _TxnCtx) -> None:
        txn = ctx.txn
        stmts = txn.rounds[ctx.round_idx]
        plan = self.scheduler.plan_round(txn.site_keys(ctx.round_idx))
        ctx.round_pending = {stmt.site for stmt in stmts}
        ctx.wan_rts += 1
        epoch = self._epoch
        for stmt in stmts:
            delay = plan.get(stmt.site, 0)
            if delay <= 0:
                self._send_statement(ctx, stmt)
            else:
                self.kernel.schedule_in(
                    delay, DM, "postponed_dispatch",
                    lambda s=stmt, t=txn.tid: self._send_postponed(t, s, epoch))

    def _send_postponed(self, tid: int, stmt: Statement, epoch: int) -> None:
        if epoch != self._epoch:
            return
        ctx = self._txns.get(tid)
        if ctx is None or ctx.decided is not None:
            return
        self._send_statement(ctx, stmt)

    def _send_statement(self, ctx: _TxnCtx, stmt: Statement) -> None:
        txn = ctx.txn
        peers = [s for s in txn.participants if s != stmt.site]
        self.trace.log(self.kernel.now, txn.tid, stmt.site, EV_DISPATCH,
                       f"round={ctx.round_idx}")
        first = stmt.site not in ctx.dispatched
        ctx.dispatched.add(stmt.site)
        self.net.send(Msg(m.STATEMENT, DM, stmt.site, tid=txn.tid, data={
            "round": ctx.round_idx, "ops": stmt.ops,
            "is_last": stmt.is_last, "peers": peers, "first": first,
        }))

    # ------------------------------------------------------------- messages

    def on_message(self, msg: Msg) -> None:
        if self._down:
            return
        if msg.kind == PROBE_REPLY:
            self.monitor.on_reply(msg)
            return
        if msg.kind == m.RESTART_HELLO:
            self._on_site_hello(msg.src)
            return
        if msg.kind == m.RECOVERY_REPORT:
            self._on_recovery_report(msg)
            return
        ctx = self._txns.get(msg.tid)
        if ctx is None:
            return                                 # stale: pre-crash or resolved
        ctx.last_progress = self.kernel.now
        if msg.kind == m.STMT_RESULT:
            self._note_round_result(ctx, msg.src, msg.data["round"])
        elif msg.kind == m.IDLE:
            ctx.pstate[msg.src] = PState.IDLE
            self._store_exec(ctx, msg.src, msg.data)
            self._note_round_result(ctx, msg.src, msg.data["round"])
        elif msg.kind == m.PREPARED:
            ctx.pstate[msg.src] = PState.PREPARED
            self._store_exec(ctx, msg.src, msg.data)
            if msg.data.get("round") is not None:
                self._note_round_result(ctx, msg.src, msg.data["round"])
            self._maybe_commit(ctx)
        elif msg.kind in (m.FAILURE, m.ROLLBACK_ONLY):
            ctx.pstate[msg.src] = (PState.FAILURE if msg.kind == m.FAILURE
                                   else PState.ROLLBACK_ONLY)
            if msg.data.get("peer_spread"):
                ctx.peer_spread = True
            reason = msg.data.get("reason", "")
            cls = ABORT_TIMEOUT if reason == "lock_timeout" else ABORT_FAILURE
            if ctx.decided is None:
                self._decide(ctx, commit=False, abort_class=cls)
            elif ctx.decided is False and ctx.abort_class == ABORT_FAILURE \
                    and cls == ABORT_TIMEOUT:
                ctx.abort_class = cls              # origin's report names the cause
        elif msg.kind == m.ROLLBACKED:
            ctx.pstate[msg.src] = PState.ROLLBACKED
            self._store_exec(ctx, msg.src, msg.data)
            ctx.acked.add(msg.src)
            if ctx.decided is None:
                self._decide(ctx, commit=False, abort_class=ABORT_FAILURE)
            elif ctx.decided is False:
                self._maybe_finish_abort(ctx)
            elif len(ctx.txn.participants) == 1:
                # one-phase commit refused: the site lost the subtransaction
                # (crash before the command arrived), so the outcome is abort
                ctx.decided = False
                ctx.abort_class = ABORT_FAILURE
                self._maybe_finish_abort(ctx)
            else:
                raise ProtocolError(
                    f"dm: rollback ack for committed txn {ctx.txn.tid}")
        elif msg.kind == m.COMMIT_ACK:
            ctx.pstate[msg.src] = PState.COMMITTED
            self._store_exec(ctx, msg.src, msg.data)
            ctx.acked.add(msg.src)
            self._maybe_finish_commit(ctx)
        else:
            raise ValueError(f"dm: unexpected message kind '{msg.kind}'")

    def _store_exec(self, ctx: _TxnCtx, site: str, data: dict) -> None:
        if "local_exec_us" in data:
            entry = ctx.timings.setdefault(site, {})
            entry["local_exec_us"] = data["local_exec_us"]
            if "exec_ok" in data:
                entry["exec_ok"] = data["exec_ok"]

    def _note_round_result(self, ctx: _TxnCtx, site: str, rnd) -> None:
        if ctx.decided is not None or rnd != ctx.round_idx:
            return
        ctx.round_pending.discard(site)
        if ctx.round_pending:
            return
        ctx.round_idx += 1
        if ctx.round_idx < len(ctx.txn.rounds):
            self._dispatch_round(ctx)
        else:
            self._execution_complete(ctx)

    def _execution_complete(self, ctx: _TxnCtx) -> None:
        txn = ctx.txn
        if txn.client_abort:
            self._decide(ctx, commit=False, abort_class=ABORT_CLIENT)
            return
        if len(txn.participants) == 1:
            self._decide(ctx, commit=True)
            return
        if self.features.decentralized_prepare:
            self._maybe_commit(ctx)
            return
        # explicit vote collection round trip
        ctx.wan_rts += 1
        for site in txn.participants:
            self.net.send(Msg(m.PREPARE_CMD, DM, site, tid=txn.tid))

    def _maybe_commit(self, ctx: _TxnCtx) -> None:
        if ctx.decided is not None:
            return
        if ctx.round_idx < len(ctx.txn.rounds) or ctx.round_pending:
            return
        if all(ctx.pstate[s] in READY for s in ctx.txn.participants):
            self._decide(ctx, commit=True)

    # -------------------------------------------------------------- decision

    def _decide(self, ctx: _TxnCtx, commit: bool, abort_class: str = "") -> None:
        if ctx.decided is not None:
            return
        ctx.decided = commit
        ctx.abort_class = abort_class
        if len(ctx.txn.participants) == 1:
            # one-phase: no decision record; the lone data source owns the
            # outcome, and its ack (or refusal) settles the transaction
            ctx.flushed = True
            self._dispatch_decision(ctx)
            return
        epoch = self._epoch
        self.kernel.schedule_in(self.flush_us, DM, "log_flush",
                                lambda: self._flush_done(ctx.txn.tid, epoch))

    def _flush_done(self, tid: int, epoch: int) -> None:
        if epoch != self._epoch:
            return                                  # decision died with the crash
        ctx = self._txns.get(tid)
        if ctx is None:
            return
        decision = "commit" if ctx.decided else "abort"
        self.log.append(CommitLogRecord(tid, decision, self.kernel.now,
                                        tuple(ctx.txn.participants)))
        self.trace.log(self.kernel.now, tid, DM, EV_FLUSH, decision)
        ctx.flushed = True
        if self.flush_hook is not None:
            hook, self.flush_hook = self.flush_hook, None
            hook()
            if self._down:
                return                              # crashed between flush and dispatch
        self._dispatch_decision(ctx)

    def _dispatch_decision(self, ctx: _TxnCtx) -> None:
        txn = ctx.txn
        if ctx.decided:
            ctx.wan_rts += 1
            one_phase = len(txn.participants) == 1
            for site in txn.participants:
                self.net.send(Msg(m.COMMIT_CMD, DM, site, tid=txn.tid,
                                  data={"one_phase": one_phase}))
            return
        targets = [s for s in txn.participants
                   if ctx.pstate[s] != PState.ROLLBACKED and s in ctx.dispatched]
        undispatched = [s for s in txn.participants if s not in ctx.dispatched]
        for site in undispatched:
            # nothing ever reached this site; it has no state to undo
            ctx.pstate[site] = PState.ROLLBACKED
            ctx.acked.add(site)
        if ctx.peer_spread:
            # the failing agent already spread the abort; just collect acks
            self._maybe_finish_abort(ctx)
            return
        if targets:
            ctx.wan_rts += 1
            for site in targets:
                self.net.send(Msg(m.ROLLBACK_CMD, DM, site, tid=txn.tid))
        self._maybe_finish_abort(ctx)

    def _settled_abort(self, ctx: _TxnCtx, site: str) -> bool:
        # a crashed participant is settled: the logged decision will reach it
        # on restart (hello push / prepared-orphan rollback)
        return ctx.pstate[site] == PState.ROLLBACKED or not self.net.is_up(site)

    def _maybe_finish_abort(self, ctx: _TxnCtx) -> None:
        if ctx.decided is not False or not ctx.flushed:
            return
        if all(self._settled_abort(ctx, s) for s in ctx.txn.participants):
            self._resolve(ctx, committed=False, abort_class=ctx.abort_class)

    def _maybe_finish_commit(self, ctx: _TxnCtx) -> None:
        if ctx.decided is not True or not ctx.flushed:
            return
        parts = ctx.txn.participants
        if len(parts) == 1:
            # one-phase: nothing durable backs the decision, so a crashed
            # site leaves the outcome open until it reports back
            if all(s in ctx.acked for s in parts):
                self._resolve(ctx, committed=True)
            return
        if all(s in ctx.acked or not self.net.is_up(s) for s in parts):
            self._resolve(ctx, committed=True)

    # ------------------------------------------------------------ resolution

    def _resolve(self, ctx: _TxnCtx, committed: bool, abort_class: str = "") -> None:
        txn = ctx.txn
        cls = "-" if committed else (abort_class or ctx.abort_class or ABORT_FAILURE)
        self.trace.log(self.kernel.now, txn.tid, DM, EV_OUTCOME,
                       f"{'committed' if committed else 'aborted'}:{cls}:"
                       f"{txn.kind}:wan={ctx.wan_rts}")
        stats = []
        for site, keys in txn.site_keys().items():
            t = ctx.timings.get(site)
            if t is not None:
                stats.append((keys, t.get("local_exec_us", 0),
                              t.get("exec_ok", False)))
        self.scheduler.record_completion(txn.tid, txn.all_keys(), stats, committed)
        if committed:
            self.committed += 1
        else:
            self.aborted += 1
        del self._txns[txn.tid]
        self.client_port.deliver(txn.tid, committed, cls)

    # -------------------------------------------------------------- watchdog

    def _watchdog_us(self, ctx: _TxnCtx) -> int:
        worst_rtt = max(self.monitor.estimated_rtt_us(s)
                        for s in ctx.txn.participants)
        return int(3 * worst_rtt) + self.lock_timeout_us

    def _arm_watchdog(self, ctx: _TxnCtx) -> None:
        ctx.watchdog_gen += 1
        gen = ctx.watchdog_gen
        epoch = self._epoch
        tid = ctx.txn.tid
        self.kernel.schedule_in(self._watchdog_us(ctx) + 1000, DM, "txn_watchdog",
                                lambda: self._watchdog_fire(tid, gen, epoch))

    def _watchdog_fire(self, tid: int, gen: int, epoch: int) -> None:
        if epoch != self._epoch:
            return
        ctx = self._txns.get(tid)
        if ctx is None or gen != ctx.watchdog_gen:
            return
        quiet_for = self.kernel.now - ctx.last_progress
        if quiet_for < self._watchdog_us(ctx):
            self._arm_watchdog(ctx)
            return
        if ctx.decided is None:
            # a participant went silent; give up on the transaction
            self._decide(ctx, commit=False, abort_class=ABORT_FAILURE)
        elif ctx.flushed:
            # decision stands; nag participants that have not confirmed
            if ctx.decided:
                for site in ctx.txn.participants:
                    if site not in ctx.acked:
                        self.net.send(Msg(m.COMMIT_CMD, DM, site, tid=tid, data={
                            "one_phase": len(ctx.txn.participants) == 1}))
            else:
                for site in ctx.txn.participants:
                    if ctx.pstate[site] != PState.ROLLBACKED and site in ctx.dispatched:
                        self.net.send(Msg(m.ROLLBACK_CMD, DM, site, tid=tid))
            self._maybe_finish_commit(ctx)
            self._maybe_finish_abort(ctx)
            if tid not in self._txns:
                return
        self._arm_watchdog(ctx)

    # ---------------------------------------------------------------- faults

    def crash(self) -> None:
        self._epoch += 1
        self._down = True
        self._txns = {}
        self._recovery_pending = set()
        self._full_recovery = False
        self._recovered_states = {}
        self.scheduler.reset()
        self.monitor.reset()
        self.trace.log(self.kernel.now, NO_TID, DM, EV_CRASH, "")

    def restart(self) -> None:
        self._epoch += 1
        self._down = False
        self.trace.log(self.kernel.now, NO_TID, DM, EV_RESTART, "")
        self._recovery_pending = set(self.sites)
        self._full_recovery = True
        self.trace.log(self.kernel.now, NO_TID, DM, EV_RECOVERY, "query_all")
        for site in self.sites:
            self._send_recovery_query(site)

    def _send_recovery_query(self, site: str) -> None:
        self._qid += 1
        qid = self._qid
        self._site_qid[site] = qid
        tids = {tid for tid, ctx in self._txns.items()
                if site in ctx.dispatched and ctx.decided is None}
        if self._full_recovery:
            # one-phase outcomes live only at the data source; ask about every
            # open client transaction this site participates in
            for tid, txn in self.client_port.outstanding().items():
                if site in txn.participants:
                    tids.add(tid)
        self.net.send(Msg(m.RECOVERY_QUERY, DM, site,
                          data={"qid": qid, "tids": sorted(tids)}))
        epoch = self._epoch
        self.kernel.schedule_in(self.retry_us, DM, "recovery_retry",
                                lambda: self._recovery_retry(site, qid, epoch))

    def _recovery_retry(self, site: str, qid: int, epoch: int) -> None:
        if epoch != self._epoch or self._site_qid.get(site) != qid:
            return
        if site in self._recovery_pending:
            self._send_recovery_query(site)

    def _on_site_hello(self, site: str) -> None:
        self.trace.log(self.kernel.now, NO_TID, site, EV_RECOVERY, "hello")
        # push decided-but-unconfirmed outcomes at the returning site
        for tid, ctx in list(self._txns.items()):
            if ctx.decided is None or not ctx.flushed or site not in ctx.txn.participants:
                continue
            if ctx.decided and site not in ctx.acked:
                self.net.send(Msg(m.COMMIT_CMD, DM, site, tid=tid, data={
                    "one_phase": len(ctx.txn.participants) == 1}))
            elif not ctx.decided and ctx.pstate[site] != PState.ROLLBACKED \
                    and site in ctx.dispatched:
                self.net.send(Msg(m.ROLLBACK_CMD, DM, site, tid=tid))
        self._recovery_pending.discard(site)   # hello supersedes a pending query
        self._send_recovery_query(site)
        self._recovery_pending.add(site)

    def _on_recovery_report(self, msg: Msg) -> None:
        site = msg.src
        if self._site_qid.get(site) != msg.data["qid"]:
            return
        was_pending = site in self._recovery_pending
        self._recovery_pending.discard(site)
        for tid in msg.data["prepared"]:
            rec = self.log.get(tid)
            ctx = self._txns.get(tid)
            if rec is not None:
                if rec.decision == "commit":
                    self.net.send(Msg(m.COMMIT_CMD, DM, site, tid=tid, data={
                        "one_phase": len(rec.participants) == 1}))
                else:
                    self.net.send(Msg(m.ROLLBACK_CMD, DM, site, tid=tid))
            elif ctx is not None and ctx.decided is None:
                self._mark_recovered_prepared(ctx, site)
            else:
                # prepared orphan without a logged decision: abort is safe
                self.net.send(Msg(m.ROLLBACK_CMD, DM, site, tid=tid))
        for tid_key, state in msg.data["states"].items():
            tid = int(tid_key)
            if self._full_recovery:
                self._recovered_states.setdefault(tid, {})[site] = state
            ctx = self._txns.get(tid)
            if ctx is None or ctx.decided is not None:
                continue
            if state == "prepared":
                self._mark_recovered_prepared(ctx, site)
            elif state in ("unknown", "aborted"):
                ctx.pstate[site] = PState.FAILURE
                self._decide(ctx, commit=False, abort_class=ABORT_FAILURE)
        if self._full_recovery and was_pending and not self._recovery_pending:
            self._finish_recovery()

    def _mark_recovered_prepared(self, ctx: _TxnCtx, site: str) -> None:
        # prepared implies the site finished every statement it was sent,
        # so its replies lost in the crash may be synthesized here
        ctx.pstate[site] = PState.PREPARED
        ctx.last_progress = self.kernel.now
        if ctx.round_idx < len(ctx.txn.rounds):
            self._note_round_result(ctx, site, ctx.round_idx)
        self._maybe_commit(ctx)

    def _finish_recovery(self) -> None:
        self._full_recovery = False
        states, self._recovered_states = self._recovered_states, {}
        self.trace.log(self.kernel.now, NO_TID, DM, EV_RECOVERY, "complete")
        for tid, txn in list(self.client_port.outstanding().items()):
            if tid in self._txns:
                continue                       # submitted after restart; in flight
            rec = self.log.get(tid)
            committed = (rec is not None and rec.decision == "commit") or any(
                st == "committed" for st in states.get(tid, {}).values())
            cls = "-" if committed else ABORT_FAILURE
            self.trace.log(self.kernel.now, tid, DM, EV_OUTCOME,
                           f"{'committed' if committed else 'aborted'}:{cls}:"
                           f"{txn.kind}:wan=0")
            if committed:
                self.committed += 1
            else:
                self.aborted += 1
            self.client_port.deliver(tid, committed, cls)
