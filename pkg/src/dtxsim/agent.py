"""Site agent: the middleware's representative co-located with a data source.

The agent forwards statements into the engine and, when enabled, runs the
prepare handshake itself right after a subtransaction's last statement, so
the vote travels back in the same wide-area round trip as the final result.
Only that end+prepare exchange pays LAN hops; plain forwarding between the
co-located agent and engine is free.

On a local failure the agent can also fan rollback notices straight to the
other participants' agents, sparing the detour through the middleware.  A
notice for a not-yet-seen transaction leaves a tombstone so the statement
aborts on arrival instead of executing against a dead transaction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .config import FeatureConfig, ProtocolConfig
from .datasource import DataSourceEngine, ProtocolError, SubtxnState, SubtxnTiming
from .kernel import Kernel, ms
from .net import Msg, Network, PROBE, PROBE_REPLY
from .trace import EV_PEER_NOTICE, EV_VOTE, TraceRecorder

# middleware -> site
STATEMENT = "statement"
PREPARE_CMD = "prepare_cmd"
COMMIT_CMD = "commit_cmd"
ROLLBACK_CMD = "rollback_cmd"
RECOVERY_QUERY = "recovery_query"
# site -> middleware; the five agent report kinds plus acks
IDLE = "IDLE"
PREPARED = "PREPARED"
FAILURE = "FAILURE"
ROLLBACK_ONLY = "ROLLBACK_ONLY"
ROLLBACKED = "ROLLBACKED"
STMT_RESULT = "stmt_result"
COMMIT_ACK = "commit_ack"
RECOVERY_REPORT = "recovery_report"
RESTART_HELLO = "restart_hello"
# site -> site
PEER_ROLLBACK = "peer_rollback"

DM = "dm"


@dataclass
class _AgentTxn:
    peers: list[str] = field(default_factory=list)
    last_done: bool = False       # all local statements executed


def _timing_data(timing: Optional[SubtxnTiming], exec_ok: bool) -> dict:
    if timing is None:
        return {"first_lock_at": None, "last_unlock_at": None,
                "local_exec_us": 0, "exec_ok": exec_ok}
    return {"first_lock_at": timing.first_lock_at,
            "last_unlock_at": timing.last_unlock_at,
            "local_exec_us": timing.local_exec_us, "exec_ok": exec_ok}


class SiteAgent:
    def __init__(self, kernel: Kernel, net: Network, site: str,
                 engine: DataSourceEngine, features: FeatureConfig,
                 proto: ProtocolConfig, trace: TraceRecorder):
        self.kernel = kernel
        self.net = net
        self.site = site
        self.engine = engine
        self.features = features
        self.trace = trace
        self.lan_us = ms(proto.lan_hop_ms)
        self._txns: dict[int, _AgentTxn] = {}
        self._tombstones: set[int] = set()
        self._epoch = 0

    # ------------------------------------------------------------- messaging

    def on_message(self, msg: Msg) -> None:
        handler = {
            STATEMENT: self._on_statement,
            PREPARE_CMD: self._on_prepare_cmd,
            COMMIT_CMD: self._on_commit_cmd,
            ROLLBACK_CMD: self._on_rollback_cmd,
            PEER_ROLLBACK: self._on_peer_rollback,
            RECOVERY_QUERY: self._on_recovery_query,
            PROBE: self._on_probe,
        }.get(msg.kind)
        if handler is None:
            raise ValueError(f"{self.site}: unexpected message kind '{msg.kind}'")
        handler(msg)

    def _reply(self, kind: str, tid: Optional[int], data: dict) -> None:
        self.net.send(Msg(kind, self.site, DM, tid=tid, data=data))

    def _on_probe(self, msg: Msg) -> None:
        self.net.send(Msg(PROBE_REPLY, self.site, msg.src, data=dict(msg.data)))

    # ------------------------------------------------------------ statements

    def _on_statement(self, msg: Msg) -> None:
        tid = msg.tid
        rnd = msg.data["round"]
        if tid in self._tombstones:
            # peer abort got here first; never execute
            self._reply(ROLLBACKED, tid, {"phase": "exec", "round": rnd,
                                          **_timing_data(None, False)})
            return
        st = self._txns.get(tid)
        if st is None:
            # a follow-up statement for an unknown transaction means local
            # state was lost (crash); only first contact may open one
            first = msg.data.get("first", rnd == 0)
            if not first or self.engine.state_of(tid) is not None:
                self._reply(ROLLBACK_ONLY, tid,
                            {"phase": "exec", "round": rnd, "reason": "stale"})
                return
            self.engine.begin(tid)
            st = _AgentTxn(peers=list(msg.data.get("peers", [])))
            self._txns[tid] = st
        is_last = msg.data["is_last"]
        self.engine.exec_statement(
            tid, msg.data["ops"],
            lambda ok, reason, t=tid, r=rnd, last=is_last: self._stmt_done(
                t, r, last, ok, reason))

    def _stmt_done(self, tid: int, rnd: int, is_last: bool, ok: bool, reason: str) -> None:
        st = self._txns.get(tid)
        if st is None:
            return
        if not ok:
            # lock timeout already aborted locally; anything else aborts now
            self._fail(tid, ROLLBACK_ONLY, "exec", rnd, reason or "exec_failure")
            return
        if not is_last:
            self._reply(STMT_RESULT, tid, {"round": rnd, "ok": True,
                                           "local_exec_us": self._lel(tid)})
            return
        st.last_done = True
        if not self.features.decentralized_prepare:
            self._reply(STMT_RESULT, tid, {"round": rnd, "ok": True,
                                           "local_exec_us": self._lel(tid)})
            return
        # fast path: reach back into the engine after one LAN hop
        epoch = self._epoch
        self.kernel.schedule_in(self.lan_us, self.site, "end_prepare",
                                lambda: self._do_end_prepare(tid, rnd, epoch))

    def _lel(self, tid: int) -> int:
        sub = self.engine.subtxns.get(tid)
        return sub.local_exec_us if sub is not None else 0

    def _do_end_prepare(self, tid: int, rnd: int, epoch: int) -> None:
        if epoch != self._epoch or tid not in self._txns:
            return
        st = self._txns[tid]
        if not self.engine.end(tid):
            outcome = (ROLLBACK_ONLY, "end_failure")
        elif not st.peers:
            outcome = (IDLE, "")                 # single-participant path
        elif self.engine.prepare(tid):
            outcome = (PREPARED, "")
        else:
            outcome = (FAILURE, "prepare_no")
        lel = self._lel(tid)
        self.kernel.schedule_in(self.lan_us, self.site, "prepare_reply",
                                lambda: self._end_prepare_reply(tid, rnd, outcome, lel, epoch))

    def _end_prepare_reply(self, tid: int, rnd: int, outcome: tuple, lel: int,
                           epoch: int) -> None:
        if epoch != self._epoch:
            return
        kind, reason = outcome
        if kind == IDLE:
            self.trace.log(self.kernel.now, tid, self.site, EV_VOTE, "idle")
            self._reply(IDLE, tid, {"round": rnd, "local_exec_us": lel})
        elif kind == PREPARED:
            self.trace.log(self.kernel.now, tid, self.site, EV_VOTE, "yes")
            self._reply(PREPARED, tid, {"round": rnd, "local_exec_us": lel})
        else:
            if kind == FAILURE:
                self.trace.log(self.kernel.now, tid, self.site, EV_VOTE, "no")
            self._fail(tid, kind, "exec", rnd, reason)

    # ---------------------------------------------------------- prepare wave

    def _on_prepare_cmd(self, msg: Msg) -> None:
        tid = msg.tid
        ok = self.engine.end(tid) and self.engine.prepare(tid)
        self.trace.log(self.kernel.now, tid, self.site, EV_VOTE, "yes" if ok else "no")
        if ok:
            self._reply(PREPARED, tid, {"round": None, "local_exec_us": self._lel(tid)})
        else:
            self._fail(tid, FAILURE, "prepare", None, "prepare_no")

    # -------------------------------------------------------------- failures

    def _fail(self, tid: int, kind: str, phase: str, rnd, reason: str) -> None:
        """Report a local failure upward and, if configured, spread the abort
        to peers directly instead of waiting for the middleware."""
        st = self._txns.get(tid)
        spread = self.features.early_abort and st is not None
        self._reply(kind, tid, {"phase": phase, "round": rnd, "reason": reason,
                                "peer_spread": spread})
        if spread:
            for peer in st.peers:
                self.net.send(Msg(PEER_ROLLBACK, self.site, peer, tid=tid))
            timing = self.engine.rollback(tid)
            exec_ok = st.last_done
            self._txns.pop(tid, None)
            self._reply(ROLLBACKED, tid, {"phase": phase, "round": None,
                                          **_timing_data(timing, exec_ok)})

    def _on_peer_rollback(self, msg: Msg) -> None:
        tid = msg.tid
        self.trace.log(self.kernel.now, tid, self.site, EV_PEER_NOTICE,
                       f"from={msg.src}")
        state = self.engine.state_of(tid)
        if state is None:
            self._tombstones.add(tid)
            self._reply(ROLLBACKED, tid, {"phase": "peer", "round": None,
                                          **_timing_data(None, False)})
            return
        st = self._txns.get(tid)
        timing = self.engine.rollback(tid)   # no-op if already aborted
        exec_ok = st.last_done if st else False
        self._txns.pop(tid, None)
        self._reply(ROLLBACKED, tid, {"phase": "peer", "round": None,
                                      **_timing_data(timing, exec_ok)})

    # -------------------------------------------------------------- decision

    def _on_commit_cmd(self, msg: Msg) -> None:
        tid = msg.tid
        st = self._txns.get(tid)
        one_phase = bool(msg.data.get("one_phase", False))
        try:
            if one_phase and self.engine.state_of(tid) == SubtxnState.ACTIVE:
                self.engine.end(tid)
            timing = self.engine.commit(tid, one_phase=one_phase)
        except ProtocolError:
            if not one_phase:
                raise
            # the unlogged commit raced a crash here; the subtransaction is
            # gone (or crash-aborted), so refuse and let the middleware abort
            self._txns.pop(tid, None)
            self._reply(ROLLBACKED, tid, {"phase": "one_phase", "round": None,
                                          **_timing_data(None, False)})
            return
        exec_ok = st.last_done if st else True
        self._txns.pop(tid, None)
        self._reply(COMMIT_ACK, tid, _timing_data(timing, exec_ok))

    def _on_rollback_cmd(self, msg: Msg) -> None:
        tid = msg.tid
        st = self._txns.get(tid)
        if self.engine.state_of(tid) is None:
            self._tombstones.add(tid)
        timing = self.engine.rollback(tid)
        exec_ok = st.last_done if st else False
        self._txns.pop(tid, None)
        self._reply(ROLLBACKED, tid, {"phase": "cmd", "round": None,
                                      **_timing_data(timing, exec_ok)})

    # -------------------------------------------------------------- recovery

    def _on_recovery_query(self, msg: Msg) -> None:
        states = {}
        for tid in msg.data.get("tids", []):
            s = self.engine.state_of(tid)
            states[tid] = s.value if s is not None else "unknown"
        self._reply(RECOVERY_REPORT, None, {
            "qid": msg.data["qid"],
            "prepared": sorted(self.engine.prepared_tids()),
            "states": states,
        })

    # ---------------------------------------------------------------- faults

    def crash(self) -> None:
        self._epoch += 1
        self._txns = {}
        self._tombstones = set()
        self.engine.crash()

    def restart(self) -> None:
        self.engine.restart()
        self.net.send(Msg(RESTART_HELLO, self.site, DM))

    def on_dm_disconnect(self) -> None:
        """Middleware connection lost: abort everything that has not voted."""
        self.engine.abort_unprepared("dm_disconnect")
        self._txns = {tid: st for tid, st in self._txns.items()
                      if self.engine.state_of(tid) == SubtxnState.PREPARED}
