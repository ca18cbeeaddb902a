"""Two-phase-locking engine: grants, queues, timeouts, durability, crashes."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtxsim.config import NodeConfig
from dtxsim.datasource import (DataSourceEngine, LockMode, ProtocolError,
                               SubtxnState)
from dtxsim.kernel import Kernel
from dtxsim.trace import EV_LOCK_GRANT, EV_SUBTXN_FINAL, TraceRecorder

BIG = 60_000_000


def make_engine(service_ms=0.0, timeout_ms=5000.0, seed=1):
    kernel = Kernel(seed=seed)
    trace = TraceRecorder()
    cfg = NodeConfig(service_time_ms=service_ms, lock_wait_timeout_ms=timeout_ms)
    return kernel, trace, DataSourceEngine(kernel, "ds1", cfg, trace)


def collector(results: dict, tid: int):
    return lambda ok, reason: results.setdefault(tid, (ok, reason))


def finals_in(trace, tid):
    return [r.detail for r in trace.records
            if r.tid == tid and r.event == EV_SUBTXN_FINAL]


# ---------------------------------------------------------------- lifecycle

def test_commit_applies_buffered_writes_once():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 10), ("w", 10), ("w", 11)], collector(res, 1))
    kernel.run_until(BIG)
    assert res[1] == (True, "")
    assert eng.records == {}                      # buffered until commit
    assert eng.end(1)
    assert eng.prepare(1)
    timing = eng.commit(1)
    assert eng.records == {10: 2, 11: 1}
    assert eng.state_of(1) == SubtxnState.COMMITTED
    assert timing.first_lock_at == 0 and timing.last_unlock_at == 0
    assert finals_in(trace, 1) == ["committed"]
    # replay after a lost ack: no second apply, no second trace record
    replay = eng.commit(1)
    assert (replay.first_lock_at, replay.last_unlock_at, replay.local_exec_us) \
        == (None, None, 0)
    assert eng.records == {10: 2, 11: 1}
    assert finals_in(trace, 1) == ["committed"]


def test_rollback_discards_writes_and_is_idempotent():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 10)], collector(res, 1))
    kernel.run_until(BIG)
    assert eng.rollback(1) is not None
    assert eng.records == {}
    assert eng.state_of(1) == SubtxnState.ABORTED
    assert finals_in(trace, 1) == ["aborted:rollback"]
    assert eng.rollback(1) is None                # already aborted: fine
    assert eng.rollback(999) is None              # never seen: fine
    with pytest.raises(ProtocolError):
        eng.commit(1)                             # aborted can never commit


def test_rollback_after_commit_raises():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 5)], collector(res, 1))
    kernel.run_until(BIG)
    eng.end(1)
    eng.prepare(1)
    eng.commit(1)
    with pytest.raises(ProtocolError):
        eng.rollback(1)


def test_state_machine_guards():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    with pytest.raises(ProtocolError):
        eng.begin(1)                              # duplicate begin
    assert not eng.prepare(1)                     # must end first
    with pytest.raises(ProtocolError):
        eng.commit(1)                             # ACTIVE cannot commit...
    with pytest.raises(ProtocolError):
        eng.commit(1, one_phase=True)             # ...even collapsed
    eng.exec_statement(1, [("r", 1)], collector(res, 1))
    kernel.run_until(BIG)
    assert eng.end(1)
    assert not eng.end(1)                         # second end is a no-op
    with pytest.raises(ProtocolError):
        eng.commit(1)                             # ENDED still needs a vote
    assert eng.prepare(1)
    assert not eng.prepare(1)
    eng.commit(1)
    with pytest.raises(ProtocolError):
        eng.begin(1)                              # tids are never reused


def test_one_phase_commit_collapses_from_ended():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 3)], collector(res, 1))
    kernel.run_until(BIG)
    eng.end(1)
    eng.commit(1, one_phase=True)
    assert eng.records == {3: 1}
    assert eng.state_of(1) == SubtxnState.COMMITTED


def test_exec_guards():
    kernel, trace, eng = make_engine()
    res = {}
    eng.exec_statement(7, [("r", 1)], collector(res, 7))
    assert res[7] == (False, "not_active")        # no begin
    eng.begin(1)
    eng.exec_statement(1, [("r", 1)], collector(res, 1))
    kernel.run_until(BIG)
    eng.end(1)
    eng.exec_statement(1, [("r", 2)], collector(res, "late"))
    assert res["late"] == (False, "not_active")   # ended: no more statements


def test_overlapping_statements_rejected():
    kernel, trace, eng = make_engine(service_ms=1.0)
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("r", 1)], collector(res, 1))
    with pytest.raises(ProtocolError, match="overlapping"):
        eng.exec_statement(1, [("r", 2)], collector(res, 2))


# ------------------------------------------------------------------- locks

def test_shared_locks_coexist():
    kernel, trace, eng = make_engine()
    res = {}
    for tid in (1, 2):
        eng.begin(tid)
        eng.exec_statement(tid, [("r", 42)], collector(res, tid))
    kernel.run_until(BIG)
    assert res[1] == (True, "") and res[2] == (True, "")
    grants = [r for r in trace.records if r.event == EV_LOCK_GRANT]
    assert {r.detail for r in grants} == {"42:s"}
    assert len(grants) == 2


def test_fifo_queue_never_overtakes_blocked_head():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("r", 9)], collector(res, 1))   # T1 holds S
    eng.begin(2)
    eng.exec_statement(2, [("w", 9)], collector(res, 2))   # T2 queues for X
    eng.begin(3)
    eng.exec_statement(3, [("r", 9)], collector(res, 3))   # T3 queues behind T2
    kernel.run_until(0)
    assert res.get(3) is None                              # S did not overtake X
    eng.rollback(1)
    kernel.run_until(kernel.now)
    assert res[2] == (True, "")                            # X went first
    assert res.get(3) is None                              # still behind the X
    eng.end(2), eng.prepare(2), eng.commit(2)
    kernel.run_until(BIG)
    assert res[3] == (True, "")


def test_sole_holder_lock_upgrade_is_immediate():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("r", 5)], collector(res, 1))
    kernel.run_until(BIG)
    eng.exec_statement(1, [("w", 5)], collector(res, "up"))
    kernel.run_until(BIG)
    assert res["up"] == (True, "")
    grants = [r.detail for r in trace.records
              if r.event == EV_LOCK_GRANT and r.tid == 1]
    assert grants == ["5:s", "5:x"]


def test_shared_holder_waits_for_upgrade_until_alone():
    kernel, trace, eng = make_engine()
    res = {}
    for tid in (1, 2):
        eng.begin(tid)
        eng.exec_statement(tid, [("r", 5)], collector(res, tid))
    kernel.run_until(BIG)
    eng.exec_statement(1, [("w", 5)], collector(res, "up"))
    kernel.run_until(kernel.now)
    assert res.get("up") is None                  # T2 also holds S: must wait
    eng.end(2), eng.prepare(2), eng.commit(2)
    kernel.run_until(BIG)
    assert res["up"] == (True, "")


def test_lock_wait_timeout_aborts_locally():
    kernel, trace, eng = make_engine(timeout_ms=50.0)
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 7)], collector(res, 1))
    eng.begin(2)
    eng.exec_statement(2, [("w", 7)], collector(res, 2))
    kernel.run_until(BIG)
    assert res[2] == (False, "lock_timeout")
    assert eng.state_of(2) == SubtxnState.ABORTED
    assert finals_in(trace, 2) == ["aborted:lock_timeout"]
    # the holder is unaffected
    assert eng.state_of(1) == SubtxnState.ACTIVE


def test_release_cascades_to_all_compatible_waiters():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 3)], collector(res, 1))
    for tid in (2, 3):
        eng.begin(tid)
        eng.exec_statement(tid, [("r", 3)], collector(res, tid))
    kernel.run_until(0)
    assert res.get(2) is None and res.get(3) is None
    eng.rollback(1)
    kernel.run_until(BIG)
    assert res[2] == (True, "") and res[3] == (True, "")


# ------------------------------------------------------------------ timing

def test_service_time_accrues_per_operation():
    kernel, trace, eng = make_engine(service_ms=0.1)
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("r", 1), ("r", 2), ("w", 3)], collector(res, 1))
    kernel.run_until(299)
    assert res.get(1) is None
    kernel.run_until(300)
    assert res[1] == (True, "")
    eng.end(1), eng.prepare(1)
    assert eng.commit(1).local_exec_us == 300


def test_lock_wait_counts_toward_execution_latency():
    kernel, trace, eng = make_engine()
    res = {}
    eng.begin(1)
    eng.exec_statement(1, [("w", 7)], collector(res, 1))
    eng.begin(2)
    eng.exec_statement(2, [("w", 7)], collector(res, 2))
    kernel.schedule(400, "ds1", "unblock", lambda: (
        eng.end(1), eng.prepare(1), eng.commit(1)))
    kernel.run_until(BIG)
    assert res[2] == (True, "")
    eng.end(2), eng.prepare(2)
    assert eng.commit(2).local_exec_us == 400     # spent entirely waiting


# ---------------------------------------------------------- crash / restart

def test_crash_wipes_unprepared_and_keeps_prepared():
    kernel, trace, eng = make_engine()
    res = {}
    for tid, ops in ((1, [("w", 1)]), (2, [("w", 2)]), (3, [("w", 3)])):
        eng.begin(tid)
        eng.exec_statement(tid, ops, collector(res, tid))
    kernel.run_until(BIG)
    eng.end(1), eng.prepare(1)                    # T1 voted yes
    eng.end(2)                                    # T2 ended, no vote
    eng.crash()
    assert eng.state_of(1) is None                # volatile memory is gone...
    assert eng.state_of(2) == SubtxnState.ABORTED
    assert eng.state_of(3) == SubtxnState.ABORTED
    assert finals_in(trace, 2) == ["aborted:crash"]
    eng.restart()
    assert eng.state_of(1) == SubtxnState.PREPARED  # ...but the vote is durable
    # the prepared transaction still holds its write lock
    eng.begin(9)
    eng.exec_statement(9, [("w", 1)], collector(res, 9))
    kernel.run_until(kernel.now)
    assert res.get(9) is None                     # blocked by recovered lock
    eng.commit(1)
    assert eng.records[1] == 1                    # prepared write survived
    kernel.run_until(BIG)
    assert res[9] == (True, "")


def test_abort_unprepared_spares_voted_subtransactions():
    kernel, trace, eng = make_engine()
    res = {}
    for tid in (1, 2):
        eng.begin(tid)
        eng.exec_statement(tid, [("w", tid)], collector(res, tid))
    kernel.run_until(BIG)
    eng.end(1), eng.prepare(1)
    eng.abort_unprepared("dm_disconnect")
    assert eng.state_of(1) == SubtxnState.PREPARED
    assert eng.state_of(2) == SubtxnState.ABORTED
    assert finals_in(trace, 2) == ["aborted:dm_disconnect"]


# -------------------------------------------------------------- invariants

@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(st.sampled_from("rw"),     # op
                                   st.integers(1, 3)),        # key
                         min_size=1, max_size=3),
                min_size=1, max_size=12))
def test_lock_table_invariant_under_random_schedules(txn_ops):
    """At every instant each key is held by one writer or only readers, and
    a drained run leaves no locks and applies exactly the committed writes."""
    kernel, trace, eng = make_engine(service_ms=0.1, timeout_ms=20.0)

    def check_locks(*_):
        for key, ls in eng._locks.items():
            modes = list(ls.holders.values())
            if LockMode.EXCLUSIVE in modes:
                assert len(modes) == 1, f"writer shares key {key}"

    kernel.event_hook = check_locks
    res = {}

    def submit(uid, ops):
        eng.begin(uid)
        eng.exec_statement(uid, ops, collector(res, uid))

    # staggered submissions so statements overlap in virtual time
    for i, ops in enumerate(txn_ops):
        kernel.schedule(i * 137, "ds1", "submit",
                        lambda uid=i + 1, ops=list(ops): submit(uid, ops))
    kernel.run_until(BIG)

    committed_writes: dict = {}
    for i, ops in enumerate(txn_ops):
        uid = i + 1
        ok, _ = res[uid]
        if ok:
            assert eng.state_of(uid) == SubtxnState.ACTIVE
            eng.end(uid), eng.prepare(uid)
            eng.commit(uid)
            for op, key in ops:
                if op == "w":
                    committed_writes[key] = committed_writes.get(key, 0) + 1
        else:
            assert eng.state_of(uid) == SubtxnState.ABORTED
    kernel.run_until(BIG)
    assert eng.records == committed_writes
    assert all(not ls.holders and not ls.queue for ls in eng._locks.values())
