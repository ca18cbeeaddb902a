"""Trace-based history checkers: atomic commitment and conflict
serializability, including the brute-force enumeration cross-check and a
mutation run with the decision-log flush deliberately disabled."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtxsim.checkers import (check_atomicity, check_serializability,
                             conflict_edges, find_cycle, mixed_outcome_tids,
                             serializable_by_enumeration)
from dtxsim.coordinator import Coordinator
from dtxsim.trace import (EV_DISPATCH, EV_FLUSH, EV_LOCK_GRANT, EV_OUTCOME,
                          EV_SUBTXN_FINAL, EV_VOTE, Rec)

from _support import deep_merge, run_dict, ycsb_dict


# ------------------------------------------------------- record constructors

def outcome(t, tid, status="committed", cls="", kind="ycsb", wan=0):
    return Rec(t, tid, "dm", EV_OUTCOME, f"{status}:{cls}:{kind}:wan={wan}")


def dispatch(t, tid, site):
    return Rec(t, tid, site, EV_DISPATCH, "commit")


def flush(t, tid, decision="commit"):
    return Rec(t, tid, "dm", EV_FLUSH, decision)


def vote(t, tid, site, v="yes"):
    return Rec(t, tid, site, EV_VOTE, v)


def final(t, tid, site, verdict="committed"):
    detail = verdict if verdict == "committed" else f"{verdict}:test"
    return Rec(t, tid, site, EV_SUBTXN_FINAL, detail)


def grant(t, tid, site, key, mode):
    return Rec(t, tid, site, EV_LOCK_GRANT, f"{key}:{mode}")


def committed_2pc(tid, t0=0):
    """A fully well-formed two-participant commit history."""
    return [
        dispatch(t0 + 1, tid, "ds1"), dispatch(t0 + 1, tid, "ds2"),
        grant(t0 + 2, tid, "ds1", "10", "x"),
        grant(t0 + 3, tid, "ds2", "20", "s"),
        vote(t0 + 4, tid, "ds1"), vote(t0 + 5, tid, "ds2"),
        flush(t0 + 6, tid),
        final(t0 + 7, tid, "ds1"), final(t0 + 8, tid, "ds2"),
        outcome(t0 + 9, tid, kind="distributed", wan=2),
    ]


# ------------------------------------------------------------------ atomicity

def test_well_formed_commit_is_clean():
    assert check_atomicity(committed_2pc(1)) == []
    assert mixed_outcome_tids(committed_2pc(1)) == []


def test_mixed_participant_outcomes_flagged():
    recs = [dispatch(1, 1, "ds1"), dispatch(1, 1, "ds2"),
            final(5, 1, "ds1", "committed"), final(6, 1, "ds2", "aborted")]
    violations = check_atomicity(recs)
    assert any("mixed outcome" in v for v in violations)
    assert mixed_outcome_tids(recs) == [1]


def test_final_state_flip_flagged():
    recs = [dispatch(1, 1, "ds1"),
            final(5, 1, "ds1", "aborted"), final(6, 1, "ds1", "committed")]
    assert any("final state at ds1 changed" in v
               for v in check_atomicity(recs))


def test_double_flush_flagged():
    recs = committed_2pc(1) + [flush(20, 1, "abort")]
    assert any("2 decision flushes" in v for v in check_atomicity(recs))


def test_commit_without_flush_flagged_for_multi_participant():
    recs = [r for r in committed_2pc(1) if r.event != EV_FLUSH]
    assert any("without a single flushed commit" in v
               for v in check_atomicity(recs))


def test_one_phase_commit_needs_no_flush():
    # a single dispatched participant owns the outcome; no decision record
    recs = [dispatch(1, 1, "ds1"),
            grant(2, 1, "ds1", "3", "x"),
            final(4, 1, "ds1"),
            outcome(5, 1, kind="centralized", wan=1)]
    assert check_atomicity(recs) == []


def test_commit_with_missing_participant_final_flagged():
    recs = [r for r in committed_2pc(1)
            if not (r.event == EV_SUBTXN_FINAL and r.site == "ds2")]
    assert any("participant ds2 final state is missing" in v
               for v in check_atomicity(recs))


def test_commit_without_vote_flagged():
    recs = [r for r in committed_2pc(1)
            if not (r.event == EV_VOTE and r.site == "ds1")]
    assert any("without a yes/idle vote from ds1" in v
               for v in check_atomicity(recs))


def test_commit_over_no_vote_flagged():
    recs = [vote(10, 1, "ds1", "no") if (r.event == EV_VOTE
                                         and r.site == "ds1") else r
            for r in committed_2pc(1)]
    assert any("without a yes/idle vote from ds1" in v
               for v in check_atomicity(recs))


def test_aborted_outcome_with_committed_participant_flagged():
    recs = [dispatch(1, 1, "ds1"), dispatch(1, 1, "ds2"),
            final(5, 1, "ds1", "committed"), final(6, 1, "ds2", "committed"),
            outcome(9, 1, status="aborted", cls="failure",
                    kind="distributed")]
    assert any("aborted outcome but committed at" in v
               for v in check_atomicity(recs))


# ------------------------------------------------------- conflict graph

def test_write_write_conflict_orders_transactions():
    recs = [grant(1, 1, "ds1", "k", "x"), grant(2, 2, "ds1", "k", "x"),
            outcome(10, 1), outcome(11, 2)]
    assert conflict_edges(recs) == {(1, 2)}


def test_shared_locks_do_not_conflict():
    recs = [grant(1, 1, "ds1", "k", "s"), grant(2, 2, "ds1", "k", "s"),
            outcome(10, 1), outcome(11, 2)]
    assert conflict_edges(recs) == set()


def test_read_then_write_and_write_then_read_directions():
    recs = [grant(1, 1, "ds1", "k", "s"), grant(2, 2, "ds1", "k", "x"),
            outcome(10, 1), outcome(11, 2)]
    assert conflict_edges(recs) == {(1, 2)}
    recs = [grant(1, 1, "ds1", "k", "x"), grant(2, 2, "ds1", "k", "s"),
            outcome(10, 1), outcome(11, 2)]
    assert conflict_edges(recs) == {(1, 2)}


def test_same_key_different_sites_do_not_conflict():
    recs = [grant(1, 1, "ds1", "k", "x"), grant(2, 2, "ds2", "k", "x"),
            outcome(10, 1), outcome(11, 2)]
    assert conflict_edges(recs) == set()


def test_aborted_transactions_carry_no_edges():
    recs = [grant(1, 1, "ds1", "k", "x"), grant(2, 2, "ds1", "k", "x"),
            outcome(10, 1, status="aborted", cls="lock_timeout"),
            outcome(11, 2)]
    assert conflict_edges(recs) == set()


def test_find_cycle():
    assert find_cycle({(1, 2), (2, 3)}) == []
    cyc = find_cycle({(1, 2), (2, 3), (3, 1)})
    assert len(cyc) == 4 and cyc[0] == cyc[-1]
    assert set(cyc) == {1, 2, 3}


def test_cycle_witness_and_enumeration_agree_on_nonserializable():
    # opposite orders on two keys: impossible under strict 2PL, so the
    # checker must reject it
    recs = [grant(1, 1, "ds1", "a", "x"), grant(2, 2, "ds1", "b", "x"),
            grant(3, 2, "ds1", "a", "x"), grant(4, 1, "ds1", "b", "x"),
            outcome(10, 1), outcome(11, 2)]
    violations = check_serializability(recs)
    assert len(violations) == 1 and "conflict cycle" in violations[0]
    assert serializable_by_enumeration(recs) is False


def test_checker_and_enumeration_agree_on_serializable():
    recs = [grant(1, 1, "ds1", "a", "x"), grant(2, 2, "ds1", "a", "x"),
            grant(3, 1, "ds2", "b", "x"), grant(4, 2, "ds2", "b", "x"),
            outcome(10, 1), outcome(11, 2)]
    assert check_serializability(recs) == []
    assert serializable_by_enumeration(recs) is True


def test_enumeration_limit_enforced():
    recs = [outcome(10 + i, i) for i in range(1, 8)]
    with pytest.raises(ValueError):
        serializable_by_enumeration(recs, limit=6)


@st.composite
def grant_histories(draw):
    n_txn = draw(st.integers(2, 5))
    n_grants = draw(st.integers(1, 14))
    recs, t = [], 0
    for _ in range(n_grants):
        t += 10
        tid = draw(st.integers(1, n_txn))
        site = draw(st.sampled_from(["ds1", "ds2"]))
        key = draw(st.sampled_from(["a", "b", "c"]))
        mode = draw(st.sampled_from(["s", "x"]))
        recs.append(grant(t, tid, site, key, mode))
    for tid in range(1, n_txn + 1):
        t += 10
        status = draw(st.sampled_from(["committed", "aborted"]))
        cls = "" if status == "committed" else "lock_timeout"
        recs.append(outcome(t, tid, status=status, cls=cls))
    return recs


@given(grant_histories())
@settings(max_examples=300, deadline=None)
def test_graph_checker_matches_enumeration(recs):
    graph_ok = check_serializability(recs) == []
    assert graph_ok == serializable_by_enumeration(recs)


# ------------------------------------------------------------- real histories

CONTENDED = dict(workload={"theta": 1.2, "terminals": 8, "txn_budget": 80,
                           "dist_txn_ratio": 0.6},
                 datasource={"keys_per_node": 40})


def test_real_run_passes_both_checkers():
    world, quiesced = run_dict(ycsb_dict(**CONTENDED))
    assert quiesced
    recs = world.trace.records
    assert any(r.event == EV_LOCK_GRANT for r in recs)
    assert check_atomicity(recs) == []
    assert check_serializability(recs) == []


def test_disabled_log_flush_is_detected(monkeypatch):
    # mutation hook: the coordinator "forgets" to write the decision record
    # before dispatching; multi-participant commits must then be flagged
    def skipping_flush_done(self, tid, epoch):
        if epoch != self._epoch:
            return
        ctx = self._txns.get(tid)
        if ctx is None:
            return
        ctx.flushed = True
        self._dispatch_decision(ctx)

    monkeypatch.setattr(Coordinator, "_flush_done", skipping_flush_done)
    world, quiesced = run_dict(ycsb_dict(
        workload={"dist_txn_ratio": 1.0, "terminals": 4, "txn_budget": 20}))
    assert quiesced
    recs = world.trace.records
    assert not any(r.event == EV_FLUSH for r in recs)
    violations = check_atomicity(recs)
    assert violations
    assert any("without a single flushed commit" in v for v in violations)
