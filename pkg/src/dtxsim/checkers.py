"""History checkers: atomic commitment and committed-history serializability.

Both checkers consume only the run trace, so they validate what the system
actually did rather than what its in-memory state claims.  The
serializability verdict also has an independent brute-force counterpart
(`serializable_by_enumeration`) used to validate the production checker on
small histories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

from .trace import (EV_DISPATCH, EV_FLUSH, EV_LOCK_GRANT, EV_OUTCOME,
                    EV_SUBTXN_FINAL, EV_VOTE, Rec)

SHARED = "s"                 # lock-mode token as it appears in the trace


@dataclass
class TxnHistory:
    tid: int
    outcome: str = ""                    # committed | aborted | "" (unresolved)
    abort_class: str = ""
    kind: str = ""
    outcome_at: int = 0
    wan_rts: int = 0
    dispatched: set = field(default_factory=set)
    flushes: list = field(default_factory=list)     # (time, decision)
    votes: dict = field(default_factory=dict)       # site -> [vote, ...]
    finals: dict = field(default_factory=dict)      # site -> [(time, verdict), ...]
    grants: dict = field(default_factory=dict)      # site -> [(time, key, mode), ...]


def collect_histories(records: list[Rec]) -> dict[int, TxnHistory]:
    h: dict[int, TxnHistory] = {}

    def of(tid: int) -> TxnHistory:
        if tid not in h:
            h[tid] = TxnHistory(tid)
        return h[tid]

    for r in records:
        if r.tid < 0:
            continue
        if r.event == EV_OUTCOME:
            t = of(r.tid)
            status, cls, kind, wan = r.detail.split(":")
            t.outcome, t.abort_class, t.kind = status, cls, kind
            t.outcome_at = r.time_us
            t.wan_rts = int(wan.split("=", 1)[1])
        elif r.event == EV_DISPATCH:
            of(r.tid).dispatched.add(r.site)
        elif r.event == EV_FLUSH:
            of(r.tid).flushes.append((r.time_us, r.detail))
        elif r.event == EV_VOTE:
            of(r.tid).votes.setdefault(r.site, []).append(r.detail)
        elif r.event == EV_SUBTXN_FINAL:
            verdict = r.detail.split(":", 1)[0]
            of(r.tid).finals.setdefault(r.site, []).append((r.time_us, verdict))
        elif r.event == EV_LOCK_GRANT:
            key, mode = r.detail.rsplit(":", 1)
            of(r.tid).grants.setdefault(r.site, []).append((r.time_us, key, mode))
    return h


# ------------------------------------------------------------------ atomicity

def check_atomicity(records: list[Rec]) -> list[str]:
    """Returns a list of violations (empty means the history is atomic).

    Rules per transaction: at most one decision flush; participant final
    states never flip; no mix of committed and aborted participants; a
    committed client outcome requires a flushed commit decision, a
    committed final state at every dispatched participant, and (for
    multi-participant transactions) a yes or idle vote from each.
    """
    violations: list[str] = []
    for tid, t in sorted(collect_histories(records).items()):
        if len(t.flushes) > 1:
            violations.append(f"txn {tid}: {len(t.flushes)} decision flushes")
        site_verdicts: dict[str, str] = {}
        for site, evs in t.finals.items():
            verdicts = {v for _, v in evs}
            if len(verdicts) > 1:
                violations.append(
                    f"txn {tid}: final state at {site} changed: "
                    f"{sorted(v for _, v in evs)}")
            site_verdicts[site] = evs[-1][1]
        seen = set(site_verdicts.values())
        if seen == {"committed", "aborted"}:
            committed_at = sorted(s for s, v in site_verdicts.items()
                                  if v == "committed")
            aborted_at = sorted(s for s, v in site_verdicts.items()
                                if v == "aborted")
            violations.append(
                f"txn {tid}: mixed outcome — committed at {committed_at}, "
                f"aborted at {aborted_at}")
        if ("committed" in seen or t.outcome == "committed") \
                and len(t.dispatched) > 1:
            # single-participant commits are one-phase: the data source owns
            # the outcome and no decision record is written
            decisions = [d for _, d in t.flushes]
            if decisions != ["commit"]:
                violations.append(
                    f"txn {tid}: committed without a single flushed commit "
                    f"decision (flushes={decisions})")
        if t.outcome == "committed":
            for site in sorted(t.dispatched):
                if site_verdicts.get(site) != "committed":
                    violations.append(
                        f"txn {tid}: committed outcome but participant {site} "
                        f"final state is {site_verdicts.get(site, 'missing')}")
            if len(t.dispatched) > 1:
                for site in sorted(t.dispatched):
                    vs = t.votes.get(site, [])
                    if not vs or vs[-1] not in ("yes", "idle"):
                        violations.append(
                            f"txn {tid}: committed without a yes/idle vote "
                            f"from {site} (votes={vs})")
        if t.outcome == "aborted" and "committed" in seen:
            violations.append(f"txn {tid}: aborted outcome but committed at "
                              f"{sorted(s for s, v in site_verdicts.items() if v == 'committed')}")
    return violations


def mixed_outcome_tids(records: list[Rec]) -> list[int]:
    out = []
    for tid, t in sorted(collect_histories(records).items()):
        verdicts = {evs[-1][1] for evs in t.finals.values()}
        if verdicts == {"committed", "aborted"}:
            out.append(tid)
    return out


# ------------------------------------------------------- serializability

def conflict_edges(records: list[Rec]) -> set[tuple]:
    """Directed conflict edges between committed transactions.

    Under strict two-phase locking, locks are held to the final state, so
    the grant order of two conflicting locks on the same site/key is the
    serialization order of their transactions.
    """
    hist = collect_histories(records)
    committed = {tid for tid, t in hist.items() if t.outcome == "committed"}
    per_key: dict[tuple, list] = {}
    for tid in committed:
        for site, evs in hist[tid].grants.items():
            for time_us, key, mode in evs:
                per_key.setdefault((site, key), []).append((time_us, tid, mode))
    edges: set[tuple] = set()
    # linear sweep per key: an exclusive grant conflicts with the previous
    # exclusive grant and every shared grant since; omitted pairs stay
    # reachable through those edges, so acyclicity is unaffected
    for evs in per_key.values():
        evs.sort()
        last_x: int | None = None
        readers_since: set[int] = set()
        for _, tid, mode in evs:
            if mode == SHARED:
                if last_x is not None and last_x != tid:
                    edges.add((last_x, tid))
                readers_since.add(tid)
            else:
                if last_x is not None and last_x != tid:
                    edges.add((last_x, tid))
                for r in readers_since:
                    if r != tid:
                        edges.add((r, tid))
                last_x = tid
                readers_since = set()
    return edges


def find_cycle(edges: set[tuple]) -> list[int]:
    """Returns one cycle as a node list (empty if the graph is acyclic).

    Iterative colored DFS so deep conflict chains cannot overflow the
    interpreter stack.
    """
    adj: dict[int, list] = {}
    for a, b in sorted(edges):
        adj.setdefault(a, []).append(b)
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[int, int] = {}
    for root in sorted(adj):
        if color.get(root, WHITE) != WHITE:
            continue
        path: list[int] = []
        work: list[tuple] = [(root, iter(adj.get(root, [])))]
        color[root] = GRAY
        path.append(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                c = color.get(nxt, WHITE)
                if c == GRAY:
                    return path[path.index(nxt):] + [nxt]
                if c == WHITE:
                    color[nxt] = GRAY
                    path.append(nxt)
                    work.append((nxt, iter(adj.get(nxt, []))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                path.pop()
                work.pop()
    return []


def check_serializability(records: list[Rec]) -> list[str]:
    """Empty list when the committed history is conflict-serializable;
    otherwise a one-element list naming a conflict cycle."""
    cycle = find_cycle(conflict_edges(records))
    if not cycle:
        return []
    return [" -> ".join(f"txn {tid}" for tid in cycle) + " forms a conflict cycle"]


def serializable_by_enumeration(records: list[Rec], limit: int = 6) -> bool:
    """Brute-force reference: does some serial order of the committed
    transactions respect every observed conflict order?

    Deliberately independent of the graph checker above: it re-derives the
    committed set and lock sequences straight from the records and tests
    every permutation.  Exponential; only for histories of at most `limit`
    committed transactions.
    """
    committed = set()
    for r in records:
        if r.event == EV_OUTCOME and r.detail.startswith("committed"):
            committed.add(r.tid)
    if len(committed) > limit:
        raise ValueError(f"enumeration limited to {limit} transactions")
    sequences: dict[tuple, list] = {}
    for r in records:
        if r.event == EV_LOCK_GRANT and r.tid in committed:
            key, mode = r.detail.rsplit(":", 1)
            sequences.setdefault((r.site, key), []).append((r.time_us, r.tid, mode))
    for order in permutations(sorted(committed)):
        pos = {tid: i for i, tid in enumerate(order)}
        ok = True
        for seq in sequences.values():
            byt = sorted(seq)
            for i in range(len(byt)):
                for j in range(i + 1, len(byt)):
                    _, ta, ma = byt[i]
                    _, tb, mb = byt[j]
                    if ta == tb:
                        continue
                    if ma == SHARED and mb == SHARED:
                        continue
                    if pos[ta] > pos[tb]:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            return True
    return False
