"""Protocol run trace: an append-only log of what happened, when, and where.

Each record is (time_us, tid, site, event, detail).  The trace is the single
source of truth for the metrics report and for the atomicity and
serializability checkers, and it round-trips through a tab-separated file so
saved runs can be re-checked offline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

# client / middleware events
EV_SUBMIT = "submit"
EV_OUTCOME = "outcome"          # detail: committed|aborted:<class>:wan=<n>
EV_ADMIT_DELAY = "admit_delay"
EV_DISPATCH = "dispatch"        # detail: round=<r> statement sent to site
EV_FLUSH = "flush"              # detail: commit|abort (decision made durable)
EV_RECV = "dm_recv"             # detail: message kind observed by middleware
EV_CRASH = "crash"
EV_RESTART = "restart"
EV_RECOVERY = "recovery"        # detail: phase notes

# data-source events
EV_LOCK_GRANT = "lock_grant"    # detail: <key>:<s|x>
EV_LOCK_RELEASE = "lock_release"  # detail: <key>
EV_VOTE = "vote"                # detail: yes|no|idle
EV_SUBTXN_FINAL = "subtxn_final"  # detail: committed|aborted:<reason>
EV_PEER_NOTICE = "peer_notice"  # detail: from=<site>

NO_TID = -1


@dataclass(frozen=True)
class Rec:
    time_us: int
    tid: int
    site: str
    event: str
    detail: str


class TraceRecorder:
    def __init__(self):
        self.records: list[Rec] = []

    def log(self, time_us: int, tid: int, site: str, event: str, detail: str = "") -> None:
        self.records.append(Rec(time_us, tid, site, event, detail))

    def write_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("time_us\ttid\tsite\tevent\tdetail\n")
            for r in self.records:
                f.write(f"{r.time_us}\t{r.tid}\t{r.site}\t{r.event}\t{r.detail}\n")


def read_tsv(path: str) -> list[Rec]:
    out: list[Rec] = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header[:4] != ["time_us", "tid", "site", "event"]:
            raise ValueError(f"not a run trace file: {path}")
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 4:
                continue
            detail = parts[4] if len(parts) > 4 else ""
            out.append(Rec(int(parts[0]), int(parts[1]), parts[2], parts[3], detail))
    return out


def events_of(records: Iterable[Rec], event: str) -> list[Rec]:
    return [r for r in records if r.event == event]
