#!/usr/bin/env python3
"""Randomized crash/restart campaign with atomicity verification.

Generates random fault schedules against a small contended workload —
middleware crashes, middleware crashes wedged between the decision-log
flush and the decision's dispatch, and data-source crashes, each paired
with a later restart — runs every schedule across several seeds, and
verifies the resulting histories: every run must quiesce, pass the
atomicity checker, and contain no transaction that committed at one
participant and aborted at another.

Exits nonzero if any run violates a check.
"""

import argparse
import random
import sys

from dtxsim.checkers import check_atomicity, mixed_outcome_tids
from dtxsim.config import experiment_from_dict
from dtxsim.harness import World

BASE = {
    "topology": {"rtt_ms": {"ds1": 10.0, "ds2": 40.0}},
    "datasource": {"keys_per_node": 50, "lock_wait_timeout_ms": 50.0},
    "workload": {"terminals": 3, "txn_budget": 8, "dist_txn_ratio": 0.6,
                 "theta": 0.8, "ops_per_txn": 3},
}


def random_schedule(rng: random.Random) -> list:
    kind = rng.random()
    at = round(rng.uniform(0.0, 120.0), 3)
    gap = round(rng.uniform(50.0, 150.0), 3)
    if kind < 0.25:
        site, action = "dm", "crash_after_flush"
    elif kind < 0.625:
        site, action = "dm", "crash"
    else:
        site, action = rng.choice(["ds1", "ds2"]), "crash"
    return [{"at_ms": at, "site": site, "action": action},
            {"at_ms": at + gap, "site": site, "action": "restart"}]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--schedules", type=int, default=100,
                        help="number of random fault schedules (default 100)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--gen-seed", type=int, default=606,
                        help="seed for the schedule generator")
    args = parser.parse_args(argv)

    rng = random.Random(args.gen_seed)
    runs = failures = 0
    for schedule_no in range(args.schedules):
        faults = random_schedule(rng)
        for seed in args.seeds:
            cfg = experiment_from_dict(dict(BASE, seed=seed, faults=faults))
            world = World(cfg)
            runs += 1
            problems = []
            if not world.run(cap_s=600):
                problems.append("did not quiesce")
            else:
                problems += check_atomicity(world.trace.records)
                mixed = mixed_outcome_tids(world.trace.records)
                if mixed:
                    problems.append(f"mixed outcomes for tids {mixed}")
            if problems:
                failures += 1
                print(f"FAIL schedule {schedule_no} seed {seed} "
                      f"faults={faults}:", file=sys.stderr)
                for p in problems:
                    print(f"  {p}", file=sys.stderr)
        if (schedule_no + 1) % 50 == 0:
            print(f"... {schedule_no + 1}/{args.schedules} schedules done "
                  f"({runs} runs, {failures} failures)")

    print(f"{runs} runs over {args.schedules} schedules: "
          f"{runs - failures} clean, {failures} failed")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
