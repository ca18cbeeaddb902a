#!/usr/bin/env python3
"""Ablation over the optimization stack on one contended workload.

Runs the same closed-loop skewed workload under the default four-site
topology with the protocol features switched on one group at a time:

  baseline      classic prepare round through the middleware
  fast-path     agent-side prepare + peer-to-peer aborts
  +postpone     fast-path plus latency-aware dispatch postponement
  +admission    all of the above plus the hotspot admission gate

Writes ablation.csv (one row per variant, seed-averaged) and prints a table.
"""

import argparse
import csv
import os

from dtxsim.config import experiment_from_dict
from dtxsim.harness import World
from dtxsim.metrics import compute_metrics, percentile

FAST_PATH = {"decentralized_prepare": True, "early_abort": True}

VARIANTS = [
    ("baseline", {}, {}),
    ("fast-path", FAST_PATH, {}),
    ("+postpone", FAST_PATH, {"scheduling": True}),
    ("+admission", FAST_PATH, {"scheduling": True, "adv_opt": True}),
]

COLUMNS = ("variant", "throughput_tps", "p99_ms", "abort_rate",
           "aborted_admission", "aborted_lock_timeout", "wan_rt_mean")


def run_variant(features, scheduler, theta, seeds, budget, terminals) -> dict:
    tputs, lats = [], []
    committed = aborted = adm = lto = 0
    wan = []
    for seed in seeds:
        cfg = experiment_from_dict({
            "seed": seed,
            "datasource": {"keys_per_node": 5000,
                           "lock_wait_timeout_ms": 5000.0},
            "workload": {"terminals": terminals, "ops_per_txn": 3,
                         "read_fraction": 0.5, "theta": theta,
                         "dist_txn_ratio": 0.5, "txn_budget": budget,
                         "home_sites": ["ds1"],
                         "dist_site_sets": [["ds1", "ds4"]]},
            "features": features,
            "scheduler": scheduler,
        })
        world = World(cfg)
        if not world.run(cap_s=3600):
            raise RuntimeError("run did not quiesce")
        rep = compute_metrics(world.trace.records)
        tputs.append(rep.throughput_tps)
        lats.extend(rep.latencies_us)
        committed += rep.committed
        aborted += rep.aborted
        adm += rep.aborted_by_class.get("admission", 0)
        lto += rep.aborted_by_class.get("lock_timeout", 0)
        wan.append(rep.wan_rt_mean)
    lats.sort()
    done = committed + aborted
    return {
        "throughput_tps": sum(tputs) / len(tputs),
        "p99_ms": percentile(lats, 0.99) / 1000.0,
        "abort_rate": aborted / done if done else 0.0,
        "aborted_admission": adm,
        "aborted_lock_timeout": lto,
        "wan_rt_mean": sum(wan) / len(wan),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--theta", type=float, default=0.9,
                        help="access skew (default 0.9)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--budget", type=int, default=1200,
                        help="transactions per terminal pool per run")
    parser.add_argument("--terminals", type=int, default=64)
    parser.add_argument("--out", default="out/ablation")
    args = parser.parse_args(argv)

    rows = []
    print(f"theta={args.theta}, {args.terminals} terminals, "
          f"{args.budget} txns/run, seeds {args.seeds}\n")
    print(f"{'variant':<12} {'tput/s':>9} {'p99 ms':>10} {'abort%':>7} "
          f"{'wan rt':>7}")
    for name, features, scheduler in VARIANTS:
        stats = run_variant(features, scheduler, args.theta, args.seeds,
                            args.budget, args.terminals)
        rows.append({"variant": name, **stats})
        print(f"{name:<12} {stats['throughput_tps']:>9.2f} "
              f"{stats['p99_ms']:>10.1f} {stats['abort_rate'] * 100:>6.1f}% "
              f"{stats['wan_rt_mean']:>7.2f}")

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablation.csv")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"\nwrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
