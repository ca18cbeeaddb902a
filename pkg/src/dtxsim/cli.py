"""Command-line harness.

    dtxsim run   --config cfg.json [--seed N] [--out DIR] [--trace]
    dtxsim sweep --config cfg.json --seeds 1..5 [--out DIR]
    dtxsim check --trace trace.tsv

`run` executes one experiment, optionally writing summary.csv,
latency_cdf.csv, lcs_hist.csv, and trace.tsv into --out.  `sweep` repeats
the config across a seed range and writes one summary row per seed.
`check` re-validates a previously written trace.  The exit code is nonzero
if any checker reports a violation or the run fails to quiesce.
"""

from __future__ import annotations

import argparse
import sys

from .checkers import check_atomicity, check_serializability
from .config import ConfigError, load_experiment
from .harness import DEFAULT_CAP_S, run_experiment, sweep
from .trace import read_tsv


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError(f"empty seed range '{text}'")
        return list(range(lo_i, hi_i + 1))
    return [int(text)]


def _print_report(seed: int, result) -> None:
    rep = result.report
    print(f"seed={seed} committed={rep.committed} aborted={rep.aborted} "
          f"throughput={rep.throughput_tps:.2f}/s "
          f"p99={rep.latency_pct_us(0.99) / 1000:.2f}ms")


def _print_violations(atomicity: list[str], serializability: list[str]) -> int:
    status = 0
    if atomicity:
        status = 1
        print(f"atomicity: {len(atomicity)} violation(s)")
        for v in atomicity[:20]:
            print(f"  {v}")
    else:
        print("atomicity: ok")
    if serializability:
        status = 1
        print(f"serializability: {serializability[0]}")
    else:
        print("serializability: ok")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dtxsim",
        description="Deterministic simulator of geo-distributed transaction "
                    "middleware")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--trace", action="store_true",
                       help="also write trace.tsv into --out")
    p_run.add_argument("--cap-s", type=float, default=DEFAULT_CAP_S,
                       help="virtual-time cap in seconds")

    p_sweep = sub.add_parser("sweep", help="run a seed sweep of one config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seeds", required=True,
                         help="single seed or inclusive range a..b")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--cap-s", type=float, default=DEFAULT_CAP_S)

    p_check = sub.add_parser("check", help="re-check a written trace")
    p_check.add_argument("--trace", required=True)

    args = parser.parse_args(argv)

    if args.command == "check":
        records = read_tsv(args.trace)
        return _print_violations(check_atomicity(records),
                                 check_serializability(records))

    try:
        cfg = load_experiment(args.config)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        if args.seed is not None:
            cfg.seed = args.seed
        result = run_experiment(cfg, out_dir=args.out,
                                write_trace=args.trace, cap_s=args.cap_s)
        _print_report(cfg.seed, result)
        status = _print_violations(result.atomicity_violations,
                                   result.serializability_violations)
        if not result.quiesced:
            print("run hit the virtual-time cap before quiescing")
            status = 1
        return status

    # sweep
    seeds = _parse_seeds(args.seeds)
    results = sweep(cfg, seeds, out_dir=args.out, cap_s=args.cap_s)
    status = 0
    for r in results:
        _print_report(r.cfg.seed, r)
        if not r.ok:
            status = 1
            for v in r.atomicity_violations[:5]:
                print(f"  atomicity: {v}")
            for v in r.serializability_violations[:1]:
                print(f"  serializability: {v}")
            if not r.quiesced:
                print("  run hit the virtual-time cap before quiescing")
    return status


if __name__ == "__main__":
    sys.exit(main())
