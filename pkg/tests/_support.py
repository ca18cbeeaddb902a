"""Shared helpers for building configs, scripted transactions, and worlds."""

from dtxsim.config import experiment_from_dict
from dtxsim.harness import World
from dtxsim.metrics import compute_metrics


def deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def ycsb_dict(**over) -> dict:
    """A small fault-free closed-loop workload; override any nested key."""
    base = {
        "seed": 1,
        "datasource": {"keys_per_node": 500},
        "workload": {"kind": "ycsb", "terminals": 8, "ops_per_txn": 3,
                     "theta": 0.5, "dist_txn_ratio": 0.4, "txn_budget": 60},
    }
    return deep_merge(base, over)


def stmt(site: str, ops: list) -> dict:
    return {"site": site, "ops": ops}


def script_entry(at_ms: float, rounds: list, client_abort: bool = False) -> dict:
    return {"at_ms": at_ms, "rounds": rounds, "client_abort": client_abort}


def script_dict(script: list, rtt_ms: dict, **over) -> dict:
    """A scripted run over a star topology with the given per-site RTTs."""
    base = {
        "seed": 1,
        "topology": {"rtt_ms": dict(rtt_ms)},
        "datasource": {"service_time_ms": 0.0},
        "workload": {"kind": "script", "script": list(script)},
    }
    return deep_merge(base, over)


def make_world(d: dict) -> World:
    return World(experiment_from_dict(d))


def run_dict(d: dict, cap_s: float = 600.0):
    """Build, run, and return (world, quiesced)."""
    world = make_world(d)
    quiesced = world.run(cap_s=cap_s)
    return world, quiesced


def outcomes_of(records) -> dict:
    """tid -> (status, abort_class, kind, wan_round_trips)."""
    out = {}
    for r in records:
        if r.event == "outcome":
            status, cls, kind, wan = r.detail.split(":")
            out[r.tid] = (status, cls, kind, int(wan.split("=", 1)[1]))
    return out


def report_of(world, warmup_frac: float = 0.0):
    return compute_metrics(world.trace.records, warmup_frac)
