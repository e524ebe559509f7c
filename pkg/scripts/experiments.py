#!/usr/bin/env python3
"""Desk-scale experiment sweeps: latency, scalability, contention, epoch, breakdown, failover.

    python3 scripts/experiments.py latency --seeds 0,1,2 --out results/
    python3 scripts/experiments.py all --txns 500

Each sweep goes through the regular ``epochocc run`` path, so results land in
``<out>/<experiment>/metrics.csv`` and ``epochs.csv`` and every run is oracle
checked.  A compact table is printed at the end of each experiment.
"""
from __future__ import annotations

import argparse
import statistics
import sys
from collections import defaultdict
from pathlib import Path

from epochocc.cli import RunManifest, cmd_run, parse_seeds
from epochocc.config import load_config, with_overrides
from epochocc.metrics import read_csv
from epochocc.sim import run_simulation

CONFIGS = Path(__file__).resolve().parent / "configs"

SWEEPS = {
    "latency": ("latency", (0.0, 50.0, 100.0, 200.0), {}),
    "scalability": ("replicas", (3, 5, 7), {}),
    "contention": ("zipf", (0.0, 0.3, 0.7, 0.99, 1.2), {"workload.clients_per_replica": 8}),
    "epoch": ("epoch_interval", (5.0, 15.0, 50.0), {"latency.base_ms": 20.0}),
    "batch": ("batch_timeout", (1.0, 5.0, 20.0), {"latency.base_ms": 20.0}),
    "breakdown": ("zipf", (0.0, 0.7, 0.99), {"workload.clients_per_replica": 8,
                                              "hc.enabled": False}),
}

STAGES = ["chain_us", "stale_us", "graph_us", "mwis_us", "apply_us", "reexec_us"]


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return statistics.fmean(xs) if xs else float("nan")


def _num(s):
    return None if s == "NA" else float(s)


def sweep(name, seeds, txns, out, jobs) -> int:
    axis, values, extra = SWEEPS[name]
    cfg = with_overrides(load_config(CONFIGS / "ycsb.json"), **extra, **{"workload.txns": txns})
    m = RunManifest(cfg, str(CONFIGS / "ycsb.json"), seeds, out / name, axis, values)
    rc = cmd_run(m, jobs)
    rows = read_csv(out / name / "metrics.csv")
    grouped = defaultdict(list)
    for r in rows:
        grouped[r["value"]].append(r)
    print(f"\n{name}: {axis}")
    print(f"{'value':>10} {'tps':>10} {'p50 ms':>9} {'p99 ms':>9} {'re-exec':>8}")
    for v, rs in grouped.items():
        print(f"{v:>10} {_mean(_num(r['throughput_tps']) for r in rs):10.1f} "
              f"{_mean(_num(r['p50_ms']) for r in rs):9.2f} "
              f"{_mean(_num(r['p99_ms']) for r in rs):9.2f} "
              f"{_mean(_num(r['reexec_fraction']) for r in rs):8.4f}")
    if name == "breakdown":
        _print_breakdown(out / name / "epochs.csv")
    return rc


def _print_breakdown(path):
    stage_sum = defaultdict(lambda: defaultdict(float))
    epochs = defaultdict(int)
    for r in read_csv(path):
        if int(r["total"]) == 0:
            continue
        epochs[r["value"]] += 1
        for s in STAGES:
            stage_sum[r["value"]][s] += float(r[s])
    print("\nmean commit time per non-empty epoch (virtual us)")
    print(f"{'zipf':>6} " + " ".join(f"{s[:-3]:>8}" for s in STAGES))
    for v, sums in stage_sum.items():
        print(f"{v:>6} " + " ".join(f"{sums[s] / epochs[v]:8.1f}" for s in STAGES))


def failover(seeds, out) -> int:
    base = load_config(CONFIGS / "failover.json")
    print("\nfailover: replica 0 (initial leader) crashes at 500 ms")
    print(f"{'seed':>5} {'max gap ms':>11} {'leaders':>8} {'committed':>10} oracle")
    rc = 0
    for seed in seeds:
        res = run_simulation(with_overrides(base, seed=seed))
        times = sorted({t for r in res.histories for t, _ in res.decision_times[r]})
        gap = max((b - a for a, b in zip(times, times[1:])), default=0) / 1000
        ok = res.oracle().ok
        rc |= 0 if ok else 1
        leaders = " ".join(str(x[1]) for x in res.leader_changes) or "-"
        print(f"{seed:>5} {gap:11.1f} {leaders:>8} {len(res.latencies_us):>10} "
              f"{'pass' if ok else 'FAIL'}")
    return rc


def main(argv=None) -> int:
    names = list(SWEEPS) + ["failover"]
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=names + ["all"])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--txns", type=int, default=1000)
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    todo = names if args.experiment == "all" else [args.experiment]
    rc = 0
    for name in todo:
        rc |= failover(seeds, out) if name == "failover" else sweep(name, seeds, args.txns, out,
                                                                  args.jobs)
    return rc


if __name__ == "__main__":
    sys.exit(main())
