"""Command-line front end.

    epochocc run --config cfg.json [--seeds 1,2,3] [--sweep latency=0,50,200] --out DIR
    epochocc check --history DIR/runs/x/history.bin --store DIR/runs/x/store.txt

``run`` exits 0 when every oracle check passes, 1 on an oracle failure and 2
on a bad config or manifest.  ``check`` exits 0 on pass, 1 on a violation and
2 when a dump cannot be read.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .codec import DecodeError
from .config import (ConfigError, SimConfig, config_from_dict, config_to_dict, load_config,
                     with_overrides)
from .metrics import NA, EPOCH_COLUMNS, METRICS_COLUMNS, metrics_row, write_csv
from .oracle import decode_history, replay
from .sim import run_simulation
from .storage import SnapshotStore

# axis name -> (dotted config path, value parser)
SWEEP_AXES = {
    "latency": ("latency.base_ms", float),
    "replicas": ("n", int),
    "zipf": ("workload.zipf", float),
    "epoch_interval": ("epoch_interval_ms", float),
    "batch_timeout": ("batch_timeout_ms", float),
}


@dataclass
class RunManifest:
    config: SimConfig
    config_path: str
    seeds: list[int]
    out: Path
    axis: str | None = None
    values: tuple = ()

    def points(self):
        """(axis value, config) per sweep point; a single point when not sweeping."""
        if self.axis is None:
            return [(None, self.config)]
        path, _ = SWEEP_AXES[self.axis]
        out = []
        for v in self.values:
            changes = {path: v}
            if self.axis == "replicas":
                changes["f"] = (v - 1) // 2
            try:
                out.append((v, with_overrides(self.config, **changes)))
            except ConfigError as e:
                raise ConfigError(f"--sweep {self.axis}={v}: {e}") from None
        return out


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: not a comma-separated integer list: {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds: empty list")
    return seeds


def parse_sweep(text: str) -> tuple[str, tuple]:
    axis, sep, rest = text.partition("=")
    axis = axis.strip()
    if not sep or axis not in SWEEP_AXES:
        raise ConfigError(f"--sweep: expected AXIS=v1,v2 with AXIS in {sorted(SWEEP_AXES)}")
    conv = SWEEP_AXES[axis][1]
    try:
        values = tuple(conv(v) for v in rest.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"--sweep {axis}: values must be {conv.__name__}") from None
    if not values:
        raise ConfigError(f"--sweep {axis}: no values")
    if any(v < 0 for v in values):
        raise ConfigError(f"--sweep {axis}: values must be non-negative")
    return axis, values


def _run_dir(out: Path, axis, value, seed) -> Path:
    name = f"seed{seed}" if axis is None else f"{axis}-{value}-seed{seed}"
    return out / "runs" / name


def _one(job):
    """Worker body: one (axis value, seed) run; returns CSV rows and the oracle verdict."""
    axis, value, seed, cfg_dict, run_dir = job
    cfg = config_from_dict(dict(cfg_dict, seed=seed))
    res = run_simulation(cfg)
    verdict = res.oracle()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "history.bin").write_bytes(res.history_bytes())
    ref = res.reference
    if ref is not None:
        res.stores[ref].dump(run_dir / "store.txt")
    else:
        SnapshotStore().dump(run_dir / "store.txt")
    if not verdict.ok:
        with open(run_dir / "counterexample.txt", "w") as fh:
            for p in verdict.problems:
                fh.write(f"{p}\n")
    label = axis or "none"
    shown = NA if value is None else str(value)
    row = metrics_row(label, shown, seed, res.summary(), verdict.ok)
    epochs = [[label, shown, str(seed)] + r.csv_row()
              for r in res.epoch_reports()]
    return row, epochs, verdict.ok, str(run_dir), (str(verdict.first()) if not verdict.ok else "")


def cmd_run(m: RunManifest, jobs: int = 1) -> int:
    jobs_list = []
    for value, cfg in m.points():
        d = config_to_dict(cfg)
        for seed in m.seeds:
            jobs_list.append((m.axis, value, seed, d, str(_run_dir(m.out, m.axis, value, seed))))
    m.out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_one, jobs_list))
    else:
        results = [_one(j) for j in jobs_list]
    rows, epoch_rows, failed = [], [], []
    for row, epochs, ok, run_dir, first in results:
        rows.append(row)
        epoch_rows += epochs
        if not ok:
            failed.append((run_dir, first))
    write_csv(m.out / "metrics.csv", METRICS_COLUMNS, rows)
    write_csv(m.out / "epochs.csv", EPOCH_COLUMNS, epoch_rows)
    print(f"{len(rows)} runs, {len(rows) - len(failed)} passed; wrote {m.out / 'metrics.csv'}")
    for run_dir, first in failed:
        print(f"oracle failure: {first}", file=sys.stderr)
        print(f"  counterexample: {Path(run_dir) / 'counterexample.txt'}", file=sys.stderr)
    return 1 if failed else 0


def cmd_check(history_path, store_path) -> int:
    try:
        history, initial = decode_history(Path(history_path).read_bytes())
        store = SnapshotStore.load(store_path)
    except (OSError, DecodeError, ValueError) as e:
        print(f"unreadable dump: {e}", file=sys.stderr)
        return 2
    res = replay(history, initial, stop_at_first=True)
    if not res.ok:
        p = res.first()
        print(f"FAIL {p}")
        print(f"first violating epoch: {p.epoch}; txn: {p.tid}")
        return 1
    want, got = list(res.final.items()), list(store.items())
    if want != got:
        print(f"FAIL store differs from serial replay of {len(history)} epochs: "
              f"{_first_store_diff(want, got)}")
        return 1
    print(f"ok: {len(history)} epochs, {res.txns} txns replay to the given store")
    return 0


def _first_store_diff(want, got) -> str:
    w = {k: (v, e) for k, v, e in want}
    g = {k: (v, e) for k, v, e in got}
    for k in sorted(set(w) | set(g)):
        if w.get(k) != g.get(k):
            return f"key {k!r}: replay {w.get(k)}, store {g.get(k)}"
    return "entry order"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epochocc")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run simulations and write metrics")
    r.add_argument("--config", required=True)
    r.add_argument("--seeds", help="comma-separated seeds (default: the config's seed)")
    r.add_argument("--sweep", help="AXIS=v1,v2,... with AXIS in " + ",".join(SWEEP_AXES))
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    c = sub.add_parser("check", help="replay a history dump against a store dump")
    c.add_argument("--history", required=True)
    c.add_argument("--store", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "check":
        return cmd_check(args.history, args.store)
    try:
        cfg = load_config(args.config)
        seeds = parse_seeds(args.seeds) if args.seeds else [cfg.seed]
        axis, values = parse_sweep(args.sweep) if args.sweep else (None, ())
        m = RunManifest(cfg, args.config, seeds, Path(args.out), axis, values)
        m.points()  # validate every sweep point before running anything
    except (OSError, ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return cmd_run(m, max(1, args.jobs))


if __name__ == "__main__":
    sys.exit(main())
