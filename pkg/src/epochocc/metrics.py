"""Run summaries and CSV output."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .commit import EpochCommitReport

NA = "NA"


def percentile(values, p: float):
    """Nearest-rank percentile; ``None`` for an empty sample."""
    if not values:
        return None
    xs = sorted(values)
    rank = max(1, math.ceil(p / 100 * len(xs)))
    return xs[rank - 1]


@dataclass
class RunSummary:
    committed: int
    duration_s: float
    throughput_tps: float
    p50_ms: float | None
    p95_ms: float | None
    p99_ms: float | None
    reexec_fraction: float | None
    epochs: int
    stale: int = 0
    conflicting: int = 0
    hc_routed: int = 0


def summarize(latencies_us, span_us: int, reports: list[EpochCommitReport]) -> RunSummary:
    lat = [x / 1000 for x in latencies_us]
    total = sum(r.total for r in reports)
    stale = sum(r.stale for r in reports)
    confl = sum(r.conflicting for r in reports)
    span_s = span_us / 1e6
    return RunSummary(
        committed=len(lat),
        duration_s=span_s,
        throughput_tps=len(lat) / span_s if span_s > 0 else 0.0,
        p50_ms=percentile(lat, 50),
        p95_ms=percentile(lat, 95),
        p99_ms=percentile(lat, 99),
        reexec_fraction=(stale + confl) / total if total else None,
        epochs=len(reports),
        stale=stale,
        conflicting=confl,
        hc_routed=sum(r.hc_routed for r in reports),
    )


METRICS_COLUMNS = ["axis", "value", "seed", "committed", "throughput_tps", "p50_ms",
                   "p95_ms", "p99_ms", "reexec_fraction", "epochs", "oracle"]


def _fmt(x, digits=3):
    if x is None:
        return NA
    if isinstance(x, float):
        return f"{x:.{digits}f}"
    return str(x)


def metrics_row(axis: str, value, seed: int, s: RunSummary, oracle_ok: bool) -> list[str]:
    return [axis, _fmt(value), str(seed), str(s.committed), _fmt(s.throughput_tps),
            _fmt(s.p50_ms), _fmt(s.p95_ms), _fmt(s.p99_ms), _fmt(s.reexec_fraction, 5),
            str(s.epochs), "pass" if oracle_ok else "fail"]


EPOCH_COLUMNS = ["axis", "value", "seed"] + EpochCommitReport.csv_header()


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
