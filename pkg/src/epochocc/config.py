"""Simulation configuration: JSON in, validated dataclasses out.

Durations in the JSON document are milliseconds (floats allowed); inside the
package everything is integer microseconds.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .commit import CostModel
from .cutlog import ConsensusConfig
from .replica import HcConfig, ReplicaConfig


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` names the offending field."""


def ms(x) -> int:
    return int(round(float(x) * 1000))


@dataclass
class LatencyConfig:
    base_ms: float = 0.0
    jitter_ms: float = 0.0
    # optional n x n matrix of base latencies overriding base_ms
    matrix_ms: list[list[float]] | None = None


@dataclass
class CrashEvent:
    replica: int
    at_ms: float
    rejoin_ms: float | None = None


@dataclass
class WorkloadConfig:
    kind: str = "ycsb_a"
    records: int = 10_000
    ops_per_txn: int = 10
    read_fraction: float = 0.5
    zipf: float = 0.0
    clients_per_replica: int = 4
    txns: int = 1000           # total across all clients; 0 means unbounded until duration
    think_ms: float = 5.0      # mean of the exponential think time
    value_size: int = 16
    warehouses: int = 4
    districts: int = 10
    customers: int = 30
    items: int = 100
    hot_keys: int = 0          # >0 confines every op to this many keys
    script: list[dict] | None = None  # custom: [{"at_ms", "replica", "proc", "args"}]


@dataclass
class HcSection:
    enabled: bool = True
    threshold: float = 0.5
    sustain_ms: float = 200.0
    cooldown_ms: float = 1000.0


@dataclass
class SimConfig:
    n: int = 3
    f: int = 1
    seed: int = 0
    duration_ms: float = 120_000.0     # hard stop in virtual time
    drain_ms: float = 10_000.0         # extra time for in-flight txns once clients stop
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    crashes: list[CrashEvent] = field(default_factory=list)
    epoch_interval_ms: float = 15.0
    batch_timeout_ms: float = 5.0
    batch_bytes: int = 4 * 1024 * 1024
    heartbeat_ms: float = 400.0
    election_timeout_ms: list[float] = field(default_factory=lambda: [800.0, 1600.0])
    ack_wait_ms: float = 50.0
    fetch_retry_ms: float | None = None  # default: twice the mean round trip
    gc_interval_ms: float = 100.0
    failure_detect_ms: float = 1000.0
    consensus: str = "raft"
    solver: str = "exact"
    exact_cap: int = 64
    reexec_workers: int = 1
    priorities: list[int] | None = None
    hc: HcSection = field(default_factory=HcSection)
    cost: CostModel = field(default_factory=CostModel)
    sync_broadcast: bool = False
    count_source_ack: bool = False
    check_invariants: bool = True

    # -- derived ---------------------------------------------------------------------

    def base_latency_ms(self, a: int, b: int) -> float:
        if self.latency.matrix_ms is not None:
            return float(self.latency.matrix_ms[a][b])
        return float(self.latency.base_ms)

    def mean_rtt_us(self) -> int:
        if self.n < 2:
            return 0
        pairs = [(a, b) for a in range(self.n) for b in range(self.n) if a != b]
        one_way = sum(self.base_latency_ms(a, b) for a, b in pairs) / len(pairs)
        return ms(2 * (one_way + self.latency.jitter_ms / 2))

    def replica_config(self) -> ReplicaConfig:
        retry = (ms(self.fetch_retry_ms) if self.fetch_retry_ms is not None
                 else max(1000, 2 * self.mean_rtt_us()))
        return ReplicaConfig(
            n=self.n, f=self.f,
            batch_bytes=self.batch_bytes,
            batch_timeout_us=ms(self.batch_timeout_ms),
            consensus=ConsensusConfig(
                epoch_interval_us=ms(self.epoch_interval_ms),
                heartbeat_us=ms(self.heartbeat_ms),
                election_timeout_min_us=ms(self.election_timeout_ms[0]),
                election_timeout_max_us=ms(self.election_timeout_ms[1]),
                ack_wait_us=ms(self.ack_wait_ms)),
            consensus_kind=self.consensus,
            fetch_retry_us=retry,
            gc_interval_us=ms(self.gc_interval_ms),
            solver=self.solver,
            exact_cap=self.exact_cap,
            reexec_workers=self.reexec_workers,
            priorities=tuple(self.priorities) if self.priorities is not None else None,
            hc=HcConfig(self.hc.enabled, self.hc.threshold, ms(self.hc.sustain_ms),
                        ms(self.hc.cooldown_ms)),
            cost=self.cost,
            sync_broadcast=self.sync_broadcast,
            count_source_ack=self.count_source_ack,
        )

    # -- validation ------------------------------------------------------------------

    def validate(self) -> "SimConfig":
        def need(cond, path, msg):
            if not cond:
                raise ConfigError(f"{path}: {msg}")

        need(self.n >= 1, "n", "must be >= 1")
        need(self.f >= 0, "f", "must be >= 0")
        need(self.n >= 2 * self.f + 1, "n", f"n={self.n} < 2f+1 with f={self.f}")
        need(self.duration_ms > 0, "duration_ms", "must be positive")
        need(self.drain_ms >= 0, "drain_ms", "must be non-negative")
        need(self.epoch_interval_ms > 0, "epoch_interval_ms", "must be positive")
        need(self.batch_timeout_ms > 0, "batch_timeout_ms", "must be positive")
        need(self.batch_bytes > 0, "batch_bytes", "must be positive")
        need(self.gc_interval_ms > 0, "gc_interval_ms", "must be positive")
        need(self.failure_detect_ms >= 0, "failure_detect_ms", "must be non-negative")
        need(self.fetch_retry_ms is None or self.fetch_retry_ms > 0, "fetch_retry_ms",
             "must be positive")
        need(len(self.election_timeout_ms) == 2
             and self.heartbeat_ms < self.election_timeout_ms[0] <= self.election_timeout_ms[1],
             "election_timeout_ms", "must be [lo, hi] with heartbeat_ms < lo <= hi")
        need(self.ack_wait_ms >= 0, "ack_wait_ms", "must be non-negative")
        need(self.consensus in ("raft", "sequencer"), "consensus", "raft or sequencer")
        need(self.solver in ("exact", "greedy"), "solver", "exact or greedy")
        need(self.exact_cap >= 1, "exact_cap", "must be >= 1")
        need(self.reexec_workers >= 1, "reexec_workers", "must be >= 1")
        if self.priorities is not None:
            need(len(self.priorities) == self.n, "priorities", "needs one entry per replica")
        need(0 <= self.hc.threshold <= 1, "hc.threshold", "must lie in [0, 1]")
        need(self.hc.sustain_ms >= 0 and self.hc.cooldown_ms >= 0, "hc",
             "durations must be non-negative")
        lat = self.latency
        need(lat.base_ms >= 0, "latency.base_ms", "must be non-negative")
        need(lat.jitter_ms >= 0, "latency.jitter_ms", "must be non-negative")
        if lat.matrix_ms is not None:
            need(len(lat.matrix_ms) == self.n and all(len(r) == self.n for r in lat.matrix_ms),
                 "latency.matrix_ms", f"must be {self.n}x{self.n}")
            need(all(x >= 0 for r in lat.matrix_ms for x in r), "latency.matrix_ms",
                 "entries must be non-negative")
        w = self.workload
        need(w.kind in ("ycsb_a", "micro_tpcc", "custom"), "workload.kind",
             "ycsb_a, micro_tpcc or custom")
        need(w.records > 0, "workload.records", "must be positive")
        need(w.ops_per_txn > 0, "workload.ops_per_txn", "must be positive")
        need(0 <= w.read_fraction <= 1, "workload.read_fraction", "must lie in [0, 1]")
        need(w.zipf >= 0, "workload.zipf", "must be >= 0")
        need(w.clients_per_replica >= 0, "workload.clients_per_replica", "must be >= 0")
        need(w.txns >= 0, "workload.txns", "must be >= 0")
        need(w.think_ms >= 0, "workload.think_ms", "must be >= 0")
        need(w.value_size > 0, "workload.value_size", "must be positive")
        need(min(w.warehouses, w.districts, w.customers, w.items) > 0, "workload",
             "tpcc scale parameters must be positive")
        need(w.hot_keys >= 0, "workload.hot_keys", "must be >= 0")
        if w.kind == "custom":
            need(w.script is not None, "workload.script", "required for custom workloads")
            for i, step in enumerate(w.script):
                need(isinstance(step, dict) and "proc" in step and "replica" in step,
                     f"workload.script[{i}]", "needs proc and replica")
                need(0 <= step["replica"] < self.n, f"workload.script[{i}].replica",
                     "out of range")
        self._validate_crashes(need)
        return self

    def _validate_crashes(self, need):
        spans = []
        for i, c in enumerate(self.crashes):
            p = f"crashes[{i}]"
            need(0 <= c.replica < self.n, f"{p}.replica", "out of range")
            need(c.at_ms >= 0, f"{p}.at_ms", "must be non-negative")
            need(c.rejoin_ms is None or c.rejoin_ms > c.at_ms, f"{p}.rejoin_ms",
                 "must come after at_ms")
            spans.append((c.at_ms, float("inf") if c.rejoin_ms is None else c.rejoin_ms,
                          c.replica))
        for i, (a, b, r) in enumerate(spans):
            for a2, b2, r2 in spans[i + 1:]:
                need(r != r2 or b <= a2 or b2 <= a, "crashes",
                     f"replica {r} has overlapping crash windows")
        points = sorted({a for a, _, _ in spans})
        for t in points:
            down = {r for a, b, r in spans if a <= t < b}
            need(len(down) <= self.f, "crashes",
                 f"{len(down)} replicas down at {t} ms exceeds f={self.f}")


# -- JSON ------------------------------------------------------------------------------

_NESTED = {
    "latency": LatencyConfig,
    "workload": WorkloadConfig,
    "hc": HcSection,
    "cost": CostModel,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in data.items():
        p = f"{path}.{k}" if path else k
        if k not in known:
            raise ConfigError(f"{p}: unknown field")
        if cls is SimConfig and k in _NESTED:
            v = _build(_NESTED[k], v, p)
        elif cls is SimConfig and k == "crashes":
            if not isinstance(v, list):
                raise ConfigError(f"{p}: expected a list")
            v = [_build(CrashEvent, c, f"{p}[{i}]") for i, c in enumerate(v)]
        else:
            _check_scalar(known[k], v, p)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def _check_scalar(f, v, path):
    t = str(f.type)
    if t.startswith("bool"):
        ok = isinstance(v, bool)
    elif t.startswith("int"):
        ok = isinstance(v, int) and not isinstance(v, bool)
    elif t.startswith("float"):
        ok = (isinstance(v, (int, float)) and not isinstance(v, bool)) or (
            v is None and "None" in t)
    elif t.startswith("str"):
        ok = isinstance(v, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {t}, got {type(v).__name__}")


def config_from_dict(data: dict) -> SimConfig:
    return _build(SimConfig, data, "").validate()


def loads_config(text: str) -> SimConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    return config_from_dict(data)


def load_config(path) -> SimConfig:
    with open(path) as fh:
        return loads_config(fh.read())


def config_to_dict(cfg: SimConfig) -> dict:
    return asdict(cfg)


def with_overrides(cfg: SimConfig, **changes) -> SimConfig:
    """Copy with dotted-path overrides, e.g. ``{"workload.zipf": 0.9}``."""
    d = config_to_dict(cfg)
    for path, v in changes.items():
        node = d
        parts = path.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = v
    return config_from_dict(d)
