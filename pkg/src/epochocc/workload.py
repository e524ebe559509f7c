"""Workload generators (YCSB-A, a micro TPC-C, scripted) and their initial stores."""
from __future__ import annotations

import bisect
import itertools
import random
from functools import lru_cache

from .procedures import make
from .storage import SnapshotStore


def ycsb_key(i: int) -> str:
    return f"k{i:09d}"


@lru_cache(maxsize=32)
def _zipf_cdf(n: int, s: float) -> tuple[float, ...]:
    acc = list(itertools.accumulate(1.0 / (i + 1) ** s for i in range(n)))
    total = acc[-1]
    return tuple(a / total for a in acc)


class ZipfSampler:
    """Ranks 0..n-1 with P(i) proportional to 1/(i+1)**s; s=0 is uniform."""

    def __init__(self, n: int, s: float):
        self.n = n
        self.s = s
        self.cdf = None if s == 0 else _zipf_cdf(n, s)

    def sample(self, rng: random.Random) -> int:
        if self.cdf is None:
            return rng.randrange(self.n)
        i = bisect.bisect_left(self.cdf, rng.random())
        return min(i, self.n - 1)


class Workload:
    """Produces procedures for closed-loop clients; one instance per run."""

    def __init__(self, cfg, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self._nonce = itertools.count()
        n_keys = cfg.hot_keys if cfg.hot_keys else cfg.records
        self.sampler = ZipfSampler(min(n_keys, cfg.records), cfg.zipf)

    def initial_store(self) -> SnapshotStore:
        c = self.cfg
        if c.kind == "ycsb_a":
            return SnapshotStore((ycsb_key(i).encode(), b"v%d" % i) for i in range(c.records))
        if c.kind == "micro_tpcc":
            return SnapshotStore(tpcc_initial_items(c, self.seed))
        return SnapshotStore()

    def next(self, rng: random.Random):
        c = self.cfg
        if c.kind == "ycsb_a":
            return self.ycsb(rng)
        if c.kind == "micro_tpcc":
            return self.tpcc(rng)
        raise ValueError("custom workloads are scripted, not sampled")

    def ycsb(self, rng):
        c = self.cfg
        ops = []
        for _ in range(c.ops_per_txn):
            key = ycsb_key(self.sampler.sample(rng))
            if rng.random() < c.read_fraction:
                ops.append(["r", key])
            else:
                ops.append(["w", key, f"{next(self._nonce)}"])
        return make("ycsb", ops=ops, size=c.value_size)

    def tpcc(self, rng):
        c = self.cfg
        w = rng.randrange(c.warehouses)
        d = rng.randrange(c.districts)
        cust = rng.randrange(c.customers)
        if rng.random() < 0.5:
            items = rng.sample(range(c.items), min(5, c.items))
            lines = [[i, rng.randint(1, 10)] for i in sorted(items)]
            return make("tpcc_new_order", w=w, d=d, c=cust, lines=lines,
                        nonce=f"{next(self._nonce)}")
        return make("tpcc_payment", w=w, d=d, c=cust, amount=rng.randint(1, 5000))


INITIAL_STOCK = 100_000


def tpcc_initial_items(c, seed: int = 0):
    rng = random.Random(f"{seed}:tpcc-prices")
    for item in range(c.items):
        yield f"i:{item}:price".encode(), b"%d" % rng.randint(1, 100)
    for w in range(c.warehouses):
        yield f"w:{w}:ytd".encode(), b"0"
        for item in range(c.items):
            yield f"s:{w}:{item}:qty".encode(), b"%d" % INITIAL_STOCK
        for d in range(c.districts):
            yield f"d:{w}:{d}:next_o_id".encode(), b"1"
            yield f"d:{w}:{d}:ytd".encode(), b"0"
            for cust in range(c.customers):
                yield f"c:{w}:{d}:{cust}:balance".encode(), b"0"


def script_steps(cfg):
    """Custom workload steps as (at_us, replica, Procedure), in file order per time."""
    out = []
    for step in cfg.script or ():
        proc = make(step["proc"], **step.get("args", {}))
        out.append((int(round(float(step.get("at_ms", 0)) * 1000)), step["replica"], proc))
    return sorted(out, key=lambda s: s[0])
