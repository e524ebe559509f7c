"""Deterministic lock scheduling for re-executing invalidated transactions.

All lock requests are enqueued in the fixed global order before anything
runs, so the wait-for relation follows that order and cannot cycle.  Workers
may finish in any wall-clock order; the outcome is the same as running the
list serially.
"""
from __future__ import annotations

from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass

from .core import TxnRecord
from .procedures import REGISTRY, Registry, TxnContext

READ, WRITE = "r", "w"


@dataclass(slots=True)
class LockRequest:
    txn: int
    mode: str
    granted: bool = False


class LockManager:
    """Per-key FIFO queues with shared reads and exclusive writes."""

    def __init__(self):
        self.queues: dict[bytes, deque[LockRequest]] = {}
        self.counters: dict[int, int] = {}
        self.keys: dict[int, list[bytes]] = {}

    def enqueue(self, txn: int, reads, writes):
        writes = set(writes)
        keys = sorted(set(reads) | writes)
        self.keys[txn] = keys
        waiting = 0
        for k in keys:
            q = self.queues.setdefault(k, deque())
            mode = WRITE if k in writes else READ
            req = LockRequest(txn, mode)
            if not q or (mode == READ and all(r.mode == READ for r in q)):
                req.granted = True
            else:
                waiting += 1
            q.append(req)
        self.counters[txn] = waiting
        return waiting == 0

    def release(self, txn: int) -> list[int]:
        """Drop ``txn``'s locks; returns txns that just became runnable."""
        ready = []
        for k in self.keys.pop(txn):
            q = self.queues[k]
            for i, r in enumerate(q):
                if r.txn == txn:
                    del q[i]
                    break
            if not q:
                del self.queues[k]
                continue
            for r in q:
                if r.mode == WRITE and r is not q[0]:
                    break
                if not r.granted:
                    r.granted = True
                    self.counters[r.txn] -= 1
                    assert self.counters[r.txn] >= 0
                    if self.counters[r.txn] == 0:
                        ready.append(r.txn)
                if r.mode == WRITE:
                    break
        del self.counters[txn]
        return ready

    def idle(self) -> bool:
        return not self.queues


def lock_sets(t: TxnRecord, registry: Registry = REGISTRY):
    """Declared (read keys, write keys): static probe joined with the recorded sets."""
    pr, pw = registry.probe(t.input)
    reads = set(pr) | set(t.read_keys)
    writes = set(pw) | set(t.write_keys)
    return reads, writes


def _run_one(t: TxnRecord, store, reads, writes, registry):
    def reader(k):
        return store.get(k), None
    ctx = TxnContext(reader, allowed_reads=reads | writes, allowed_writes=writes)
    registry.run(t.input, ctx)
    return tuple(ctx.writes.items())


def schedule_and_execute(invalid: list[TxnRecord], store, eid: int,
                         registry: Registry = REGISTRY, workers: int = 1):
    """Re-execute ``invalid`` (already in global order) against ``store``.

    Writes land in ``store`` stamped with ``eid``.  Returns
    ``[(tid, write_set), ...]`` in schedule order.
    """
    n = len(invalid)
    if n == 0:
        return []
    sets = [lock_sets(t, registry) for t in invalid]
    if workers <= 1:
        # one worker taking the lowest ready index runs exactly in index order
        out = []
        for t, (r, w) in zip(invalid, sets):
            writes = _run_one(t, store, r, w, registry)
            store.apply(writes, eid)
            out.append((t.tid, writes))
        return out
    lm = LockManager()
    ready: list[int] = []
    for i, (r, w) in enumerate(sets):
        if lm.enqueue(i, r, w):
            ready.append(i)
    results: list[tuple | None] = [None] * n

    def finish(i, writes):
        store.apply(writes, eid)
        results[i] = (invalid[i].tid, writes)
        ready.extend(lm.release(i))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        running = {}
        while ready or running:
            ready.sort()
            for i in ready:
                running[pool.submit(_run_one, invalid[i], store, *sets[i], registry)] = i
            ready.clear()
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in sorted(done, key=running.get):
                i = running.pop(fut)
                finish(i, fut.result())
    assert lm.idle() and all(r is not None for r in results), "lock schedule stalled"
    return results


def serial_replay(txns: list[TxnRecord], values: dict, registry: Registry = REGISTRY):
    """Reference: run txns one after another over a flat key->value dict."""
    out = []
    for t in txns:
        ctx = TxnContext(lambda k: (values.get(k), None))
        registry.run(t.input, ctx)
        for k, v in ctx.writes.items():
            if v is None:
                values.pop(k, None)
            else:
                values[k] = v
        out.append((t.tid, tuple(ctx.writes.items())))
    return out
