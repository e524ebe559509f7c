"""Optimistic local execution, dependency tracking and batch cutting."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from .codec import BATCH_HEADER_SIZE, txn_size
from .core import Batch, BatchId, Procedure, ReadSource, SourceKind, TxnId, TxnRecord
from .procedures import REGISTRY, Registry, TxnContext
from .storage import Storage

log = logging.getLogger(__name__)

DEFAULT_BATCH_BYTES = 4 * 1024 * 1024
DEFAULT_BATCH_TIMEOUT_US = 5_000
MAX_LOCAL_RETRIES = 10


class Mode(Enum):
    NORMAL = "normal"
    HIGH_CONTENTION = "high_contention"


@dataclass
class ReadPhase:
    """Outcome of running a procedure against snapshot + overlay, before install."""

    proc: Procedure
    client_tag: int
    reads: dict  # key -> (value, ReadSource)
    writes: dict  # key -> value | None


class Executor:
    """One replica's optimistic executor.

    ``execute_transaction`` = read phase, validate, install.  The last two run
    under the storage mutex so the replica's local history is serial in
    ``seq`` order.
    """

    def __init__(self, rid: int, storage: Storage, registry: Registry = REGISTRY,
                 size_threshold: int = DEFAULT_BATCH_BYTES,
                 timeout_us: int = DEFAULT_BATCH_TIMEOUT_US):
        self.rid = rid
        self.storage = storage
        self.registry = registry
        self.size_threshold = size_threshold
        self.timeout_us = timeout_us
        self.mode = Mode.NORMAL
        self.next_seq = 0
        self.current_bid = 0
        self.current_batch: list[TxnRecord] = []
        self.batch_started_at: int | None = None
        self.batch_bytes = BATCH_HEADER_SIZE
        self.deferred: list[tuple[Procedure, int]] = []
        self.validation_failures = 0

    # -- normal mode -----------------------------------------------------------

    def read_phase(self, proc: Procedure, client_tag: int = 0) -> ReadPhase:
        ctx = TxnContext(self.storage.read)
        self.registry.run(proc, ctx)
        return ReadPhase(proc, client_tag, ctx.reads, ctx.writes)

    def validate(self, rp: ReadPhase) -> bool:
        """Backward validation: every read's provenance must be unchanged."""
        for key, (_, src) in rp.reads.items():
            if self.storage.read(key)[1] != src:
                return False
        return True

    def install(self, rp: ReadPhase, now: int = 0) -> TxnRecord:
        tid = TxnId(self.rid, self.next_seq)
        self.next_seq += 1
        read_set = tuple((k, src) for k, (_, src) in rp.reads.items())
        deps = frozenset(src.writer for _, src in read_set if src.kind == SourceKind.TEMP)
        write_set = tuple(rp.writes.items())
        for k, v in write_set:
            self.storage.temp_write(k, v, tid)
        rec = TxnRecord(tid, rp.proc, read_set, write_set, deps, rp.client_tag)
        self._append(rec, now)
        return rec

    def execute_transaction(self, proc: Procedure, client_tag: int = 0,
                            now: int = 0) -> TxnRecord | None:
        """Run ``proc`` optimistically; ``None`` means it was deferred to the next epoch."""
        if self.mode is not Mode.NORMAL:
            return self.probe_transaction(proc, client_tag, now)
        for _ in range(MAX_LOCAL_RETRIES):
            rp = self.read_phase(proc, client_tag)
            with self.storage.lock:
                if self.validate(rp):
                    return self.install(rp, now)
            self.validation_failures += 1
        log.debug("replica %d deferring txn after %d local retries", self.rid, MAX_LOCAL_RETRIES)
        self.deferred.append((proc, client_tag))
        return None

    def take_deferred(self):
        out, self.deferred = self.deferred, []
        return out

    # -- high-contention mode ----------------------------------------------------

    def probe_static_sets(self, proc: Procedure):
        return self.registry.probe(proc)

    def probe_transaction(self, proc: Procedure, client_tag: int = 0, now: int = 0) -> TxnRecord:
        reads, writes = self.probe_static_sets(proc)
        tid = TxnId(self.rid, self.next_seq)
        self.next_seq += 1
        rec = TxnRecord(
            tid, proc,
            tuple((k, ReadSource.probe()) for k in dict.fromkeys(reads)),
            tuple((k, None) for k in dict.fromkeys(writes)),
            frozenset(), client_tag)
        self._append(rec, now)
        return rec

    def set_mode(self, mode: Mode, now: int = 0) -> Batch | None:
        """Switch mode; a non-empty batch of the old mode is emitted first."""
        if mode is self.mode:
            return None
        out = self.maybe_cut_batch(now, force=True)
        self.mode = mode
        return out

    # -- batching ------------------------------------------------------------------

    def _append(self, rec: TxnRecord, now: int):
        if not self.current_batch:
            self.batch_started_at = now
        self.current_batch.append(rec)
        self.batch_bytes += txn_size(rec)

    def batch_due(self, now: int) -> bool:
        if not self.current_batch:
            return False
        return (self.batch_bytes >= self.size_threshold
                or now - self.batch_started_at >= self.timeout_us)

    def maybe_cut_batch(self, now: int, force: bool = False) -> Batch | None:
        if not self.current_batch or not (force or self.batch_due(now)):
            return None
        b = Batch(BatchId(self.rid, self.current_bid), tuple(self.current_batch),
                  self.mode is Mode.HIGH_CONTENTION)
        self.current_bid += 1
        self.current_batch = []
        self.batch_started_at = None
        self.batch_bytes = BATCH_HEADER_SIZE
        return b
