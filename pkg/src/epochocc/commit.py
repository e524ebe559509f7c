"""Per-epoch commit: filter, apply valid writes, re-execute the rest, advance.

Also holds the adaptive high-contention controller and the garbage
collection watermark.  Stage durations come from a deterministic cost model
(work units times per-unit virtual microseconds), so epoch reports are
reproducible bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import astuple, dataclass, field, fields

from .conflict import DEFAULT_EXACT_CAP, filter_conflicts
from .core import Batch, GlobalOrderKey, Procedure, TxnId
from .detlock import schedule_and_execute
from .occ import Mode
from .procedures import REGISTRY, Registry
from .storage import Storage

log = logging.getLogger(__name__)


@dataclass
class CostModel:
    """Virtual microseconds charged per unit of commit work."""

    chain_per_txn: float = 1.0
    stale_per_read: float = 0.5
    graph_per_key: float = 0.5
    mwis_per_node: float = 0.5
    apply_per_write: float = 1.0
    reexec_per_txn: float = 10.0
    reexec_per_op: float = 1.0


@dataclass
class EpochCommitReport:
    eid: int
    total: int = 0
    valid: int = 0
    stale: int = 0
    conflicting: int = 0
    re_executed: int = 0
    hc_routed: int = 0
    chain_us: float = 0.0
    stale_us: float = 0.0
    graph_us: float = 0.0
    mwis_us: float = 0.0
    apply_us: float = 0.0
    reexec_us: float = 0.0

    @property
    def duration_us(self) -> float:
        return (self.chain_us + self.stale_us + self.graph_us + self.mwis_us
                + self.apply_us + self.reexec_us)

    @property
    def reexec_fraction(self) -> float | None:
        """Share of checked txns that had to be re-executed; None when nothing was checked."""
        checked = self.total - self.hc_routed
        if checked <= 0:
            return None
        return (self.stale + self.conflicting) / checked

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list[str]:
        return [f"{v:.3f}" if isinstance(v, float) else str(v) for v in astuple(self)]


@dataclass(frozen=True, slots=True)
class CommittedTxn:
    tid: TxnId
    input: Procedure
    write_set: tuple[tuple[bytes, bytes | None], ...]
    client_tag: int = 0


@dataclass
class EpochRecord:
    """One epoch of the serial history: valid set first, then re-executions."""

    eid: int
    cut: tuple[int, ...]
    valid: list[CommittedTxn] = field(default_factory=list)
    reexec: list[CommittedTxn] = field(default_factory=list)
    valid_groups: list[list[TxnId]] = field(default_factory=list)  # chains of the valid set

    def txns(self):
        yield from self.valid
        yield from self.reexec


class CommitPipeline:
    def __init__(self, storage: Storage, registry: Registry = REGISTRY,
                 cost: CostModel | None = None, solver: str = "exact",
                 exact_cap: int = DEFAULT_EXACT_CAP, priorities=None, workers: int = 1):
        self.storage = storage
        self.registry = registry
        self.cost = cost or CostModel()
        self.solver = solver
        self.exact_cap = exact_cap
        self.priorities = priorities
        self.workers = workers
        self.mwis_fallbacks = 0

    def run_epoch(self, cut, batches: list[Batch]) -> tuple[EpochCommitReport, EpochRecord]:
        """Commit ``batches`` (canonical rid/bid order) as the current epoch."""
        snap = self.storage.snapshot
        eid = snap.current_eid
        c = self.cost
        fr = filter_conflicts(batches, snap, solver=self.solver, exact_cap=self.exact_cap)
        self.mwis_fallbacks += fr.mwis_fallbacks
        writes = 0
        for t in fr.valid:
            writes += snap.apply(t.write_set, eid)
        invalid = sorted(fr.stale + fr.conflicting + fr.hc_routed,
                         key=lambda t: GlobalOrderKey.of(t.tid, self.priorities))
        results = schedule_and_execute(invalid, snap, eid, self.registry, self.workers)
        reexec_ops = sum(len(t.read_set) + len(t.write_set) for t in invalid)
        self.storage.advance_epoch()
        rep = EpochCommitReport(
            eid=eid,
            total=fr.total,
            valid=len(fr.valid),
            stale=len(fr.stale),
            conflicting=len(fr.conflicting),
            re_executed=len(invalid),
            hc_routed=len(fr.hc_routed),
            chain_us=c.chain_per_txn * fr.chain_ops,
            stale_us=c.stale_per_read * fr.stale_ops,
            graph_us=c.graph_per_key * fr.graph_ops,
            mwis_us=c.mwis_per_node * fr.mwis_ops,
            apply_us=c.apply_per_write * writes,
            reexec_us=c.reexec_per_txn * len(invalid) + c.reexec_per_op * reexec_ops,
        )
        rec = EpochRecord(
            eid, tuple(cut),
            [CommittedTxn(t.tid, t.input, t.write_set, t.client_tag) for t in fr.valid],
            [CommittedTxn(t.tid, t.input, w, t.client_tag)
             for t, (_, w) in zip(invalid, results)],
            [ch.tids for ch in fr.valid_chains],
        )
        return rep, rec


@dataclass
class HcController:
    """Flips into high-contention mode after a sustained high re-execution share.

    The share of each epoch is ``(stale + conflicting) / (total - hc_routed)``;
    epochs with nothing checked leave the state untouched.  Leaving the mode
    happens after ``cooldown_us`` so the share can be measured again.
    """

    threshold: float = 0.5
    sustain_us: int = 200_000
    cooldown_us: int = 1_000_000
    enabled: bool = True
    mode: Mode = Mode.NORMAL
    above_since: int | None = None
    entered_at: int | None = None
    transitions: list[tuple[int, int, Mode]] = field(default_factory=list)  # (time, eid, mode)

    def update(self, report: EpochCommitReport, now: int) -> Mode | None:
        """Feed one epoch report; returns the new mode if it changed."""
        if not self.enabled:
            return None
        if self.mode is Mode.HIGH_CONTENTION:
            if now - self.entered_at >= self.cooldown_us:
                return self._switch(Mode.NORMAL, now, report.eid)
            return None
        frac = report.reexec_fraction
        if frac is None:
            return None
        if frac > self.threshold:
            if self.above_since is None:
                self.above_since = now
            if now - self.above_since >= self.sustain_us:
                return self._switch(Mode.HIGH_CONTENTION, now, report.eid)
        else:
            self.above_since = None
        return None

    def _switch(self, mode, now, eid):
        self.mode = mode
        self.above_since = None
        self.entered_at = now if mode is Mode.HIGH_CONTENTION else None
        self.transitions.append((now, eid, mode))
        log.debug("contention mode -> %s at eid %d", mode.value, eid)
        return mode


class GcState:
    """Latest committed epoch reported by each replica; truncation below the minimum.

    Replicas that are down keep their last report, so batches they may still
    need stay fetchable when they come back.
    """

    def __init__(self, n: int):
        self.progress = {r: -1 for r in range(n)}

    def update(self, rid: int, epoch: int):
        if epoch > self.progress[rid]:
            self.progress[rid] = epoch

    def watermark(self) -> int:
        return min(self.progress.values())
