"""One replica: executor, batch logs, consensus and commit pipeline wired together.

The replica never looks at a wall clock.  Everything it needs from the outside
comes through an ``env`` object::

    env.now() -> int                      virtual microseconds
    env.call_later(delay_us, fn)          one-shot timer
    env.send(dst, msg) / env.broadcast(msg)

and it reports upward through ``hooks`` (see :class:`ReplicaHooks`).
"""
from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass, field

from .commit import CommitPipeline, CostModel, GcState, HcController
from .conflict import DEFAULT_EXACT_CAP
from .cutlog import ConsensusConfig, CutDecision, make_consensus, make_proposal
from .dissemination import LogView
from .messages import Progress, Tag
from .occ import DEFAULT_BATCH_BYTES, DEFAULT_BATCH_TIMEOUT_US, Executor, Mode
from .procedures import REGISTRY, Registry
from .storage import SnapshotStore, Storage

log = logging.getLogger(__name__)


@dataclass
class HcConfig:
    enabled: bool = True
    threshold: float = 0.5
    sustain_us: int = 200_000
    cooldown_us: int = 1_000_000


@dataclass
class ReplicaConfig:
    n: int = 3
    f: int = 1
    batch_bytes: int = DEFAULT_BATCH_BYTES
    batch_timeout_us: int = DEFAULT_BATCH_TIMEOUT_US
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    consensus_kind: str = "raft"
    fetch_retry_us: int = 20_000
    gc_interval_us: int = 100_000
    solver: str = "exact"
    exact_cap: int = DEFAULT_EXACT_CAP
    reexec_workers: int = 1
    priorities: tuple[int, ...] | None = None
    hc: HcConfig = field(default_factory=HcConfig)
    cost: CostModel = field(default_factory=CostModel)
    sync_broadcast: bool = False  # hold new batches until our earlier ones commit
    count_source_ack: bool = False


class ReplicaHooks:
    """Callbacks a host may override; the defaults do nothing."""

    def on_decide(self, rid: int, d: CutDecision):
        pass

    def on_epoch(self, rid: int, report, record, now: int):
        pass

    def on_client_ack(self, rid: int, client_tag: int, tid, write_set, now: int):
        pass

    def on_mode(self, rid: int, mode: Mode, eid: int, now: int):
        pass


class Replica:
    def __init__(self, rid: int, cfg: ReplicaConfig, env, initial: SnapshotStore,
                 registry: Registry = REGISTRY, rng: random.Random | None = None,
                 hooks: ReplicaHooks | None = None):
        self.rid = rid
        self.cfg = cfg
        self.env = env
        self.hooks = hooks or ReplicaHooks()
        self.registry = registry
        self.storage = Storage(initial.copy())
        self.executor = Executor(rid, self.storage, registry, cfg.batch_bytes,
                                 cfg.batch_timeout_us)
        self.logview = LogView(rid, cfg.n, cfg.f, env, cfg.count_source_ack, clock=env.now)
        self.logview.on_batch = self._on_batch_stored
        self.consensus = make_consensus(cfg.consensus_kind, rid, cfg.n, env, cfg.consensus,
                                        rng or random.Random(rid), self._on_decide)
        self.pipeline = CommitPipeline(self.storage, registry, cfg.cost, cfg.solver,
                                       cfg.exact_cap, cfg.priorities, cfg.reexec_workers)
        self.hc = HcController(cfg.hc.threshold, cfg.hc.sustain_us, cfg.hc.cooldown_us,
                               cfg.hc.enabled)
        self.gc = GcState(cfg.n)
        self.decisions: deque[CutDecision] = deque()
        self.committed_cut = (-1,) * cfg.n
        self.committing = False
        self._finish_pending = None
        self.busy_until = 0
        self.history = []
        self.reports = []
        self._batch_timer_at: int | None = None
        self.truncated = 0

    # -- lifecycle -------------------------------------------------------------------

    def start(self):
        self.consensus.start()
        self._coordinator_loop()
        self._refetch_loop()
        self._gc_loop()

    def restart(self):
        """Resume after a crash: timers are gone, state is as it was."""
        self._batch_timer_at = None
        self.start()
        if self._finish_pending is not None:
            fn, self._finish_pending = self._finish_pending, None
            fn()
        self.logview.rebroadcast_unavailable()
        for rid, bid in sorted(self.logview.outstanding):
            self.logview.request(rid, bid)
        self._try_cut()
        self._pump()

    @property
    def last_eid(self) -> int:
        return self.storage.current_eid - 1

    # -- clients ---------------------------------------------------------------------

    def submit(self, proc, client_tag: int = 0):
        """Run a client transaction locally; ``None`` means it waits for the next epoch."""
        rec = self.executor.execute_transaction(proc, client_tag, self.env.now())
        self._after_append()
        return rec

    def _after_append(self):
        ex = self.executor
        if not ex.current_batch:
            return
        if ex.batch_bytes >= ex.size_threshold:
            self._try_cut()
        if ex.current_batch and self._batch_timer_at is None:
            due = ex.batch_started_at + ex.timeout_us
            self._batch_timer_at = due
            self.env.call_later(max(1, due - self.env.now()), self._batch_timer)

    def _batch_timer(self):
        self._batch_timer_at = None
        self._try_cut()
        ex = self.executor
        if ex.current_batch and not self._gated():
            self._after_append()

    def _gated(self) -> bool:
        if not self.cfg.sync_broadcast:
            return False
        return self.logview.last_committed[self.rid] < self.executor.current_bid - 1

    def _try_cut(self, force: bool = False):
        if self._gated():
            return
        b = self.executor.maybe_cut_batch(self.env.now(), force)
        if b is not None:
            self.logview.add_local_batch(b)

    # -- messages --------------------------------------------------------------------

    def deliver(self, m):
        t = m.tag
        lv = self.logview
        if t == Tag.BATCH:
            lv.on_batch_received(m.batch, m.src)
        elif t == Tag.ACK:
            lv.on_ack(m)
        elif t == Tag.POA:
            lv.on_poa(m)
        elif t == Tag.FETCH_REQ:
            lv.on_fetch_request(m)
        elif t == Tag.FETCH_RESP:
            lv.on_fetch_response(m)
        elif t == Tag.PROGRESS:
            self.gc.update(m.src, m.epoch)
        else:
            self.consensus.on_message(m)

    def on_crash_notice(self, rid: int):
        self.consensus.on_crash_notice(rid)

    def on_rejoin_notice(self, rid: int):
        self.consensus.on_rejoin_notice(rid)

    # -- periodic work -----------------------------------------------------------------

    def _coordinator_loop(self):
        if self.consensus.is_leader():
            p = make_proposal(self.consensus.last_cut(), self.logview.poa_heads)
            if p is not None:
                self.consensus.submit(p)
        self.env.call_later(self.cfg.consensus.epoch_interval_us, self._coordinator_loop)

    def _refetch_loop(self):
        self.logview.refetch(self.env.now(), self.cfg.fetch_retry_us)
        self.env.call_later(self.cfg.fetch_retry_us, self._refetch_loop)

    def _gc_loop(self):
        self.gc.update(self.rid, self.last_eid)
        self.env.broadcast(Progress(self.rid, self.last_eid))
        wm = self.gc.watermark()
        if wm >= 0:
            self.truncated += self.logview.truncate(wm)
        self.env.call_later(self.cfg.gc_interval_us, self._gc_loop)

    # -- commit ------------------------------------------------------------------------

    def _on_decide(self, d: CutDecision):
        self.hooks.on_decide(self.rid, d)
        self.decisions.append(d)
        self._pump()

    def _on_batch_stored(self, rid, bid):
        if self.decisions and not self.committing:
            self._pump()

    def _pump(self):
        if self.committing or not self.decisions:
            return
        d = self.decisions[0]
        lv = self.logview
        ranges = [(r, p + 1, c) for r, (p, c) in enumerate(zip(self.committed_cut, d.cut_bids))]
        missing = []
        for r, lo, hi in ranges:
            for b in lv.missing(r, lo, hi):
                missing.append((r, b))
        if missing:
            for r, b in missing:
                if (r, b) not in lv.outstanding:
                    lv.request(r, b)
            return
        self.decisions.popleft()
        batches = [lv.logs[r][b].batch for r, lo, hi in ranges for b in range(lo, hi + 1)]
        report, record = self.pipeline.run_epoch(d.cut_bids, batches)
        assert report.eid == d.epoch, f"epoch skew {report.eid} != {d.epoch}"
        for r, lo, hi in ranges:
            for b in range(lo, hi + 1):
                lv.mark_committed(r, b, d.epoch)
        self.committed_cut = d.cut_bids
        self.history.append(record)
        self.reports.append(report)
        now = self.env.now()
        cost = max(1, int(report.duration_us))
        self.busy_until = now + cost
        self.committing = True
        self._finish_pending = lambda: self._finish(report, record)
        self.env.call_later(cost, self._finish_timer)

    def _finish_timer(self):
        fn, self._finish_pending = self._finish_pending, None
        if fn is not None:
            fn()

    def _finish(self, report, record):
        now = self.env.now()
        for t in record.txns():
            if t.tid.rid == self.rid:
                self.hooks.on_client_ack(self.rid, t.client_tag, t.tid, t.write_set, now)
        self.hooks.on_epoch(self.rid, report, record, now)
        mode = self.hc.update(report, now)
        if mode is not None:
            self.hooks.on_mode(self.rid, mode, report.eid, now)
            b = self.executor.set_mode(mode, now)
            if b is not None:
                self.logview.add_local_batch(b)
        self.committing = False
        for proc, tag in self.executor.take_deferred():
            self.executor.execute_transaction(proc, tag, now)
        self._try_cut()
        self._after_append()
        self._pump()
