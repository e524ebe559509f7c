"""Per-replica batch logs, acknowledgment quorums and Proof-of-Availability.

A :class:`LogView` is driven by its replica's event loop.  Outgoing messages
go through ``net.send(dst, msg)`` / ``net.broadcast(msg)``; nothing blocks.
"""
from __future__ import annotations

import logging
from collections import deque
from enum import IntEnum

from .core import Batch
from .messages import Ack, BatchMsg, FetchReq, FetchResp, PoA

log = logging.getLogger(__name__)


class ProtocolViolation(AssertionError):
    """Two different batches claimed the same (rid, bid); impossible with crash faults."""


class SlotState(IntEnum):
    MISSING = 0
    BROADCAST = 1
    AVAILABLE = 2
    POA_SENT = 3
    COMMITTED = 4


class BatchSlot:
    __slots__ = ("batch", "state", "acks", "sent_poa", "pending_poa",
                 "commit_epoch", "truncated")

    def __init__(self):
        self.batch: Batch | None = None
        self.state = SlotState.MISSING
        self.acks: set[int] = set()
        self.sent_poa = False
        self.pending_poa = False
        self.commit_epoch: int | None = None
        self.truncated = False

    def advance(self, state: SlotState):
        # transitions only move forward
        if state > self.state:
            self.state = state

    def __repr__(self):
        return f"<slot {self.state.name} acks={len(self.acks)} poa={self.sent_poa}>"


class LogView:
    def __init__(self, rid: int, n: int, f: int, net, count_source_ack: bool = False,
                 clock=None):
        self.rid = rid
        self.clock = clock or (lambda: 0)
        self.n = n
        self.f = f
        self.net = net
        # the source's own copy is extra unless count_source_ack is set
        self.quorum = f + 1 - (1 if count_source_ack else 0)
        self.logs: dict[int, dict[int, BatchSlot]] = {r: {} for r in range(n)}
        self.poa_heads = {r: -1 for r in range(n)}
        self.last_committed = {r: -1 for r in range(n)}
        self.held_poas: set[tuple[int, int]] = set()
        self.outstanding: dict[tuple[int, int], int] = {}
        self.dirty = False
        self.on_dirty = None  # callback() whenever availability may have changed
        self.on_batch = None  # callback(rid, bid) when a slot gets its batch
        self._commit_order: deque[tuple[int, int, int]] = deque()
        self.unknown_acks = 0
        self.duplicate_batches = 0
        self.truncated_fetches = 0
        self.poa_broadcasts: list[tuple[int, int]] = []

    def _mark_dirty(self):
        self.dirty = True
        if self.on_dirty is not None:
            self.on_dirty()

    def slot(self, rid: int, bid: int) -> BatchSlot:
        s = self.logs[rid].get(bid)
        if s is None:
            s = self.logs[rid][bid] = BatchSlot()
        return s

    def has_batch(self, rid: int, bid: int) -> bool:
        s = self.logs[rid].get(bid)
        return s is not None and s.batch is not None

    def stores(self, rid: int, bid: int) -> bool:
        return self.has_batch(rid, bid)

    def _fill(self, batch: Batch) -> BatchSlot:
        s = self.slot(batch.rid, batch.bid)
        if s.batch is None:
            if not s.truncated:
                s.batch = batch
                s.advance(SlotState.BROADCAST)
                self.outstanding.pop((batch.rid, batch.bid), None)
                if s.pending_poa:
                    s.pending_poa = False
                    self._poa_for_held(batch.rid, batch.bid, s)
                if self.on_batch is not None:
                    self.on_batch(batch.rid, batch.bid)
        elif s.batch != batch:
            raise ProtocolViolation(f"conflicting content for batch {batch.id}")
        else:
            self.duplicate_batches += 1
        return s

    # -- source side ---------------------------------------------------------------

    def add_local_batch(self, batch: Batch):
        assert batch.rid == self.rid
        expected = max(self.logs[self.rid], default=-1) + 1
        assert batch.bid == expected, f"gap in own log: {batch.bid} != {expected}"
        self._fill(batch)
        self.net.broadcast(BatchMsg(self.rid, batch))
        if self.quorum <= 0:
            self.slot(self.rid, batch.bid).advance(SlotState.AVAILABLE)
            self.advance_poa()

    def on_ack(self, ack: Ack):
        s = self.logs[self.rid].get(ack.bid)
        if ack.rid != self.rid or s is None or s.batch is None:
            self.unknown_acks += 1
            return
        if ack.src == self.rid:
            return
        s.acks.add(ack.src)
        if len(s.acks) >= self.quorum and s.state < SlotState.AVAILABLE:
            s.advance(SlotState.AVAILABLE)
            self.advance_poa()

    def advance_poa(self):
        """Broadcast PoAs for the contiguous run of available own batches."""
        own = self.logs[self.rid]
        i = self.poa_heads[self.rid] + 1
        while True:
            s = own.get(i)
            if s is None or s.state < SlotState.AVAILABLE or s.sent_poa:
                break
            prev = own.get(i - 1)
            if i > 0 and (prev is None or not prev.sent_poa):
                break
            self.net.broadcast(PoA(self.rid, self.rid, i))
            self.poa_broadcasts.append((self.rid, i))
            s.sent_poa = True
            s.advance(SlotState.POA_SENT)
            self.poa_heads[self.rid] = i
            if s.state < SlotState.COMMITTED:
                self.held_poas.add((self.rid, i))
                self._mark_dirty()
            i += 1

    def rebroadcast_unavailable(self):
        """Resend own batches still short of a quorum (used after a restart)."""
        for bid, s in sorted(self.logs[self.rid].items()):
            if s.batch is not None and s.state < SlotState.AVAILABLE:
                self.net.broadcast(BatchMsg(self.rid, s.batch))

    # -- receiver side ---------------------------------------------------------------

    def on_batch_received(self, batch: Batch, src: int):
        self._fill(batch)
        self.net.send(batch.rid, Ack(self.rid, batch.rid, batch.bid))

    def _poa_for_held(self, rid, bid, s):
        s.advance(SlotState.POA_SENT)
        if bid > self.poa_heads[rid]:
            self.poa_heads[rid] = bid
        if s.state < SlotState.COMMITTED:
            self.held_poas.add((rid, bid))
            self._mark_dirty()

    def on_poa(self, poa: PoA):
        s = self.slot(poa.rid, poa.bid)
        if s.batch is not None or s.state == SlotState.COMMITTED:
            self._poa_for_held(poa.rid, poa.bid, s)
        elif not s.pending_poa:
            s.pending_poa = True
            self.held_poas.add((poa.rid, poa.bid))
            self._mark_dirty()
            self.request(poa.rid, poa.bid)

    # -- fetch -------------------------------------------------------------------------

    def request(self, rid: int, bid: int):
        self.outstanding[(rid, bid)] = self.clock()
        self.net.broadcast(FetchReq(self.rid, rid, bid))

    def missing(self, rid: int, lo: int, hi: int) -> list[int]:
        """Bids in [lo, hi] whose batch is not held locally."""
        log_ = self.logs[rid]
        out = []
        for b in range(lo, hi + 1):
            s = log_.get(b)
            if s is None or (s.batch is None and not s.truncated):
                out.append(b)
        return out

    def on_fetch_request(self, req: FetchReq):
        s = self.logs[req.rid].get(req.bid)
        if s is None:
            return
        if s.batch is not None:
            self.net.send(req.src, FetchResp(self.rid, s.batch))
        elif s.truncated:
            self.truncated_fetches += 1

    def on_fetch_response(self, resp: FetchResp):
        self._fill(resp.batch)

    def refetch(self, now: int, interval: int):
        for (rid, bid), t in list(self.outstanding.items()):
            if self.has_batch(rid, bid):
                del self.outstanding[(rid, bid)]
            elif now - t >= interval:
                self.request(rid, bid)

    # -- commit / gc ------------------------------------------------------------------

    def mark_committed(self, rid: int, bid: int, epoch: int):
        s = self.slot(rid, bid)
        s.advance(SlotState.COMMITTED)
        s.commit_epoch = epoch
        if bid > self.last_committed[rid]:
            self.last_committed[rid] = bid
        self.held_poas.discard((rid, bid))
        self._commit_order.append((epoch, rid, bid))

    def truncate(self, watermark: int) -> int:
        """Drop batch payloads committed in epochs <= watermark; returns count."""
        n = 0
        q = self._commit_order
        while q and q[0][0] <= watermark:
            _, rid, bid = q.popleft()
            s = self.logs[rid][bid]
            if s.batch is not None:
                s.batch = None
                s.truncated = True
                n += 1
        if n:
            self._mark_dirty()
        return n
