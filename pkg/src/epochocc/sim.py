"""Deterministic discrete-event simulation of a replica cluster.

Virtual time is integer microseconds.  Events with equal timestamps run in
insertion order.  Channels are FIFO per ordered pair of replicas.  A crashed
replica drops every event addressed to it; restarting bumps its incarnation
so timers and messages aimed at the earlier incarnation are discarded too.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import Counter
from dataclasses import dataclass, field

from .config import SimConfig, ms
from .cutlog import CutDecision
from .messages import decode_message, encode_message
from .metrics import RunSummary, summarize
from .oracle import OracleResult, Problem, encode_history, oracle_check
from .procedures import REGISTRY, Registry
from .replica import Replica, ReplicaHooks
from .storage import SnapshotStore
from .workload import Workload, script_steps

log = logging.getLogger(__name__)

HARNESS = -1


class EventQueue:
    def __init__(self):
        self.heap: list = []
        self._seq = itertools.count()
        self.now = 0

    def push(self, t: int, target: int, inc: int, fn, args=()):
        heapq.heappush(self.heap, (t, next(self._seq), target, inc, fn, args))

    def pop(self):
        ev = heapq.heappop(self.heap)
        self.now = ev[0]
        return ev

    def __len__(self):
        return len(self.heap)


class _Env:
    """What a replica sees of the simulator."""

    __slots__ = ("sim", "rid", "peers")

    def __init__(self, sim: "Simulation", rid: int):
        self.sim = sim
        self.rid = rid
        self.peers = [p for p in range(sim.cfg.n) if p != rid]

    def now(self) -> int:
        return self.sim.q.now

    def call_later(self, delay: int, fn):
        s = self.sim
        s.q.push(s.q.now + max(0, int(delay)), self.rid, s.incarnation[self.rid], fn)

    def send(self, dst: int, msg):
        self.sim._send(self.rid, dst, msg)

    def broadcast(self, msg):
        for p in self.peers:
            self.sim._send(self.rid, p, msg)


@dataclass
class Client:
    cid: int
    rid: int
    rng: random.Random
    abandoned: bool = False


@dataclass
class SimResult:
    cfg: SimConfig
    initial: SnapshotStore
    histories: dict            # rid -> list[EpochRecord], replicas up at the end
    stores: dict               # rid -> SnapshotStore, replicas up at the end
    all_histories: dict        # every replica, crashed ones included
    reports: dict              # rid -> list[EpochCommitReport]
    latencies_us: list[int]
    ack_counts: Counter
    acked_writes: dict
    decision_times: dict       # rid -> list[(time, epoch)]
    epoch_times: dict          # rid -> list[(epoch, commit finish time)]
    violations: list[str]
    mode_changes: list         # (rid, eid, time, mode)
    end_time: int
    first_submit: int | None
    last_ack: int | None
    events: int
    messages: Counter
    submitted: int
    leader_changes: list = field(default_factory=list)

    @property
    def reference(self) -> int | None:
        if not self.histories:
            return None
        return max(sorted(self.histories), key=lambda r: len(self.histories[r]))

    def history(self):
        r = self.reference
        return [] if r is None else self.histories[r]

    def history_bytes(self) -> bytes:
        return encode_history(self.history(), self.initial)

    def epoch_reports(self):
        r = self.reference
        return [] if r is None else self.reports[r]

    def summary(self) -> RunSummary:
        span = 0
        if self.last_ack is not None:
            span = self.last_ack - (self.first_submit or 0)
        return summarize(self.latencies_us, span, self.epoch_reports())

    def oracle(self, registry: Registry = REGISTRY) -> OracleResult:
        res = oracle_check(self.histories, self.stores, self.initial, registry)
        committed = {}
        for e in self.history():
            for t in e.txns():
                committed[t.tid] = t.write_set
        for tid in sorted(self.ack_counts):
            if self.ack_counts[tid] != 1:
                res.problems.append(Problem("once", None, tid,
                                            f"acknowledged {self.ack_counts[tid]} times"))
            elif tid not in committed:
                res.problems.append(Problem("once", None, tid, "acknowledged but not committed"))
            elif committed[tid] != self.acked_writes[tid]:
                res.problems.append(Problem("once", None, tid,
                                            "acknowledged writes differ from the history"))
        for v in self.violations:
            res.problems.append(Problem("invariant", None, None, v))
        return res


class Simulation(ReplicaHooks):
    def __init__(self, cfg: SimConfig, registry: Registry = REGISTRY,
                 wire_roundtrip: bool = False, check_every_event: bool = False):
        self.cfg = cfg.validate()
        self.registry = registry
        self.wire_roundtrip = wire_roundtrip
        # availability is otherwise re-checked only when logs, PoAs or liveness change
        self.check_every_event = check_every_event
        self.q = EventQueue()
        seed = cfg.seed
        self.net_rng = random.Random(f"{seed}:net")
        self.workload = Workload(cfg.workload, seed)
        self.initial = self.workload.initial_store()
        n = cfg.n
        self.alive = [True] * n
        self.incarnation = [0] * n
        self.lat_us = [[ms(cfg.base_latency_ms(a, b)) for b in range(n)] for a in range(n)]
        self.jitter_us = ms(cfg.latency.jitter_ms)
        self.last_delivery: dict[tuple[int, int], int] = {}
        rcfg = cfg.replica_config()
        self.replicas = [
            Replica(r, rcfg, _Env(self, r), self.initial, registry,
                    random.Random(f"{seed}:raft:{r}"), self)
            for r in range(n)]
        self.violations: list[str] = []
        self.decided: dict[int, tuple] = {}
        self.decision_times = {r: [] for r in range(n)}
        self.epoch_times = {r: [] for r in range(n)}
        self.ack_counts: Counter = Counter()
        self.acked_writes: dict = {}
        self.latencies: list[int] = []
        self.outstanding: dict[int, tuple] = {}  # tag -> (client or None, submit time, rid)
        self.tags = itertools.count(1)
        self.issued = 0
        self.first_submit: int | None = None
        self.last_ack: int | None = None
        self.mode_changes = []
        self.messages: Counter = Counter()
        self.events = 0
        self.stop = False
        self.done_at: int | None = None
        w = cfg.workload
        self.budget = w.txns
        self.clients: list[Client] = []
        if w.kind != "custom":
            for r in range(n):
                for i in range(w.clients_per_replica):
                    cid = len(self.clients)
                    self.clients.append(Client(cid, r, random.Random(f"{seed}:client:{cid}")))
        self.script = script_steps(w) if w.kind == "custom" else []
        self._poa_check_due = False
        for rep in self.replicas:
            rep.logview.on_dirty = self._poa_check_needed

    def _poa_check_needed(self):
        self._poa_check_due = True

    # -- network -----------------------------------------------------------------------

    def _send(self, src: int, dst: int, msg):
        self.messages[msg.tag.name] += 1
        if self.wire_roundtrip:
            msg = decode_message(encode_message(msg))
        now = self.q.now
        if dst == src:
            t = now
        else:
            t = now + self.lat_us[src][dst]
            if self.jitter_us:
                t += self.net_rng.randint(0, self.jitter_us)
        key = (src, dst)
        last = self.last_delivery.get(key, 0)
        if t < last:
            t = last
        self.last_delivery[key] = t
        self.q.push(t, dst, self.incarnation[dst], self.replicas[dst].deliver, (msg,))

    # -- replica hooks -----------------------------------------------------------------

    def on_decide(self, rid: int, d: CutDecision):
        self.decision_times[rid].append((self.q.now, d.epoch))
        prev = self.decided.setdefault(d.epoch, d.cut_bids)
        if prev != d.cut_bids:
            self.violations.append(
                f"agreement: replica {rid} decided {d.cut_bids} for epoch {d.epoch}, "
                f"another replica decided {prev}")

    def on_client_ack(self, rid, tag, tid, write_set, now):
        self.ack_counts[tid] += 1
        self.acked_writes[tid] = write_set
        entry = self.outstanding.pop(tag, None)
        if entry is None:
            return
        client, t0, _ = entry
        self.latencies.append(now - t0)
        self.last_ack = now
        if client is not None and not client.abandoned:
            self._schedule_client(client, now)

    def on_epoch(self, rid, report, record, now):
        self.epoch_times[rid].append((report.eid, now))

    def on_mode(self, rid, mode, eid, now):
        self.mode_changes.append((rid, eid, now, mode))

    # -- clients -----------------------------------------------------------------------

    def _think(self, c: Client) -> int:
        mean = self.cfg.workload.think_ms
        return ms(c.rng.expovariate(1.0 / mean)) if mean > 0 else 0

    def _schedule_client(self, c: Client, now: int):
        if self.budget and self.issued >= self.budget:
            return
        self.q.push(now + self._think(c), c.rid, self.incarnation[c.rid], self._client_submit, (c,))

    def _client_submit(self, c: Client):
        if c.abandoned or (self.budget and self.issued >= self.budget):
            return
        proc = self.workload.next(c.rng)
        self._submit(c.rid, proc, c)

    def _submit(self, rid, proc, client):
        self.issued += 1
        tag = next(self.tags)
        now = self.q.now
        if self.first_submit is None:
            self.first_submit = now
        self.outstanding[tag] = (client, now, rid)
        self.replicas[rid].submit(proc, tag)

    # -- faults ------------------------------------------------------------------------

    def _crash(self, rid: int):
        log.debug("t=%d crash replica %d", self.q.now, rid)
        self.alive[rid] = False
        self.incarnation[rid] += 1
        for c in self.clients:
            if c.rid == rid:
                c.abandoned = True
        for tag in [t for t, (_, _, r) in self.outstanding.items() if r == rid]:
            del self.outstanding[tag]
        self._poa_check_due = True
        self.q.push(self.q.now + ms(self.cfg.failure_detect_ms), HARNESS, 0,
                    self._crash_notice, (rid,))

    def _crash_notice(self, rid: int):
        if self.alive[rid]:
            return
        for r in range(self.cfg.n):
            if self.alive[r]:
                self.replicas[r].on_crash_notice(rid)

    def _rejoin(self, rid: int):
        log.debug("t=%d rejoin replica %d", self.q.now, rid)
        self.alive[rid] = True
        self.incarnation[rid] += 1
        for r in range(self.cfg.n):
            if r != rid and self.alive[r]:
                self.replicas[r].on_rejoin_notice(rid)
        self.replicas[rid].restart()

    # -- invariants --------------------------------------------------------------------

    def _check_poa_durability(self):
        """Every PoA a live replica holds is backed by a live copy of the batch."""
        live = [r for r in self.replicas if self.alive[r.rid]]
        logs = [r.logview.logs for r in live]
        for r in live:
            for (src, bid) in r.logview.held_poas:
                for lg in logs:
                    s = lg[src].get(bid)
                    if s is not None and s.batch is not None:
                        break
                else:
                    self.violations.append(
                        f"availability: t={self.q.now} replica {r.rid} holds PoA for "
                        f"batch ({src},{bid}) with no live copy")
        for r in self.replicas:
            r.logview.dirty = False

    # -- run loop ----------------------------------------------------------------------

    def _workload_done(self) -> bool:
        if self.script:
            return False
        if self.cfg.workload.kind != "custom":
            if self.budget == 0:
                return False
            if self.issued < self.budget and any(not c.abandoned for c in self.clients):
                return False
        return not self.outstanding

    def _quiescent(self) -> bool:
        eids = set()
        for r in self.replicas:
            if not self.alive[r.rid]:
                continue
            ex = r.executor
            if (r.committing or r.decisions or ex.current_batch or ex.deferred
                    or r.logview.last_committed[r.rid] != ex.current_bid - 1):
                return False
            eids.add(r.last_eid)
        return len(eids) <= 1

    def _done_check(self):
        now = self.q.now
        if self._workload_done():
            if self.done_at is None:
                self.done_at = now
            if self._quiescent() or now - self.done_at >= ms(self.cfg.drain_ms):
                self.stop = True
                return
        self.q.push(now + ms(self.cfg.epoch_interval_ms), HARNESS, 0, self._done_check)

    def _script_step(self, rid, proc):
        self.script.pop(0)
        if self.alive[rid]:
            self._submit(rid, proc, None)

    def run(self) -> SimResult:
        cfg = self.cfg
        q = self.q
        for r in self.replicas:
            r.start()
        for c in cfg.crashes:
            q.push(ms(c.at_ms), HARNESS, 0, self._crash, (c.replica,))
            if c.rejoin_ms is not None:
                q.push(ms(c.rejoin_ms), HARNESS, 0, self._rejoin, (c.replica,))
        for c in self.clients:
            self._schedule_client(c, 0)
        for at, rid, proc in self.script:
            q.push(at, HARNESS, 0, self._script_step, (rid, proc))
        q.push(ms(cfg.epoch_interval_ms), HARNESS, 0, self._done_check)
        end = ms(cfg.duration_ms)
        check = cfg.check_invariants
        every = self.check_every_event
        alive, inc, replicas = self.alive, self.incarnation, self.replicas
        while q.heap and not self.stop:
            t, _, target, ev_inc, fn, args = q.pop()
            if t > end:
                q.now = end
                break
            if target >= 0 and (not alive[target] or inc[target] != ev_inc):
                continue
            self.events += 1
            fn(*args)
            if check:
                if self._poa_check_due or every:
                    self._poa_check_due = False
                    self._check_poa_durability()
        for r in replicas:
            if r.logview.truncated_fetches:
                self.violations.append(
                    f"gc: replica {r.rid} was asked for {r.logview.truncated_fetches} "
                    f"truncated batches")
        up = [r for r in replicas if alive[r.rid]]
        leader_changes = []
        for r in replicas:
            leader_changes += getattr(r.consensus, "leader_changes", [])
        return SimResult(
            cfg=cfg,
            initial=self.initial,
            histories={r.rid: r.history for r in up},
            stores={r.rid: r.storage.snapshot for r in up},
            all_histories={r.rid: r.history for r in replicas},
            reports={r.rid: r.reports for r in replicas},
            latencies_us=self.latencies,
            ack_counts=self.ack_counts,
            acked_writes=self.acked_writes,
            decision_times=self.decision_times,
            epoch_times=self.epoch_times,
            violations=self.violations,
            mode_changes=self.mode_changes,
            end_time=q.now,
            first_submit=self.first_submit,
            last_ack=self.last_ack,
            events=self.events,
            messages=self.messages,
            submitted=self.issued,
            leader_changes=sorted(leader_changes),
        )


def run_simulation(cfg: SimConfig, registry: Registry = REGISTRY, **kw) -> SimResult:
    return Simulation(cfg, registry, **kw).run()
