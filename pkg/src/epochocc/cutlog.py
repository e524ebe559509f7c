"""Consistent-cut proposals and the totally ordered decision log that carries them.

Two interchangeable consensus layers are provided.  :class:`Sequencer` is a
fixed-leader broadcast used by unit tests; :class:`RaftLite` tolerates leader
crashes with terms, randomized election timeouts and majority commit.

Both expose the same surface to the replica:

* ``start()`` arms timers (also called after a restart),
* ``submit(cut)`` appends a proposal when this replica leads,
* ``is_leader()`` / ``last_cut()``,
* ``on_message(msg)`` for the consensus message kinds,
* ``on_decide`` callback receiving :class:`CutDecision` objects in epoch order.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .messages import (Append, AppendResp, CutPropose, LogEntry, Tag, VoteReq,
                       VoteResp)

log = logging.getLogger(__name__)

MS = 1000


@dataclass(frozen=True, slots=True)
class CutDecision:
    epoch: int
    cut_bids: tuple[int, ...]


@dataclass
class ConsensusConfig:
    """Timing knobs, all in virtual microseconds."""

    epoch_interval_us: int = 15 * MS
    heartbeat_us: int = 400 * MS
    election_timeout_min_us: int = 800 * MS
    election_timeout_max_us: int = 1600 * MS
    ack_wait_us: int = 50 * MS

    def __post_init__(self):
        if self.epoch_interval_us <= 0:
            raise ValueError("epoch_interval must be positive")
        if self.election_timeout_min_us <= self.heartbeat_us:
            raise ValueError("election timeout must exceed the heartbeat")
        if self.election_timeout_max_us < self.election_timeout_min_us:
            raise ValueError("election timeout range is empty")
        if self.ack_wait_us < 0:
            raise ValueError("ack_wait must be non-negative")


def make_proposal(prev_cut, poa_heads) -> tuple[int, ...] | None:
    """Component-wise max of the previous cut and the PoA heads.

    Returns ``None`` when the result equals ``prev_cut`` (nothing new to commit).
    ``poa_heads`` may be a sequence or a rid-keyed mapping.
    """
    cut = tuple(max(p, poa_heads[r]) for r, p in enumerate(prev_cut))
    return None if cut == tuple(prev_cut) else cut


def gather_ranges(prev_cut, cut) -> list[tuple[int, int, int]]:
    """(rid, lo, hi) with lo..hi inclusive for every replica that advanced."""
    return [(r, p + 1, c) for r, (p, c) in enumerate(zip(prev_cut, cut)) if c > p]


class Sequencer:
    """Replica 0 numbers proposals and broadcasts them; no fault tolerance."""

    LEADER = 0

    def __init__(self, rid: int, n: int, env, on_decide=None):
        self.rid = rid
        self.n = n
        self.env = env
        self.on_decide = on_decide
        self.next_epoch = 0
        self._last = (-1,) * n
        self._pending: dict[int, tuple[int, ...]] = {}
        self.decisions: list[CutDecision] = []

    def start(self):
        pass

    def is_leader(self) -> bool:
        return self.rid == self.LEADER

    def last_cut(self) -> tuple[int, ...]:
        return self._last

    def submit(self, cut) -> bool:
        if not self.is_leader():
            return False
        msg = CutPropose(self.rid, self.next_epoch, tuple(cut))
        self._last = msg.cut
        self.env.broadcast(msg)
        self._accept(msg)
        return True

    def _accept(self, m: CutPropose):
        self._pending[m.epoch] = m.cut
        while self.next_epoch in self._pending:
            cut = self._pending.pop(self.next_epoch)
            d = CutDecision(self.next_epoch, cut)
            self.next_epoch += 1
            self._last = cut
            self.decisions.append(d)
            if self.on_decide is not None:
                self.on_decide(d)

    def on_message(self, m):
        if m.tag == Tag.CUT_PROPOSE and m.epoch >= self.next_epoch:
            self._accept(m)

    def on_crash_notice(self, rid):
        pass

    def on_rejoin_notice(self, rid):
        pass


FOLLOWER, CANDIDATE, LEADER = "follower", "candidate", "leader"


class RaftLite:
    """Leader election plus a replicated log whose entries are cut vectors.

    Log index ``i`` decides epoch ``i``.  Replica 0 starts as leader of term 1
    so a fresh cluster needs no election.  An entry commits once it is from
    the current term, a majority stores it, and either every peer not
    reported crashed stores it or ``ack_wait`` has elapsed since it was
    appended.
    """

    def __init__(self, rid: int, n: int, env, cfg: ConsensusConfig | None = None,
                 rng: random.Random | None = None, on_decide=None):
        self.rid = rid
        self.n = n
        self.env = env
        self.cfg = cfg or ConsensusConfig()
        self.rng = rng or random.Random(rid)
        self.on_decide = on_decide
        self.majority = n // 2 + 1
        self.term = 1
        self.voted_for: int | None = 0
        self.leader_id: int | None = 0
        self.role = LEADER if rid == 0 else FOLLOWER
        self.log: list[LogEntry] = []
        self.commit_index = -1
        self.delivered = -1
        self.decisions: list[CutDecision] = []
        self.removed: set[int] = set()
        self.votes: set[int] = set()
        self.next_index = {p: 0 for p in range(n)}
        self.match_index = {p: -1 for p in range(n)}
        self.appended_at: dict[int, int] = {}
        self.deadline = 0
        self._pending_check: int | None = None
        self.elections_started = 0
        self.leader_changes: list[tuple[int, int, int]] = []  # (time, term, leader)

    # -- surface -------------------------------------------------------------------

    def start(self):
        """Arm timers; safe to call again after a restart."""
        self._pending_check = None  # timers from before a crash are gone
        if self.role == LEADER:
            self._heartbeat_loop(self.term)
        else:
            self.role = FOLLOWER
            self._reset_deadline()
            self._arm_election_check()

    def is_leader(self) -> bool:
        return self.role == LEADER

    def last_cut(self) -> tuple[int, ...]:
        return self.log[-1].cut if self.log else (-1,) * self.n

    def submit(self, cut) -> bool:
        if self.role != LEADER:
            return False
        self._append_local(tuple(cut))
        self._replicate_all()
        return True

    def on_crash_notice(self, rid: int):
        self.removed.add(rid)
        if self.role == LEADER:
            self._try_commit()

    def on_rejoin_notice(self, rid: int):
        self.removed.discard(rid)

    def on_message(self, m):
        t = m.tag
        if t == Tag.APPEND:
            self._on_append(m)
        elif t == Tag.APPEND_RESP:
            self._on_append_resp(m)
        elif t == Tag.VOTE_REQ:
            self._on_vote_req(m)
        elif t == Tag.VOTE_RESP:
            self._on_vote_resp(m)

    # -- helpers -------------------------------------------------------------------

    def _last_index_term(self):
        if not self.log:
            return -1, 0
        return len(self.log) - 1, self.log[-1].term

    def _timeout(self) -> int:
        return self.rng.randint(self.cfg.election_timeout_min_us,
                                self.cfg.election_timeout_max_us)

    def _reset_deadline(self):
        self.deadline = self.env.now() + self._timeout()

    def _arm_election_check(self):
        if self._pending_check is not None and self._pending_check <= self.deadline:
            return  # that check re-arms itself
        delay = max(1, self.deadline - self.env.now())
        self._pending_check = self.env.now() + delay
        self.env.call_later(delay, self._election_check)

    def _election_check(self):
        self._pending_check = None
        if self.role == LEADER:
            return
        if self.env.now() >= self.deadline:
            self._start_election()
        self._arm_election_check()

    def _step_down(self, term: int, leader: int | None = None):
        was_leader = self.role == LEADER
        if term > self.term:
            self.term = term
            self.voted_for = None
        self.role = FOLLOWER
        if leader is not None:
            self.leader_id = leader
        if was_leader:
            self._reset_deadline()
            self._arm_election_check()

    def _append_local(self, cut):
        self.log.append(LogEntry(self.term, cut))
        idx = len(self.log) - 1
        now = self.env.now()
        self.appended_at[idx] = now
        self.match_index[self.rid] = idx
        if self.cfg.ack_wait_us > 0:
            term = self.term
            self.env.call_later(self.cfg.ack_wait_us, lambda: self._ack_wait_expired(term))

    def _ack_wait_expired(self, term):
        if self.role == LEADER and self.term == term:
            self._try_commit()

    # -- elections -----------------------------------------------------------------

    def _start_election(self):
        self.term += 1
        self.role = CANDIDATE
        self.voted_for = self.rid
        self.votes = {self.rid}
        self.leader_id = None
        self.elections_started += 1
        self._reset_deadline()
        li, lt = self._last_index_term()
        self.env.broadcast(VoteReq(self.rid, self.term, li, lt))
        if len(self.votes) >= self.majority:
            self._become_leader()

    def _on_vote_req(self, m: VoteReq):
        if m.term > self.term:
            self._step_down(m.term)
        li, lt = self._last_index_term()
        up_to_date = m.last_term > lt or (m.last_term == lt and m.last_index >= li)
        grant = (m.term == self.term and self.role != LEADER
                 and self.voted_for in (None, m.src) and up_to_date)
        if grant:
            self.voted_for = m.src
            self._reset_deadline()
        self.env.send(m.src, VoteResp(self.rid, self.term, grant))

    def _on_vote_resp(self, m: VoteResp):
        if m.term > self.term:
            self._step_down(m.term)
            return
        if self.role != CANDIDATE or m.term != self.term or not m.granted:
            return
        self.votes.add(m.src)
        if len(self.votes) >= self.majority:
            self._become_leader()

    def _become_leader(self):
        self.role = LEADER
        self.leader_id = self.rid
        self.leader_changes.append((self.env.now(), self.term, self.rid))
        log.debug("replica %d leads term %d", self.rid, self.term)
        for p in range(self.n):
            self.next_index[p] = len(self.log)
            self.match_index[p] = -1
        self.match_index[self.rid] = len(self.log) - 1
        # prior-term entries only commit behind one of our own
        if len(self.log) - 1 > self.commit_index:
            self._append_local(self.log[-1].cut)
        self._heartbeat_loop(self.term)

    def _heartbeat_loop(self, term):
        if self.role != LEADER or self.term != term:
            return
        self._replicate_all()
        self.env.call_later(self.cfg.heartbeat_us, lambda: self._heartbeat_loop(term))

    # -- replication ---------------------------------------------------------------

    def _replicate_all(self):
        for p in range(self.n):
            if p != self.rid:
                self._replicate(p)

    def _replicate(self, p: int):
        ni = self.next_index[p]
        prev = ni - 1
        prev_term = self.log[prev].term if prev >= 0 else 0
        entries = tuple(self.log[ni:])
        self.env.send(p, Append(self.rid, self.term, prev, prev_term, entries,
                                self.commit_index))
        # optimistic pipelining; a rejection rewinds it
        self.next_index[p] = len(self.log)

    def _on_append(self, m: Append):
        if m.term < self.term:
            self.env.send(m.src, AppendResp(self.rid, self.term, False, len(self.log) - 1))
            return
        if m.term > self.term or self.role != FOLLOWER:
            self._step_down(m.term, m.src)
        self.leader_id = m.src
        self._reset_deadline()
        if m.prev_index >= len(self.log) or (
                m.prev_index >= 0 and self.log[m.prev_index].term != m.prev_term):
            hint = min(len(self.log) - 1, m.prev_index - 1)
            self.env.send(m.src, AppendResp(self.rid, self.term, False, hint))
            return
        idx = m.prev_index + 1
        for e in m.entries:
            if idx < len(self.log):
                if self.log[idx].term != e.term:
                    assert idx > self.commit_index, "refusing to overwrite a committed entry"
                    del self.log[idx:]
                    self.log.append(e)
            else:
                self.log.append(e)
            idx += 1
        last_new = m.prev_index + len(m.entries)
        if m.leader_commit > self.commit_index:
            self.commit_index = max(self.commit_index, min(m.leader_commit, last_new))
            self._deliver()
        self.env.send(m.src, AppendResp(self.rid, self.term, True, last_new))

    def _on_append_resp(self, m: AppendResp):
        if m.term > self.term:
            self._step_down(m.term)
            return
        if self.role != LEADER or m.term != self.term:
            return
        if m.success:
            if m.match_index > self.match_index[m.src]:
                self.match_index[m.src] = m.match_index
            self.next_index[m.src] = max(self.next_index[m.src], m.match_index + 1)
            self._try_commit()
        else:
            self.next_index[m.src] = max(0, m.match_index + 1)
            self._replicate(m.src)

    def _try_commit(self):
        now = self.env.now()
        live_peers = [p for p in range(self.n) if p != self.rid and p not in self.removed]
        new = self.commit_index
        for i in range(self.commit_index + 1, len(self.log)):
            stored = sum(1 for p in range(self.n) if self.match_index[p] >= i)
            if stored < self.majority:
                break
            if self.log[i].term != self.term:
                continue
            everyone = all(self.match_index[p] >= i for p in live_peers)
            if everyone or now - self.appended_at.get(i, now) >= self.cfg.ack_wait_us:
                new = i
            else:
                break
        if new > self.commit_index:
            self.commit_index = new
            self._deliver()
            self._replicate_all()  # tell followers right away

    def _deliver(self):
        while self.delivered < self.commit_index:
            self.delivered += 1
            d = CutDecision(self.delivered, self.log[self.delivered].cut)
            self.decisions.append(d)
            if self.on_decide is not None:
                self.on_decide(d)


def make_consensus(kind: str, rid: int, n: int, env, cfg: ConsensusConfig,
                   rng: random.Random, on_decide=None):
    if kind == "raft":
        return RaftLite(rid, n, env, cfg, rng, on_decide)
    if kind == "sequencer":
        return Sequencer(rid, n, env, on_decide)
    raise ValueError(f"unknown consensus kind {kind!r}")
