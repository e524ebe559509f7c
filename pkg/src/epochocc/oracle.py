"""Serial-replay oracle for commit histories, plus their on-disk encoding.

A history is a list of :class:`EpochRecord`.  Replaying it means running, for
each epoch, the valid set in canonical order and then the re-executed set in
global order, every transaction through its procedure on one flat store.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .codec import DecodeError, Reader, Writer, read_procedure, read_value, write_procedure, write_value
from .commit import CommittedTxn, EpochRecord
from .core import TxnId
from .procedures import REGISTRY, ProcedureError, Registry, TxnContext
from .storage import SnapshotStore

HISTORY_MAGIC = b"EOHIST01"


# -- encoding ------------------------------------------------------------------

def _write_ctxn(w: Writer, t: CommittedTxn):
    w.tid(t.tid)
    write_procedure(w, t.input)
    w.u32(len(t.write_set))
    for k, v in t.write_set:
        w.raw(k)
        write_value(w, v)
    w.u64(t.client_tag)


def _read_ctxn(r: Reader) -> CommittedTxn:
    tid = r.tid()
    proc = read_procedure(r)
    ws = tuple((r.raw(), read_value(r)) for _ in range(r.u32()))
    return CommittedTxn(tid, proc, ws, r.u64())


def encode_epoch(w: Writer, e: EpochRecord):
    w.i64(e.eid)
    w.u32(len(e.cut))
    for c in e.cut:
        w.i64(c)
    for part in (e.valid, e.reexec):
        w.u32(len(part))
        for t in part:
            _write_ctxn(w, t)
    w.u32(len(e.valid_groups))
    for g in e.valid_groups:
        w.u32(len(g))
        for tid in g:
            w.tid(tid)


def decode_epoch(r: Reader) -> EpochRecord:
    eid = r.i64()
    cut = tuple(r.i64() for _ in range(r.u32()))
    valid = [_read_ctxn(r) for _ in range(r.u32())]
    reexec = [_read_ctxn(r) for _ in range(r.u32())]
    groups = [[r.tid() for _ in range(r.u32())] for _ in range(r.u32())]
    return EpochRecord(eid, cut, valid, reexec, groups)


def encode_history(history, initial: SnapshotStore) -> bytes:
    w = Writer()
    w.parts.append(HISTORY_MAGIC)
    items = list(initial.items())
    w.u32(len(items))
    for k, v, e in items:
        w.raw(k)
        w.raw(v)
        w.i64(e)
    w.u32(len(history))
    for e in history:
        encode_epoch(w, e)
    return w.getvalue()


def decode_history(buf: bytes) -> tuple[list[EpochRecord], SnapshotStore]:
    if not buf.startswith(HISTORY_MAGIC):
        raise DecodeError("not a history dump")
    r = Reader(buf[len(HISTORY_MAGIC):])
    init = SnapshotStore()
    for _ in range(r.u32()):
        k, v, e = r.raw(), r.raw(), r.i64()
        init._put(k, v, e)
    hist = [decode_epoch(r) for _ in range(r.u32())]
    if not r.done():
        raise DecodeError("trailing bytes in history dump")
    return hist, init


def epoch_bytes(e: EpochRecord) -> bytes:
    w = Writer()
    encode_epoch(w, e)
    return w.getvalue()


# -- checking ------------------------------------------------------------------

@dataclass
class Problem:
    check: str          # which property failed: replay, independence, agreement, store, once
    epoch: int | None
    tid: TxnId | None
    detail: str

    def __str__(self):
        where = f"epoch {self.epoch}" if self.epoch is not None else "run"
        who = f" txn {self.tid}" if self.tid is not None else ""
        return f"[{self.check}] {where}{who}: {self.detail}"


@dataclass
class OracleResult:
    problems: list[Problem] = field(default_factory=list)
    epochs: int = 0
    txns: int = 0
    digests: dict[int, int] = field(default_factory=dict)  # epoch count -> store digest
    final: SnapshotStore | None = None

    @property
    def ok(self) -> bool:
        return not self.problems

    def first(self) -> Problem | None:
        return self.problems[0] if self.problems else None


def _run(t: CommittedTxn, store: SnapshotStore, registry: Registry):
    ctx = TxnContext(lambda k: (store.get(k), None))
    registry.run(t.input, ctx)
    return ctx


def replay(history, initial: SnapshotStore, registry: Registry = REGISTRY,
           stop_at_first: bool = False, digest_at=()) -> OracleResult:
    """Replay serially; checks that recorded outputs match and valid chains are independent.

    ``digest_at`` lists epoch counts after which the store digest is recorded
    in ``res.digests`` (keyed by count).
    """
    res = OracleResult()
    store = initial.copy()
    store.current_eid = 0
    seen: set[TxnId] = set()
    for e in history:
        if e.eid != store.current_eid:
            res.problems.append(Problem("replay", e.eid, None,
                                        f"expected epoch {store.current_eid}"))
            break
        touched: dict[TxnId, tuple[set, set]] = {}
        for part in (e.valid, e.reexec):
            for t in part:
                res.txns += 1
                if t.tid in seen:
                    res.problems.append(Problem("once", e.eid, t.tid, "committed twice"))
                seen.add(t.tid)
                try:
                    ctx = _run(t, store, registry)
                except (ProcedureError, KeyError, TypeError, ValueError) as ex:
                    # a dump is untrusted input; garbled arguments are a replay failure
                    res.problems.append(Problem("replay", e.eid, t.tid, str(ex)))
                    continue
                got = tuple(ctx.writes.items())
                if got != t.write_set:
                    res.problems.append(Problem(
                        "replay", e.eid, t.tid,
                        f"recorded writes differ from serial replay ({_diff(t.write_set, got)})"))
                if part is e.valid:
                    touched[t.tid] = (set(ctx.reads), set(ctx.writes))
                store.apply(t.write_set, e.eid)
            if stop_at_first and res.problems:
                break
        res.problems += _independence(e, touched)
        store.current_eid += 1
        res.epochs += 1
        if res.epochs in digest_at:
            res.digests[res.epochs] = store.digest()
        if stop_at_first and res.problems:
            break
    res.final = store
    return res


def _diff(a, b) -> str:
    da, db = dict(a), dict(b)
    for k in sorted(set(da) | set(db)):
        if da.get(k, b"<absent>") != db.get(k, b"<absent>"):
            return f"key {k!r}: recorded {da.get(k)!r}, replay {db.get(k)!r}"
    return "write order differs"


def _independence(e: EpochRecord, touched) -> list[Problem]:
    """No two valid chains of one epoch may share a written key, or a read and a write."""
    groups = e.valid_groups or [[t.tid] for t in e.valid]
    sets = []
    for g in groups:
        reads, writes = set(), set()
        for tid in g:
            r, w = touched.get(tid, (set(), set()))
            reads |= r - writes  # reads of keys the chain already wrote stay internal
            writes |= w
        sets.append((g[0], reads, writes))
    out = []
    owner: dict[bytes, int] = {}
    for i, (_, _, w) in enumerate(sets):
        for k in w:
            j = owner.setdefault(k, i)
            if j != i:
                out.append(Problem("independence", e.eid, sets[i][0],
                                   f"writes {k!r} also written by chain {sets[j][0]}"))
    for i, (_, r, _) in enumerate(sets):
        for k in sorted(r):
            j = owner.get(k)
            if j is not None and j != i:
                out.append(Problem("independence", e.eid, sets[i][0],
                                   f"reads {k!r} written by chain {sets[j][0]}"))
    return out


def oracle_check(histories: dict[int, list[EpochRecord]], stores: dict[int, SnapshotStore],
                 initial: SnapshotStore, registry: Registry = REGISTRY) -> OracleResult:
    """Full check across the correct replicas' histories and final stores."""
    if not histories:
        return OracleResult()
    ref_rid = max(sorted(histories), key=lambda r: len(histories[r]))
    ref = histories[ref_rid]
    lagging = {len(histories.get(r, ())) for r in stores} - {len(ref), 0}
    res = replay(ref, initial, registry, digest_at=lagging)
    for rid in sorted(histories):
        h = histories[rid]
        for i, e in enumerate(h):
            # equal records encode identically; bytes decide only when they differ
            if i >= len(ref) or (e != ref[i] and epoch_bytes(e) != epoch_bytes(ref[i])):
                res.problems.append(Problem("agreement", e.eid, None,
                                            f"replica {rid} history diverges from replica {ref_rid}"))
                break
    for rid in sorted(stores):
        s = stores[rid]
        k = len(histories.get(rid, ()))
        if k == len(ref) and res.final is not None:
            if s != res.final:
                res.problems.append(Problem("store", k - 1 if k else None, None,
                                            f"replica {rid} store differs from serial replay"))
        elif k in res.digests and s.digest() != res.digests[k]:
            res.problems.append(Problem("store", k - 1, None,
                                        f"replica {rid} store differs from replay at its epoch"))
    return res
