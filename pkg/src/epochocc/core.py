"""Identifiers, transaction records and batches shared by every protocol layer.

All types here are immutable value objects.  Keys and values are ``bytes``;
a write whose value is ``None`` is a delete (tombstone write).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

# eid reported for keys that have never been written
NEVER = -1


@dataclass(frozen=True, order=True, slots=True)
class TxnId:
    rid: int
    seq: int

    def __str__(self):
        return f"{self.rid}.{self.seq}"


@dataclass(frozen=True, order=True, slots=True)
class BatchId:
    rid: int
    bid: int


@dataclass(frozen=True, slots=True)
class Procedure:
    """A registered one-shot procedure invocation: name plus opaque argument bytes."""

    name: str
    params: bytes


class SourceKind(IntEnum):
    SNAPSHOT = 0
    TEMP = 1
    PROBE = 2  # key declared by static probing, nothing was read


@dataclass(frozen=True, slots=True)
class ReadSource:
    kind: SourceKind
    eid: int = NEVER
    writer: TxnId | None = None

    @classmethod
    def snapshot(cls, eid: int) -> "ReadSource":
        return cls(SourceKind.SNAPSHOT, eid, None)

    @classmethod
    def temp(cls, writer: TxnId) -> "ReadSource":
        return cls(SourceKind.TEMP, NEVER, writer)

    @classmethod
    def probe(cls) -> "ReadSource":
        return _PROBE


_PROBE = ReadSource(SourceKind.PROBE)


@dataclass(frozen=True, slots=True)
class TxnRecord:
    tid: TxnId
    input: Procedure
    read_set: tuple[tuple[bytes, ReadSource], ...] = ()
    write_set: tuple[tuple[bytes, bytes | None], ...] = ()
    dependencies: frozenset[TxnId] = field(default_factory=frozenset)
    client_tag: int = 0

    @property
    def read_keys(self) -> tuple[bytes, ...]:
        return tuple(k for k, _ in self.read_set)

    @property
    def write_keys(self) -> tuple[bytes, ...]:
        return tuple(k for k, _ in self.write_set)

    def snapshot_reads(self):
        """(key, eid) pairs read from the committed snapshot."""
        return [(k, s.eid) for k, s in self.read_set if s.kind == SourceKind.SNAPSHOT]


@dataclass(frozen=True, slots=True)
class Batch:
    id: BatchId
    txns: tuple[TxnRecord, ...]
    hc_flag: bool = False

    @property
    def rid(self) -> int:
        return self.id.rid

    @property
    def bid(self) -> int:
        return self.id.bid


@dataclass(frozen=True, order=True, slots=True)
class GlobalOrderKey:
    priority: int
    rid: int
    seq: int

    @classmethod
    def of(cls, tid: TxnId, priorities: Mapping[int, int] | Sequence[int] | None = None):
        prio = tid.rid if priorities is None else priorities[tid.rid]
        return cls(prio, tid.rid, tid.seq)


def compare_global_order(a: GlobalOrderKey, b: GlobalOrderKey) -> int:
    """Three-way comparison: negative if ``a`` precedes ``b``, 0 if equal."""
    ta, tb = (a.priority, a.rid, a.seq), (b.priority, b.rid, b.seq)
    return (ta > tb) - (ta < tb)


def sort_global(txns: Iterable[TxnRecord], priorities=None) -> list[TxnRecord]:
    return sorted(txns, key=lambda t: GlobalOrderKey.of(t.tid, priorities))


def validate_batch_structure(b: Batch) -> list[str]:
    """Return every violated batch invariant; an empty list means well formed."""
    problems = []
    rid = b.id.rid
    seen: set[TxnId] = set()
    first_seq = b.txns[0].tid.seq if b.txns else 0
    prev = None
    for t in b.txns:
        if t.tid.rid != rid:
            problems.append(f"foreign txn {t.tid} in batch of replica {rid}")
        if prev is not None and t.tid.seq <= prev:
            problems.append(f"unordered seq {t.tid.seq} after {prev}")
        prev = t.tid.seq
        for d in sorted(t.dependencies):
            if d.rid != rid:
                problems.append(f"foreign dependency {d} of {t.tid}")
            elif d.seq >= t.tid.seq:
                problems.append(f"forward dependency {d} of {t.tid}")
            elif d.seq >= first_seq and d not in seen:
                problems.append(f"dangling dependency {d} of {t.tid}")
        temp_writers = {s.writer for _, s in t.read_set if s.kind == SourceKind.TEMP}
        if temp_writers != set(t.dependencies):
            problems.append(f"dependencies of {t.tid} differ from temp readers")
        keys = [k for k, _ in t.write_set]
        if len(set(keys)) != len(keys):
            problems.append(f"duplicate write keys in {t.tid}")
        if b.hc_flag and any(v is not None for _, v in t.write_set):
            problems.append(f"write values present in high-contention txn {t.tid}")
        seen.add(t.tid)
    return problems
