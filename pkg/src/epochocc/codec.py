"""Canonical byte encoding for records, batches, protocol messages and dumps.

Integers are little-endian fixed width, lists carry a u32 count and byte
strings a u32 length.  A frame on the wire is ``tag:u8 | length:u32 | payload``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .core import (Batch, BatchId, Procedure, ReadSource, SourceKind, TxnId,
                   TxnRecord)

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")
_U64 = struct.Struct("<Q")
_TID = struct.Struct("<IQ")
_FRAME = struct.Struct("<BI")


class DecodeError(ValueError):
    pass


class Writer:
    __slots__ = ("parts",)

    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v):
        self.parts.append(_U8.pack(v))

    def u32(self, v):
        self.parts.append(_U32.pack(v))

    def i64(self, v):
        self.parts.append(_I64.pack(v))

    def u64(self, v):
        self.parts.append(_U64.pack(v))

    def raw(self, b: bytes):
        self.parts.append(_U32.pack(len(b)))
        self.parts.append(b)

    def tid(self, t: TxnId):
        self.parts.append(_TID.pack(t.rid, t.seq))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def _take(self, s: struct.Struct):
        if self.pos + s.size > len(self.buf):
            raise DecodeError("truncated input")
        v = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return v

    def u8(self):
        return self._take(_U8)[0]

    def u32(self):
        return self._take(_U32)[0]

    def i64(self):
        return self._take(_I64)[0]

    def u64(self):
        return self._take(_U64)[0]

    def raw(self) -> bytes:
        n = self.u32()
        if self.pos + n > len(self.buf):
            raise DecodeError("truncated byte string")
        b = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return b

    def tid(self) -> TxnId:
        return TxnId(*self._take(_TID))

    def done(self) -> bool:
        return self.pos == len(self.buf)


# -- records -----------------------------------------------------------------

def write_value(w: Writer, v: bytes | None):
    if v is None:
        w.u8(0)
    else:
        w.u8(1)
        w.raw(v)


def read_value(r: Reader) -> bytes | None:
    tag = r.u8()
    if tag == 0:
        return None
    if tag != 1:
        raise DecodeError(f"bad value tag {tag}")
    return r.raw()


def write_procedure(w: Writer, p: Procedure):
    w.raw(p.name.encode())
    w.raw(p.params)


def read_procedure(r: Reader) -> Procedure:
    return Procedure(r.raw().decode(), r.raw())


def write_txn(w: Writer, t: TxnRecord):
    w.tid(t.tid)
    write_procedure(w, t.input)
    w.u32(len(t.read_set))
    for k, s in t.read_set:
        w.raw(k)
        w.u8(s.kind)
        if s.kind == SourceKind.SNAPSHOT:
            w.i64(s.eid)
        elif s.kind == SourceKind.TEMP:
            w.tid(s.writer)
    w.u32(len(t.write_set))
    for k, v in t.write_set:
        w.raw(k)
        write_value(w, v)
    deps = sorted(t.dependencies)
    w.u32(len(deps))
    for d in deps:
        w.tid(d)
    w.u64(t.client_tag)


def read_txn(r: Reader) -> TxnRecord:
    tid = r.tid()
    proc = read_procedure(r)
    reads = []
    for _ in range(r.u32()):
        k = r.raw()
        kind = r.u8()
        if kind == SourceKind.SNAPSHOT:
            reads.append((k, ReadSource.snapshot(r.i64())))
        elif kind == SourceKind.TEMP:
            reads.append((k, ReadSource.temp(r.tid())))
        elif kind == SourceKind.PROBE:
            reads.append((k, ReadSource.probe()))
        else:
            raise DecodeError(f"bad read source {kind}")
    writes = []
    for _ in range(r.u32()):
        k = r.raw()
        writes.append((k, read_value(r)))
    deps = frozenset(r.tid() for _ in range(r.u32()))
    return TxnRecord(tid, proc, tuple(reads), tuple(writes), deps, r.u64())


def txn_size(t: TxnRecord) -> int:
    """Length of ``encode_txn(t)`` computed without building the bytes."""
    n = 12 + 4 + len(t.input.name.encode()) + 4 + len(t.input.params) + 4
    for k, s in t.read_set:
        n += 4 + len(k) + 1
        if s.kind == SourceKind.SNAPSHOT:
            n += 8
        elif s.kind == SourceKind.TEMP:
            n += 12
    n += 4
    for k, v in t.write_set:
        n += 4 + len(k) + 1 + (0 if v is None else 4 + len(v))
    return n + 4 + 12 * len(t.dependencies) + 8


BATCH_HEADER_SIZE = 4 + 8 + 1 + 4


def write_batch(w: Writer, b: Batch):
    w.u32(b.id.rid)
    w.i64(b.id.bid)
    w.u8(1 if b.hc_flag else 0)
    w.u32(len(b.txns))
    for t in b.txns:
        write_txn(w, t)


def read_batch(r: Reader) -> Batch:
    rid = r.u32()
    bid = r.i64()
    hc = bool(r.u8())
    txns = tuple(read_txn(r) for _ in range(r.u32()))
    return Batch(BatchId(rid, bid), txns, hc)


def encode_txn(t: TxnRecord) -> bytes:
    w = Writer()
    write_txn(w, t)
    return w.getvalue()


def decode_txn(buf: bytes) -> TxnRecord:
    r = Reader(buf)
    t = read_txn(r)
    if not r.done():
        raise DecodeError("trailing bytes")
    return t


def encode_batch(b: Batch) -> bytes:
    w = Writer()
    write_batch(w, b)
    return w.getvalue()


def decode_batch(buf: bytes) -> Batch:
    r = Reader(buf)
    b = read_batch(r)
    if not r.done():
        raise DecodeError("trailing bytes")
    return b


def batch_size(b: Batch) -> int:
    return BATCH_HEADER_SIZE + sum(txn_size(t) for t in b.txns)


# -- frames --------------------------------------------------------------------

def encode_frame(tag: int, payload: bytes) -> bytes:
    return _FRAME.pack(tag, len(payload)) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, bytes]:
    """Split one frame off ``buf``; returns (tag, payload, rest)."""
    if len(buf) < _FRAME.size:
        raise DecodeError("short frame header")
    tag, n = _FRAME.unpack_from(buf, 0)
    end = _FRAME.size + n
    if len(buf) < end:
        raise DecodeError("short frame payload")
    return tag, bytes(buf[_FRAME.size:end]), bytes(buf[end:])


FRAME_HEADER_SIZE = _FRAME.size


@dataclass(frozen=True)
class StoreLine:
    key: bytes
    value: bytes
    eid: int


def encode_store_line(key: bytes, value: bytes, eid: int) -> str:
    return b"".join((_U32.pack(len(key)), key, _U32.pack(len(value)), value,
                     _I64.pack(eid))).hex()


def decode_store_line(line: str) -> StoreLine:
    try:
        r = Reader(bytes.fromhex(line.strip()))
    except ValueError as e:
        raise DecodeError(str(e)) from None
    out = StoreLine(r.raw(), r.raw(), r.i64())
    if not r.done():
        raise DecodeError("trailing bytes in store line")
    return out
