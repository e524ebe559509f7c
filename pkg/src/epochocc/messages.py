"""Replica-to-replica messages and their tagged-frame wire format."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .codec import (DecodeError, Reader, Writer, decode_frame, encode_frame,
                    read_batch, write_batch)
from .core import Batch


class Tag(IntEnum):
    BATCH = 1
    ACK = 2
    POA = 3
    FETCH_REQ = 4
    FETCH_RESP = 5
    CUT_PROPOSE = 6
    VOTE_REQ = 7
    VOTE_RESP = 8
    APPEND = 9
    APPEND_RESP = 10
    PROGRESS = 11


@dataclass(frozen=True, slots=True)
class BatchMsg:
    src: int
    batch: Batch
    tag = Tag.BATCH


@dataclass(frozen=True, slots=True)
class Ack:
    src: int
    rid: int
    bid: int
    tag = Tag.ACK


@dataclass(frozen=True, slots=True)
class PoA:
    src: int
    rid: int
    bid: int
    tag = Tag.POA


@dataclass(frozen=True, slots=True)
class FetchReq:
    src: int
    rid: int
    bid: int
    tag = Tag.FETCH_REQ


@dataclass(frozen=True, slots=True)
class FetchResp:
    src: int
    batch: Batch
    tag = Tag.FETCH_RESP


@dataclass(frozen=True, slots=True)
class CutPropose:
    """Sequencer decision broadcast: epoch index plus its cut."""
    src: int
    epoch: int
    cut: tuple[int, ...]
    tag = Tag.CUT_PROPOSE


@dataclass(frozen=True, slots=True)
class VoteReq:
    src: int
    term: int
    last_index: int
    last_term: int
    tag = Tag.VOTE_REQ


@dataclass(frozen=True, slots=True)
class VoteResp:
    src: int
    term: int
    granted: bool
    tag = Tag.VOTE_RESP


@dataclass(frozen=True, slots=True)
class LogEntry:
    term: int
    cut: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class Append:
    src: int
    term: int
    prev_index: int
    prev_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int
    tag = Tag.APPEND


@dataclass(frozen=True, slots=True)
class AppendResp:
    src: int
    term: int
    success: bool
    match_index: int
    tag = Tag.APPEND_RESP


@dataclass(frozen=True, slots=True)
class Progress:
    """Garbage-collection progress report: latest committed epoch."""
    src: int
    epoch: int
    tag = Tag.PROGRESS


def _cut(w: Writer, cut):
    w.u32(len(cut))
    for c in cut:
        w.i64(c)


def _read_cut(r: Reader):
    return tuple(r.i64() for _ in range(r.u32()))


def encode_message(m) -> bytes:
    w = Writer()
    w.u32(m.src)
    t = m.tag
    if t in (Tag.BATCH, Tag.FETCH_RESP):
        write_batch(w, m.batch)
    elif t in (Tag.ACK, Tag.POA, Tag.FETCH_REQ):
        w.u32(m.rid)
        w.i64(m.bid)
    elif t == Tag.CUT_PROPOSE:
        w.i64(m.epoch)
        _cut(w, m.cut)
    elif t == Tag.VOTE_REQ:
        w.u64(m.term)
        w.i64(m.last_index)
        w.u64(m.last_term)
    elif t == Tag.VOTE_RESP:
        w.u64(m.term)
        w.u8(int(m.granted))
    elif t == Tag.APPEND:
        w.u64(m.term)
        w.i64(m.prev_index)
        w.u64(m.prev_term)
        w.u32(len(m.entries))
        for e in m.entries:
            w.u64(e.term)
            _cut(w, e.cut)
        w.i64(m.leader_commit)
    elif t == Tag.APPEND_RESP:
        w.u64(m.term)
        w.u8(int(m.success))
        w.i64(m.match_index)
    elif t == Tag.PROGRESS:
        w.i64(m.epoch)
    else:  # pragma: no cover
        raise ValueError(f"unknown message {m!r}")
    return encode_frame(t, w.getvalue())


def _decode_payload(tag: int, payload: bytes):
    r = Reader(payload)
    src = r.u32()
    if tag == Tag.BATCH:
        m = BatchMsg(src, read_batch(r))
    elif tag == Tag.FETCH_RESP:
        m = FetchResp(src, read_batch(r))
    elif tag == Tag.ACK:
        m = Ack(src, r.u32(), r.i64())
    elif tag == Tag.POA:
        m = PoA(src, r.u32(), r.i64())
    elif tag == Tag.FETCH_REQ:
        m = FetchReq(src, r.u32(), r.i64())
    elif tag == Tag.CUT_PROPOSE:
        m = CutPropose(src, r.i64(), _read_cut(r))
    elif tag == Tag.VOTE_REQ:
        m = VoteReq(src, r.u64(), r.i64(), r.u64())
    elif tag == Tag.VOTE_RESP:
        m = VoteResp(src, r.u64(), bool(r.u8()))
    elif tag == Tag.APPEND:
        term, prev_index, prev_term = r.u64(), r.i64(), r.u64()
        entries = tuple(LogEntry(r.u64(), _read_cut(r)) for _ in range(r.u32()))
        m = Append(src, term, prev_index, prev_term, entries, r.i64())
    elif tag == Tag.APPEND_RESP:
        m = AppendResp(src, r.u64(), bool(r.u8()), r.i64())
    elif tag == Tag.PROGRESS:
        m = Progress(src, r.i64())
    else:
        raise DecodeError(f"unknown frame tag {tag}")
    if not r.done():
        raise DecodeError("trailing bytes in frame")
    return m


def decode_message(frame: bytes):
    tag, payload, rest = decode_frame(frame)
    if rest:
        raise DecodeError("trailing bytes after frame")
    return _decode_payload(tag, payload)


def decode_stream(buf: bytes):
    """Decode as many whole frames as ``buf`` holds; returns (messages, leftover)."""
    out = []
    while True:
        try:
            tag, payload, rest = decode_frame(buf)
        except DecodeError:
            return out, buf
        out.append(_decode_payload(tag, payload))
        buf = rest
