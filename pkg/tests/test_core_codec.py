import pytest
from hypothesis import given, strategies as st

from epochocc.codec import (DecodeError, batch_size, decode_batch, decode_frame, decode_txn,
                            encode_batch, encode_frame, encode_txn)
from epochocc.core import (Batch, BatchId, GlobalOrderKey, Procedure, ReadSource, TxnId,
                           TxnRecord, compare_global_order, sort_global, validate_batch_structure)
from epochocc.messages import (Ack, Append, AppendResp, BatchMsg, CutPropose, FetchReq, FetchResp,
                               LogEntry, PoA, Progress, VoteReq, VoteResp, decode_message,
                               decode_stream, encode_message)

keys = st.binary(min_size=1, max_size=8)
values = st.one_of(st.none(), st.binary(max_size=16))
tids = st.builds(TxnId, st.integers(0, 7), st.integers(0, 2**40))
sources = st.one_of(
    st.builds(ReadSource.snapshot, st.integers(-1, 10**6)),
    st.builds(ReadSource.temp, tids),
    st.just(ReadSource.probe()))


@st.composite
def txn_records(draw, rid=None):
    tid = draw(tids) if rid is None else TxnId(rid, draw(st.integers(0, 1000)))
    reads = draw(st.dictionaries(keys, sources, max_size=4))
    writes = draw(st.dictionaries(keys, values, max_size=4))
    return TxnRecord(tid, Procedure(draw(st.sampled_from(["put", "ycsb"])), draw(st.binary(max_size=20))),
                     tuple(reads.items()), tuple(writes.items()),
                     frozenset(draw(st.lists(tids, max_size=3))), draw(st.integers(0, 2**63)))


@given(txn_records())
def test_txn_roundtrip(t):
    assert decode_txn(encode_txn(t)) == t


@given(st.lists(txn_records(rid=2), max_size=5), st.booleans(), st.integers(0, 10**6))
def test_batch_roundtrip_and_size(txns, hc, bid):
    b = Batch(BatchId(2, bid), tuple(txns), hc)
    buf = encode_batch(b)
    assert decode_batch(buf) == b
    assert batch_size(b) == len(buf)


@given(txn_records())
def test_truncated_txn_rejected(t):
    buf = encode_txn(t)
    with pytest.raises(DecodeError):
        decode_txn(buf[:-1])


def test_frame_split_and_errors():
    f = encode_frame(3, b"abc")
    assert decode_frame(f + b"rest") == (3, b"abc", b"rest")
    with pytest.raises(DecodeError):
        decode_frame(f[:3])
    with pytest.raises(DecodeError):
        decode_frame(f[:-1])


MESSAGES = [
    BatchMsg(1, Batch(BatchId(1, 0), ())),
    Ack(0, 1, 5), PoA(1, 1, 5), FetchReq(2, 1, 5),
    FetchResp(0, Batch(BatchId(1, 5), (), True)),
    CutPropose(0, 4, (1, -1, 3)),
    VoteReq(2, 7, 10, 6), VoteResp(1, 7, True),
    Append(0, 3, 9, 2, (LogEntry(3, (1, 2, 3)), LogEntry(3, (2, 2, 3))), 8),
    AppendResp(1, 3, False, 4), Progress(2, 11),
]


@pytest.mark.parametrize("m", MESSAGES, ids=lambda m: type(m).__name__)
def test_message_roundtrip(m):
    assert decode_message(encode_message(m)) == m


@given(st.integers(0, 200))
def test_stream_decodes_whole_frames_only(cut):
    buf = b"".join(encode_message(m) for m in MESSAGES)
    cut = min(cut, len(buf))
    first, rest = decode_stream(buf[:cut])
    second, leftover = decode_stream(rest + buf[cut:])
    assert first + second == MESSAGES and leftover == b""


def test_global_order_is_lexicographic():
    a = GlobalOrderKey(0, 0, 5)
    b = GlobalOrderKey(1, 1, 1)
    assert compare_global_order(a, b) < 0 < compare_global_order(b, a)
    assert compare_global_order(a, a) == 0
    # priority outranks replica id
    assert GlobalOrderKey.of(TxnId(0, 0), {0: 2, 1: 1}) > GlobalOrderKey.of(TxnId(1, 9), {0: 2, 1: 1})


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 50)), max_size=100))
def test_sort_matches_triple_sort(triples):
    prio = [3, 0, 2, 1]
    txns = [TxnRecord(TxnId(r, s), Procedure("put", b"")) for _, r, s in triples]
    got = [(prio[t.tid.rid], t.tid.rid, t.tid.seq) for t in sort_global(txns, prio)]
    assert got == sorted((prio[r], r, s) for _, r, s in triples)


def test_batch_structure_checks():
    p = Procedure("put", b"")
    t0 = TxnRecord(TxnId(1, 0), p, write_set=((b"a", b"1"),))
    t1 = TxnRecord(TxnId(1, 1), p, read_set=((b"a", ReadSource.temp(TxnId(1, 0))),),
                   dependencies=frozenset({TxnId(1, 0)}))
    assert validate_batch_structure(Batch(BatchId(1, 0), (t0, t1))) == []
    bad = TxnRecord(TxnId(1, 2), p, dependencies=frozenset({TxnId(0, 0)}))
    probs = validate_batch_structure(Batch(BatchId(1, 0), (t0, t1, bad)))
    assert any("foreign dependency" in s for s in probs)
    unordered = validate_batch_structure(Batch(BatchId(1, 0), (t1, t0)))
    assert any("unordered" in s for s in unordered)
    hc = validate_batch_structure(Batch(BatchId(1, 0), (t0,), hc_flag=True))
    assert any("high-contention" in s for s in hc)
