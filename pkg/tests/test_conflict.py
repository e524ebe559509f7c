import itertools
import random

import pytest
from hypothesis import given, strategies as st

from epochocc.conflict import (ConflictGraph, MwisStats, build_chains, filter_conflicts,
                               mark_invalid, solve_mwis_exact, solve_mwis_greedy)
from epochocc.core import Batch, BatchId, Procedure, ReadSource, TxnId, TxnRecord
from epochocc.storage import SnapshotStore

P = Procedure("put", b"")


def txn(rid, seq, reads=(), writes=(), deps=(), temp=()):
    rs = tuple((k.encode(), ReadSource.snapshot(-1)) for k in reads)
    rs += tuple((k.encode(), ReadSource.temp(TxnId(*w))) for k, w in temp)
    return TxnRecord(TxnId(rid, seq), P, rs, tuple((k.encode(), b"v") for k in writes),
                     frozenset(TxnId(*d) for d in deps) | frozenset(TxnId(*w) for _, w in temp))


def six_chain_txns():
    """c1..c3 all write x (c2 is five dependent txns); c4 writes a, c5 writes a,b, c6 reads b."""
    c1 = [txn(0, 0, writes=["x"])]
    c2 = [txn(0, 1, writes=["x"])] + [txn(0, s, temp=[("x", (0, s - 1))], writes=["x"])
                                      for s in range(2, 6)]
    c3 = [txn(1, 0, writes=["x"])]
    c4 = [txn(1, 1, writes=["a"])]
    c5 = [txn(2, 0, writes=["a", "b"])]
    c6 = [txn(2, 1, reads=["b"])]
    return c1 + c2 + c3 + c4 + c5 + c6


# -- chains and staleness ---------------------------------------------------------------

def test_chains_are_dependency_components():
    chains = build_chains(six_chain_txns())
    assert [c.chain_id for c in chains] == [TxnId(0, 0), TxnId(0, 1), TxnId(1, 0), TxnId(1, 1),
                                            TxnId(2, 0), TxnId(2, 1)]
    assert [c.weight for c in chains] == [1, 5, 1, 1, 1, 1]
    assert not any(c.cross_epoch for c in chains)


def test_dependency_outside_epoch_marks_chain_stale():
    t = txn(0, 7, temp=[("x", (0, 3))])  # writer (0,3) is not in this epoch
    chains = build_chains([t])
    assert chains[0].cross_epoch
    stale, live = mark_invalid(chains, SnapshotStore())
    assert stale == chains and not live


def test_superseded_snapshot_read_is_stale():
    snap = SnapshotStore()
    snap.apply([(b"k", b"new")], 3)
    t = TxnRecord(TxnId(0, 0), P, ((b"k", ReadSource.snapshot(2)),))
    ok = TxnRecord(TxnId(0, 1), P, ((b"k", ReadSource.snapshot(3)),))
    stale, live = mark_invalid(build_chains([t, ok]), snap)
    assert [c.chain_id for c in stale] == [TxnId(0, 0)] and [c.chain_id for c in live] == [TxnId(0, 1)]


def test_prior_invalid_dependency_propagates():
    t = txn(1, 5, temp=[("x", (1, 4))])
    chains = build_chains([txn(1, 4, writes=["x"]), t])
    assert len(chains) == 1
    stale, _ = mark_invalid(chains, SnapshotStore(), prior_invalid={TxnId(9, 9)})
    assert not stale
    stale, _ = mark_invalid(chains, SnapshotStore(), prior_invalid={TxnId(1, 4)})
    assert stale


# -- graph --------------------------------------------------------------------------------

def test_six_chain_edges():
    g = ConflictGraph.from_chains(build_chains(six_chain_txns()))
    c = {i + 1: tid for i, tid in enumerate(g.ids)}
    want = {frozenset((c[a], c[b])) for a, b in [(1, 2), (2, 3), (1, 3), (4, 5), (5, 6)]}
    assert g.id_edges() == want


def test_same_replica_chains_conflict_too():
    g = ConflictGraph.from_chains(build_chains([txn(0, 0, writes=["k"]), txn(0, 1, reads=["k"])]))
    assert g.edges() == [(0, 1)]


def test_read_of_own_write_is_not_a_conflict_edge():
    a = txn(0, 0, reads=["k"], writes=["k"])
    b = txn(1, 0, reads=["k"])
    g = ConflictGraph.from_chains(build_chains([a, b]))
    assert g.edges() == [(0, 1)]  # b reads what a writes
    c = txn(2, 0, reads=["z"], writes=["z"])
    assert ConflictGraph.from_chains(build_chains([c])).edges() == []


def test_dump_parse_roundtrip():
    g = ConflictGraph.from_chains(build_chains(six_chain_txns()))
    h = ConflictGraph.parse(g.dump())
    assert (h.ids, h.weights, h.edges()) == (g.ids, g.weights, g.edges())
    with pytest.raises(ValueError):
        ConflictGraph.parse("x 1 2\n")


# -- MWIS -----------------------------------------------------------------------------------

@st.composite
def graphs(draw, max_n=12):
    n = draw(st.integers(0, max_n))
    weights = draw(st.lists(st.integers(1, 8), min_size=n, max_size=n))
    pairs = list(itertools.combinations(range(n), 2))
    edges = [p for p, keep in zip(pairs, draw(st.lists(st.booleans(), min_size=len(pairs),
                                                       max_size=len(pairs)))) if keep]
    return ConflictGraph.from_edges(weights, edges)


def enumerate_best(g):
    best = (-1, None)
    for r in range(len(g) + 1):
        for vs in itertools.combinations(range(len(g)), r):
            if g.is_independent(vs):
                w = g.weight_of(vs)
                if w > best[0] or (w == best[0] and list(vs) < best[1]):
                    best = (w, list(vs))
    return best


@given(graphs())
def test_exact_matches_enumeration_with_tie_rule(g):
    w, vs = enumerate_best(g)
    got = sorted(solve_mwis_exact(g))
    assert got == vs and g.weight_of(got) == w


@given(graphs(max_n=30))
def test_greedy_independent_maximal_and_bounded(g):
    s = solve_mwis_greedy(g)
    assert g.is_independent(s) and g.is_maximal(s)
    assert g.weight_of(s) * 1.0 >= sum(g.weights[v] / (g.degree(v) + 1) for v in range(len(g))) - 1e-9


def test_greedy_ratio_choice_on_six_chains():
    g = ConflictGraph.from_edges([1, 5, 1, 1, 1, 1], [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5)])
    assert solve_mwis_greedy(g) == {1, 3, 5}


def test_large_component_falls_back_to_greedy():
    rng = random.Random(1)
    n = 40
    edges = [(a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < 0.3]
    g = ConflictGraph.from_edges([rng.randint(1, 8) for _ in range(n)], edges)
    stats = MwisStats()
    s = solve_mwis_exact(g, cap=10, stats=stats)
    assert stats.fallbacks == 1 and s == solve_mwis_greedy(g)
    stats = MwisStats()
    s = solve_mwis_exact(g, cap=64, node_limit=5, stats=stats)
    assert stats.fallbacks == 1 and g.is_independent(s) and g.is_maximal(s)


def test_exact_beats_greedy_where_greedy_is_suboptimal():
    # star centre has the best ratio but the leaves together weigh more
    g = ConflictGraph.from_edges([7, 4, 4], [(0, 1), (0, 2)])
    assert solve_mwis_greedy(g) == {0} and solve_mwis_exact(g) == {1, 2}


# -- per-epoch filter --------------------------------------------------------------------------

def _batches(txns, hc=()):
    by_rid = {}
    for t in txns:
        by_rid.setdefault(t.tid.rid, []).append(t)
    return [Batch(BatchId(r, 0), tuple(ts), r in hc) for r, ts in sorted(by_rid.items())]


def test_filter_six_chains_invalidates_c1_c3_c5():
    res = filter_conflicts(_batches(six_chain_txns()), SnapshotStore())
    assert {t.tid for t in res.conflicting} == {TxnId(0, 0), TxnId(1, 0), TxnId(2, 0)}
    assert len(res.valid) == 7 and not res.stale and res.total == 10
    assert [t.tid for t in res.valid] == sorted(t.tid for t in res.valid)


def test_hc_batches_skip_checks():
    res = filter_conflicts(_batches(six_chain_txns(), hc={2}), SnapshotStore())
    assert {t.tid for t in res.hc_routed} == {TxnId(2, 0), TxnId(2, 1)}
    assert {t.tid for t in res.conflicting} == {TxnId(0, 0), TxnId(1, 0)}
    assert [t.tid for t in res.invalid] == sorted(t.tid for t in res.invalid)


def test_unknown_solver():
    with pytest.raises(ValueError):
        filter_conflicts([], SnapshotStore(), solver="magic")


@given(st.lists(st.tuples(st.integers(0, 2), st.sets(st.sampled_from("abcde"), max_size=2),
                          st.sets(st.sampled_from("abcde"), max_size=2)), max_size=15),
       st.sampled_from(["exact", "greedy"]))
def test_valid_chains_are_pairwise_disjoint(specs, solver):
    seqs = {0: 0, 1: 0, 2: 0}
    txns = []
    for rid, reads, writes in specs:
        txns.append(txn(rid, seqs[rid], reads=sorted(reads), writes=sorted(writes)))
        seqs[rid] += 1
    res = filter_conflicts(_batches(txns), SnapshotStore(), solver=solver)
    cs = res.valid_chains
    for a, b in itertools.combinations(cs, 2):
        assert not (a.write_keys & b.write_keys)
        assert not (a.read_key_set() - a.write_keys) & b.write_keys
        assert not (b.read_key_set() - b.write_keys) & a.write_keys
    assert res.total == len(txns)
