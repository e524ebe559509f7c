"""Transaction chains, staleness marking, conflict graphs and MWIS selection.

Everything here is a pure function of its inputs so every replica reaches the
same valid/invalid split for an epoch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Batch, TxnId, TxnRecord

DEFAULT_EXACT_CAP = 64
DEFAULT_NODE_LIMIT = 200_000


# -- chains -------------------------------------------------------------------

@dataclass
class TransactionChain:
    chain_id: TxnId
    rid: int
    members: list[TxnRecord]
    read_keys: set[tuple[bytes, int]] = field(default_factory=set)
    write_keys: set[bytes] = field(default_factory=set)
    cross_epoch: bool = False  # some member depends on a txn outside this epoch

    @property
    def weight(self) -> int:
        return len(self.members)

    @property
    def tids(self) -> list[TxnId]:
        return [t.tid for t in self.members]

    def read_key_set(self) -> set[bytes]:
        return {k for k, _ in self.read_keys}


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # the smaller tid becomes root so roots are chain ids
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def build_chains(txns: Iterable[TxnRecord]) -> list[TransactionChain]:
    """Connected components of the dependency relation, sorted by chain id."""
    txns = sorted(txns, key=lambda t: t.tid)
    uf = _UnionFind(t.tid for t in txns)
    outside: set[TxnId] = set()
    for t in txns:
        for d in t.dependencies:
            if d in uf.parent:
                uf.union(t.tid, d)
            else:
                outside.add(t.tid)
    groups: dict[TxnId, TransactionChain] = {}
    for t in txns:
        root = uf.find(t.tid)
        c = groups.get(root)
        if c is None:
            c = groups[root] = TransactionChain(root, root.rid, [])
        c.members.append(t)
        c.read_keys.update(t.snapshot_reads())
        c.write_keys.update(t.write_keys)
        if t.tid in outside:
            c.cross_epoch = True
    return [groups[k] for k in sorted(groups)]


def mark_invalid(chains: Sequence[TransactionChain], snapshot, prior_invalid=frozenset()):
    """Split chains into (stale, live).

    Stale means a member's snapshot read was superseded by a later committed
    write, or a member depends on a transaction outside this epoch or on one
    listed in ``prior_invalid``.
    """
    stale, live = [], []
    version = snapshot.version
    for c in chains:
        bad = c.cross_epoch
        if not bad:
            for k, e in c.read_keys:
                if version(k) > e:
                    bad = True
                    break
        if not bad and prior_invalid:
            bad = any(d in prior_invalid for t in c.members for d in t.dependencies)
        (stale if bad else live).append(c)
    return stale, live


# -- conflict graph -----------------------------------------------------------

class ConflictGraph:
    """Undirected weighted graph with vertices numbered in chain-id order."""

    def __init__(self, ids: Sequence, weights: Sequence[int]):
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self.ids = [ids[i] for i in order]
        self.weights = [weights[i] for i in order]
        self.adj: list[set[int]] = [set() for _ in self.ids]

    def __len__(self):
        return len(self.ids)

    def add_edge(self, a: int, b: int):
        if a != b:
            self.adj[a].add(b)
            self.adj[b].add(a)

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a in range(len(self.adj)) for b in self.adj[a] if a < b)

    def id_edges(self) -> set[frozenset]:
        return {frozenset((self.ids[a], self.ids[b])) for a, b in self.edges()}

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def weight_of(self, vs: Iterable[int]) -> int:
        return sum(self.weights[v] for v in vs)

    def is_independent(self, vs) -> bool:
        vs = set(vs)
        return all(not (self.adj[v] & vs) for v in vs)

    def is_maximal(self, vs) -> bool:
        vs = set(vs)
        return all(v in vs or self.adj[v] & vs for v in range(len(self)))

    @classmethod
    def from_edges(cls, weights: Sequence[int], edges: Iterable[tuple[int, int]], ids=None):
        g = cls(list(ids) if ids is not None else list(range(len(weights))), list(weights))
        pos = {x: i for i, x in enumerate(g.ids)}
        src = list(ids) if ids is not None else list(range(len(weights)))
        for a, b in edges:
            g.add_edge(pos[src[a]], pos[src[b]])
        return g

    @classmethod
    def from_chains(cls, chains: Sequence[TransactionChain]) -> "ConflictGraph":
        g = cls([c.chain_id for c in chains], [c.weight for c in chains])
        pos = {x: i for i, x in enumerate(g.ids)}
        readers: dict[bytes, list[int]] = {}
        writers: dict[bytes, list[int]] = {}
        for c in chains:
            v = pos[c.chain_id]
            for k in c.write_keys:
                writers.setdefault(k, []).append(v)
            for k in c.read_key_set():
                if k not in c.write_keys:
                    readers.setdefault(k, []).append(v)
        for k, ws in writers.items():
            for i, a in enumerate(ws):
                for b in ws[i + 1:]:
                    g.add_edge(a, b)
            for r in readers.get(k, ()):
                for a in ws:
                    g.add_edge(r, a)
        return g

    def components(self) -> list[list[int]]:
        seen = [False] * len(self)
        out = []
        for s in range(len(self)):
            if seen[s]:
                continue
            seen[s] = True
            comp, stack = [], [s]
            while stack:
                v = stack.pop()
                comp.append(v)
                for u in self.adj[v]:
                    if not seen[u]:
                        seen[u] = True
                        stack.append(u)
            out.append(sorted(comp))
        return out

    # text form: "v <id> <weight>" and "e <id> <id>" lines
    def dump(self) -> str:
        lines = [f"v {self.ids[v]} {self.weights[v]}" for v in range(len(self))]
        lines += [f"e {self.ids[a]} {self.ids[b]}" for a, b in self.edges()]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def parse(cls, text: str) -> "ConflictGraph":
        ids, weights, edges = [], [], []
        for n, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v" and len(parts) == 3:
                ids.append(_parse_id(parts[1]))
                weights.append(int(parts[2]))
            elif parts[0] == "e" and len(parts) == 3:
                edges.append((_parse_id(parts[1]), _parse_id(parts[2])))
            else:
                raise ValueError(f"line {n}: cannot parse {line!r}")
        g = cls(ids, weights)
        pos = {x: i for i, x in enumerate(g.ids)}
        for a, b in edges:
            g.add_edge(pos[a], pos[b])
        return g


def _parse_id(s: str):
    if "." in s:
        r, q = s.split(".", 1)
        return TxnId(int(r), int(q))
    return int(s)


# -- MWIS ----------------------------------------------------------------------

@dataclass
class MwisStats:
    nodes: int = 0
    exact_components: int = 0
    greedy_components: int = 0
    fallbacks: int = 0  # components handed to greedy because of size or node limit


def solve_mwis_greedy(g: ConflictGraph, vertices: Iterable[int] | None = None,
                      stats: MwisStats | None = None) -> set[int]:
    """Repeatedly take the vertex with the best weight/(degree+1); lowest id breaks ties."""
    alive = set(range(len(g))) if vertices is None else set(vertices)
    deg = {v: len(g.adj[v] & alive) for v in alive}
    chosen = set()
    while alive:
        best = None
        for v in sorted(alive):
            if best is None:
                best = v
                continue
            # w_v/(d_v+1) > w_b/(d_b+1) without floating point
            if g.weights[v] * (deg[best] + 1) > g.weights[best] * (deg[v] + 1):
                best = v
        chosen.add(best)
        gone = (g.adj[best] & alive) | {best}
        alive -= gone
        for u in gone:
            for x in g.adj[u] & alive:
                deg[x] -= 1
        if stats is not None:
            stats.nodes += 1
    if stats is not None:
        stats.greedy_components += 1
    return chosen


class _NodeLimit(Exception):
    pass


def _exact_component(g: ConflictGraph, comp: list[int], stats: MwisStats,
                     node_limit: int) -> set[int]:
    k = len(comp)
    local = {v: i for i, v in enumerate(comp)}
    w = [g.weights[v] for v in comp]
    nbr = [0] * k
    for i, v in enumerate(comp):
        m = 0
        for u in g.adj[v]:
            m |= 1 << local[u]
        nbr[i] = m
    best_w = -1
    best_set = 0
    nodes = 0

    def bound(cand):
        # greedy clique cover: an independent set takes at most one per clique
        total = 0
        rest = cand
        while rest:
            v = (rest & -rest).bit_length() - 1
            rest &= ~(1 << v)
            top = w[v]
            c = rest & nbr[v]
            while c:
                u = (c & -c).bit_length() - 1
                rest &= ~(1 << u)
                if w[u] > top:
                    top = w[u]
                c &= nbr[u]
            total += top
        return total

    def rec(cand, cur, cur_w):
        nonlocal best_w, best_set, nodes
        nodes += 1
        if nodes > node_limit:
            raise _NodeLimit
        if not cand:
            if cur_w > best_w:
                best_w, best_set = cur_w, cur
            return
        if cur_w + bound(cand) <= best_w:
            return
        v = (cand & -cand).bit_length() - 1
        bit = 1 << v
        rec(cand & ~bit & ~nbr[v], cur | bit, cur_w + w[v])
        if cand & nbr[v]:
            # skipping an isolated vertex can never help
            rec(cand & ~bit, cur, cur_w)

    try:
        rec((1 << k) - 1, 0, 0)
    finally:
        stats.nodes += nodes
    stats.exact_components += 1
    return {comp[i] for i in range(k) if best_set >> i & 1}


def solve_mwis_exact(g: ConflictGraph, cap: int = DEFAULT_EXACT_CAP,
                     node_limit: int = DEFAULT_NODE_LIMIT,
                     stats: MwisStats | None = None) -> set[int]:
    """Maximum-weight independent set; lexicographically smallest id list among optima.

    Each connected component is solved separately.  A component larger than
    ``cap`` vertices, or one whose search exceeds ``node_limit`` nodes, is
    solved greedily instead and counted in ``stats.fallbacks``.
    """
    stats = stats if stats is not None else MwisStats()
    out: set[int] = set()
    for comp in g.components():
        if len(comp) == 1:
            out.add(comp[0])
            continue
        if len(comp) > cap:
            stats.fallbacks += 1
            out |= solve_mwis_greedy(g, comp, stats)
            continue
        try:
            out |= _exact_component(g, comp, stats, node_limit)
        except _NodeLimit:
            stats.fallbacks += 1
            out |= solve_mwis_greedy(g, comp, stats)
    return out


# -- per-epoch filter ----------------------------------------------------------

@dataclass
class FilterResult:
    valid: list[TxnRecord]          # canonical (rid, seq) order
    stale: list[TxnRecord]
    conflicting: list[TxnRecord]
    hc_routed: list[TxnRecord]      # taken from high-contention batches, never checked
    chains: int = 0
    graph_vertices: int = 0
    graph_edges: int = 0
    # work units that drive the commit cost model
    chain_ops: int = 0
    stale_ops: int = 0
    graph_ops: int = 0
    mwis_ops: int = 0
    mwis_fallbacks: int = 0
    valid_chains: list[TransactionChain] = field(default_factory=list)

    @property
    def invalid(self) -> list[TxnRecord]:
        return sorted(self.stale + self.conflicting + self.hc_routed, key=lambda t: t.tid)

    @property
    def total(self) -> int:
        return len(self.valid) + len(self.stale) + len(self.conflicting) + len(self.hc_routed)


def filter_conflicts(batches: Sequence[Batch], snapshot, prior_invalid=frozenset(),
                     solver: str = "exact", exact_cap: int = DEFAULT_EXACT_CAP,
                     node_limit: int = DEFAULT_NODE_LIMIT) -> FilterResult:
    normal: list[TxnRecord] = []
    hc: list[TxnRecord] = []
    for b in batches:
        (hc if b.hc_flag else normal).extend(b.txns)
    chains = build_chains(normal)
    stale_c, live = mark_invalid(chains, snapshot, prior_invalid)
    g = ConflictGraph.from_chains(live)
    stats = MwisStats()
    if solver == "exact":
        keep = solve_mwis_exact(g, exact_cap, node_limit, stats)
    elif solver == "greedy":
        keep = solve_mwis_greedy(g, stats=stats)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    by_id = {c.chain_id: c for c in live}
    valid_chains = [by_id[g.ids[v]] for v in sorted(keep)]
    lost = [by_id[g.ids[v]] for v in range(len(g)) if v not in keep]

    def flat(cs):
        return sorted((t for c in cs for t in c.members), key=lambda t: t.tid)

    return FilterResult(
        valid=flat(valid_chains),
        stale=flat(stale_c),
        conflicting=flat(lost),
        hc_routed=sorted(hc, key=lambda t: t.tid),
        chains=len(chains),
        graph_vertices=len(g),
        graph_edges=sum(len(a) for a in g.adj) // 2,
        chain_ops=len(normal),
        stale_ops=sum(len(c.read_keys) for c in chains),
        graph_ops=sum(len(c.read_keys) + len(c.write_keys) for c in live),
        mwis_ops=stats.nodes,
        mwis_fallbacks=stats.fallbacks,
        valid_chains=valid_chains,
    )
