"""Versioned committed snapshot plus the per-epoch overlay of local optimistic writes."""
from __future__ import annotations

import threading
import zlib
from typing import Iterable, Iterator

from .codec import decode_store_line, encode_store_line
from .core import NEVER, ReadSource, TxnId

_MASK = (1 << 64) - 1


def _entry_hash(key: bytes, value: bytes | None, eid: int) -> int:
    blob = b"".join((len(key).to_bytes(4, "little"), key,
                     b"\x00" if value is None else b"\x01" + value,
                     eid.to_bytes(8, "little", signed=True)))
    return zlib.crc32(blob) | zlib.adler32(blob) << 32


class SnapshotStore:
    """key -> (value, last_write_eid).

    Deleted keys keep a tombstone (value ``None``) so that their version stays
    comparable; tombstones are invisible to readers and excluded from dumps.
    """

    def __init__(self, items: Iterable[tuple[bytes, bytes]] = (), eid: int = NEVER):
        self.data: dict[bytes, tuple[bytes | None, int]] = {}
        self.current_eid = 0
        for k, v in items:
            self.data[k] = (v, eid)

    def _put(self, key, value, eid):
        self.data[key] = (value, eid)

    def get(self, key: bytes) -> bytes | None:
        e = self.data.get(key)
        return None if e is None else e[0]

    def version(self, key: bytes) -> int:
        e = self.data.get(key)
        return NEVER if e is None else e[1]

    def apply(self, writes: Iterable[tuple[bytes, bytes | None]], eid: int) -> int:
        """Apply writes in order, stamping them with ``eid``; returns writes applied."""
        n = 0
        for k, v in writes:
            if v is None:
                old = self.data.get(k)
                if old is None or old[0] is None:
                    continue  # delete of an absent key is a no-op
            self._put(k, v, eid)
            n += 1
        return n

    def items(self) -> Iterator[tuple[bytes, bytes, int]]:
        """Live entries sorted bytewise by key."""
        for k in sorted(self.data):
            v, e = self.data[k]
            if v is not None:
                yield k, v, e

    def values(self) -> dict[bytes, bytes]:
        return {k: v for k, (v, _) in self.data.items() if v is not None}

    def digest(self) -> int:
        """Order-independent 64-bit fingerprint of all entries, tombstones included."""
        d = 0
        for k, (v, e) in self.data.items():
            d += _entry_hash(k, v, e)
        return d & _MASK

    def copy(self) -> "SnapshotStore":
        s = SnapshotStore()
        s.data = dict(self.data)
        s.current_eid = self.current_eid
        return s

    def dump_lines(self) -> list[str]:
        return [encode_store_line(k, v, e) for k, v, e in self.items()]

    def dump(self, path):
        with open(path, "w") as fh:
            for line in self.dump_lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path) -> "SnapshotStore":
        s = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = decode_store_line(line)
                    s._put(rec.key, rec.value, rec.eid)
        if s.data:
            s.current_eid = max(e for _, e in s.data.values()) + 1
        return s

    def __eq__(self, other):
        if not isinstance(other, SnapshotStore):
            return NotImplemented
        # identical dicts imply identical live entries; the sorted walk only runs on a mismatch
        return self.data == other.data or list(self.items()) == list(other.items())


class Storage:
    """One replica's snapshot together with its TempState overlay.

    ``read`` and ``temp_write`` are guarded by a mutex so concurrent executor
    workers observe each operation atomically.
    """

    def __init__(self, snapshot: SnapshotStore | None = None):
        self.snapshot = snapshot if snapshot is not None else SnapshotStore()
        self.temp: dict[bytes, tuple[bytes | None, TxnId]] = {}
        self.lock = threading.RLock()

    @property
    def current_eid(self) -> int:
        return self.snapshot.current_eid

    def read(self, key: bytes) -> tuple[bytes | None, ReadSource]:
        with self.lock:
            t = self.temp.get(key)
            if t is not None:
                return t[0], ReadSource.temp(t[1])
            e = self.snapshot.data.get(key)
            if e is None:
                return None, ReadSource.snapshot(NEVER)
            return e[0], ReadSource.snapshot(e[1])

    def temp_write(self, key: bytes, value: bytes | None, writer: TxnId):
        with self.lock:
            self.temp[key] = (value, writer)

    def apply_committed(self, writes, eid: int) -> int:
        return self.snapshot.apply(writes, eid)

    def advance_epoch(self) -> int:
        self.snapshot.current_eid += 1
        self.temp.clear()
        return self.snapshot.current_eid
