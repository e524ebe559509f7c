"""Catalog of deterministic one-shot procedures.

A procedure body receives a :class:`TxnContext` and its decoded arguments and
may only ``read``/``write``/``delete`` keys through the context.  Each
procedure also has a static prober that reports, from the arguments alone, a
superset of the keys it reads and writes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

from .core import Procedure


class ProcedureError(Exception):
    pass


class DeterminismViolation(ProcedureError):
    """A procedure touched a key outside its declared lock set."""


def encode_args(args: dict) -> bytes:
    return json.dumps(args, sort_keys=True, separators=(",", ":")).encode()


@lru_cache(maxsize=65536)
def decode_args(params: bytes) -> dict:
    """Decoded arguments; cached, so callers must treat the dict as read-only."""
    if not params:
        return {}
    try:
        args = json.loads(params)
    except ValueError as e:
        raise ProcedureError(f"undecodable arguments: {e}") from None
    if not isinstance(args, dict):
        raise ProcedureError("arguments are not an object")
    return args


def make(name: str, **args) -> Procedure:
    return Procedure(name, encode_args(args))


def as_key(k) -> bytes:
    return k if isinstance(k, bytes) else k.encode()


def to_int(v: bytes | None) -> int:
    return 0 if v is None else int(v)


def from_int(i: int) -> bytes:
    return str(i).encode()


class TxnContext:
    """Read/write interface handed to procedure bodies.

    ``reader(key)`` returns ``(value, source)``.  Only the first read of a key
    that the transaction has not itself written is recorded.
    """

    def __init__(self, reader, allowed_reads=None, allowed_writes=None):
        self._reader = reader
        self._allowed_reads = allowed_reads
        self._allowed_writes = allowed_writes
        self.reads: dict[bytes, tuple] = {}
        self.writes: dict[bytes, bytes | None] = {}

    def read(self, key) -> bytes | None:
        key = as_key(key)
        if key in self.writes:
            return self.writes[key]
        if key in self.reads:
            return self.reads[key][0]
        if self._allowed_reads is not None and key not in self._allowed_reads:
            raise DeterminismViolation(f"read of undeclared key {key!r}")
        value, src = self._reader(key)
        self.reads[key] = (value, src)
        return value

    def write(self, key, value: bytes | None):
        key = as_key(key)
        if self._allowed_writes is not None and key not in self._allowed_writes:
            raise DeterminismViolation(f"write of undeclared key {key!r}")
        self.writes[key] = value

    def delete(self, key):
        self.write(key, None)

    def read_int(self, key) -> int:
        return to_int(self.read(key))

    def write_int(self, key, i: int):
        self.write(key, from_int(i))


@dataclass(frozen=True)
class ProcedureDef:
    name: str
    body: Callable[[TxnContext, dict], None]
    probe: Callable[[dict], tuple[list[bytes], list[bytes]]]


class Registry:
    def __init__(self):
        self._defs: dict[str, ProcedureDef] = {}

    def register(self, name, body, probe):
        if probe is None:
            raise ProcedureError(f"procedure {name} cannot declare its key sets")
        self._defs[name] = ProcedureDef(name, body, probe)

    def __contains__(self, name):
        return name in self._defs

    def names(self):
        return sorted(self._defs)

    def get(self, name) -> ProcedureDef:
        try:
            return self._defs[name]
        except KeyError:
            raise ProcedureError(f"unknown procedure {name!r}") from None

    def run(self, proc: Procedure, ctx: TxnContext):
        d = self.get(proc.name)
        d.body(ctx, decode_args(proc.params))
        return ctx

    def probe(self, proc: Procedure) -> tuple[tuple[bytes, ...], tuple[bytes, ...]]:
        reads, writes = self.get(proc.name).probe(decode_args(proc.params))
        return tuple(map(as_key, reads)), tuple(map(as_key, writes))

    def copy(self) -> "Registry":
        r = Registry()
        r._defs = dict(self._defs)
        return r


# -- built-in procedures -------------------------------------------------------

def _put(ctx, a):
    ctx.write(a["key"], a["value"].encode())


def _put_probe(a):
    return [], [a["key"]]


def _delete(ctx, a):
    ctx.delete(a["key"])


def _increment(ctx, a):
    ctx.write_int(a["key"], ctx.read_int(a["key"]) + a.get("by", 1))


def _rw_probe_key(a):
    return [a["key"]], [a["key"]]


def _copy_plus(ctx, a):
    ctx.write_int(a["dst"], ctx.read_int(a["src"]) + a.get("delta", 0))


def _copy_plus_probe(a):
    return [a["src"]], [a["dst"]]


def _transfer(ctx, a):
    amt = a["amount"]
    ctx.write_int(a["src"], ctx.read_int(a["src"]) - amt)
    ctx.write_int(a["dst"], ctx.read_int(a["dst"]) + amt)


def _transfer_probe(a):
    keys = [a["src"], a["dst"]]
    return keys, keys


def ycsb_value(salt: str, seen: list[bytes], size: int) -> bytes:
    """Write payload derived from the salt and every value read so far."""
    h = hashlib.blake2b(digest_size=8)
    h.update(salt.encode())
    for v in seen:
        h.update(b"\xff" if v is None else v)
    d = h.hexdigest().encode()
    return (d * (size // len(d) + 1))[:size] if size > len(d) else d


def _ycsb(ctx, a):
    seen = []
    size = a.get("size", 16)
    for op in a["ops"]:
        if op[0] == "r":
            seen.append(ctx.read(op[1]))
        else:
            ctx.write(op[1], ycsb_value(op[2], seen, size))


def _ycsb_probe(a):
    reads = [op[1] for op in a["ops"] if op[0] == "r"]
    writes = [op[1] for op in a["ops"] if op[0] == "w"]
    return reads, writes


# micro TPC-C: key layout shared with the workload generator
def tpcc_keys_new_order(a):
    w, d = a["w"], a["d"]
    reads = [f"d:{w}:{d}:next_o_id"]
    writes = [f"d:{w}:{d}:next_o_id", f"o:{w}:{d}:{a['nonce']}"]
    for item, _qty in a["lines"]:
        reads += [f"i:{item}:price", f"s:{w}:{item}:qty"]
        writes.append(f"s:{w}:{item}:qty")
    return reads, writes


def _new_order(ctx, a):
    w, d = a["w"], a["d"]
    oid = ctx.read_int(f"d:{w}:{d}:next_o_id")
    ctx.write_int(f"d:{w}:{d}:next_o_id", oid + 1)
    total = 0
    for item, qty in a["lines"]:
        price = ctx.read_int(f"i:{item}:price")
        stock = ctx.read_int(f"s:{w}:{item}:qty")
        ctx.write_int(f"s:{w}:{item}:qty", stock - qty)
        total += price * qty
    ctx.write(f"o:{w}:{d}:{a['nonce']}", f"{oid}:{a['c']}:{total}".encode())


def tpcc_keys_payment(a):
    w, d, c = a["w"], a["d"], a["c"]
    keys = [f"w:{w}:ytd", f"d:{w}:{d}:ytd", f"c:{w}:{d}:{c}:balance"]
    return keys, keys


def _payment(ctx, a):
    w, d, c, amt = a["w"], a["d"], a["c"], a["amount"]
    ctx.write_int(f"w:{w}:ytd", ctx.read_int(f"w:{w}:ytd") + amt)
    ctx.write_int(f"d:{w}:{d}:ytd", ctx.read_int(f"d:{w}:{d}:ytd") + amt)
    bal = f"c:{w}:{d}:{c}:balance"
    ctx.write_int(bal, ctx.read_int(bal) - amt)


def default_registry() -> Registry:
    r = Registry()
    r.register("put", _put, _put_probe)
    r.register("delete", _delete, _put_probe)
    r.register("increment", _increment, _rw_probe_key)
    r.register("copy_plus", _copy_plus, _copy_plus_probe)
    r.register("transfer", _transfer, _transfer_probe)
    r.register("ycsb", _ycsb, _ycsb_probe)
    r.register("tpcc_new_order", _new_order, tpcc_keys_new_order)
    r.register("tpcc_payment", _payment, tpcc_keys_payment)
    return r


REGISTRY = default_registry()
