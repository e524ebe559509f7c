"""Optional asyncio TCP host for a replica, for manual interop runs.

Each process hosts one :class:`Replica` on one event loop; peers exchange the
same length-prefixed frames the simulator's wire round-trip uses.  Outgoing
connections are opened lazily and retried; a frame that cannot be delivered
is dropped, which the protocol already tolerates (fetches and heartbeats
retry).
"""
from __future__ import annotations

import asyncio
import logging
import random

from .messages import decode_stream, encode_message
from .procedures import REGISTRY
from .replica import Replica, ReplicaConfig, ReplicaHooks
from .storage import SnapshotStore

log = logging.getLogger(__name__)


class _LoopEnv:
    def __init__(self, node: "TcpNode"):
        self.node = node
        self.rid = node.rid
        self.peers = [p for p in range(len(node.addrs)) if p != node.rid]

    def now(self) -> int:
        return int((self.node.loop.time() - self.node.t0) * 1e6)

    def call_later(self, delay: int, fn):
        self.node.loop.call_later(max(0, int(delay)) / 1e6, fn)

    def send(self, dst: int, msg):
        self.node.send_frame(dst, encode_message(msg))

    def broadcast(self, msg):
        frame = encode_message(msg)
        for p in self.peers:
            self.node.send_frame(p, frame)


class TcpNode:
    """One replica reachable at ``addrs[rid]``; ``addrs`` lists every replica's (host, port)."""

    def __init__(self, rid: int, addrs: list[tuple[str, int]], cfg: ReplicaConfig,
                 initial: SnapshotStore, hooks: ReplicaHooks | None = None,
                 registry=REGISTRY, seed: int = 0):
        self.rid = rid
        self.addrs = addrs
        self.loop = asyncio.get_running_loop()
        self.t0 = self.loop.time()
        self.replica = Replica(rid, cfg, _LoopEnv(self), initial, registry,
                               random.Random(f"{seed}:raft:{rid}"), hooks)
        self._out: dict[int, asyncio.Queue] = {}
        self._tasks: list[asyncio.Task] = []
        self.server = None

    async def start(self):
        host, port = self.addrs[self.rid]
        self.server = await asyncio.start_server(self._serve, host, port)
        self.replica.start()

    async def close(self):
        for t in self._tasks:
            t.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()

    def send_frame(self, dst: int, frame: bytes):
        q = self._out.get(dst)
        if q is None:
            q = self._out[dst] = asyncio.Queue()
            self._tasks.append(self.loop.create_task(self._pump(dst, q)))
        q.put_nowait(frame)

    async def _pump(self, dst: int, q: asyncio.Queue):
        writer = None
        while True:
            frame = await q.get()
            for _ in range(2):
                try:
                    if writer is None:
                        _, writer = await asyncio.open_connection(*self.addrs[dst])
                    writer.write(frame)
                    await writer.drain()
                    break
                except OSError as e:
                    log.debug("replica %d -> %d: %s", self.rid, dst, e)
                    writer = None
                    await asyncio.sleep(0.05)

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        buf = b""
        try:
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                msgs, buf = decode_stream(buf + chunk)
                for m in msgs:
                    self.replica.deliver(m)
        finally:
            writer.close()
