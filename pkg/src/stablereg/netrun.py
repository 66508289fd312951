"""Real-network runtime: UDP datagrams plus one TCP connection per bulk
transfer, driving the same node code as the simulator.

A NetRuntime hosts one or more nodes inside a single-threaded selector loop;
node ids are their bound "host:port" addresses. The benchmark's net backend
and the service's live clusters run whole deployments in one process over
loopback; `serve-node` runs one node per process for real deployments.
"""

from __future__ import annotations

import heapq
import selectors
import socket
import struct
import time
from collections import deque

from .config import ScenarioConfig
from .core import StableRegError, client_hw_addr
from .node import ClientNode, ServerNode
from .runtime import TrafficCounters
from .wire import (Frame, FrameKind, WireError, decode_frame, encode_frame)

_LEN = struct.Struct(">I")
MAX_DATAGRAM = 65000


class BindError(StableRegError):
    """Could not bind the configured address."""


class _TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False


class _BulkConn:
    """One in-flight TCP transfer, either direction.

    Streams start with a [u16 length][sender address label] header so the
    accepting side can attribute frames to their source node.
    """

    def __init__(self, sock, on_frame=None, born_ms: float = 0.0):
        self.sock = sock
        self.on_frame = on_frame  # callback for the response (client side)
        self.inbuf = b""
        self.outbuf = b""
        self.born_ms = born_ms
        self.node_label = None   # local node this conn was accepted for
        self.peer_label = None   # sender label parsed from the stream header


def _addr_str(addr) -> str:
    return f"{addr[0]}:{addr[1]}"


def _parse_addr(label: str):
    host, port = label.rsplit(":", 1)
    return (host, int(port))


class NetRuntime:
    """Event loop over real sockets; env interface shared by all its nodes."""

    def __init__(self):
        self.selector = selectors.DefaultSelector()
        self.nodes: dict[str, object] = {}
        self.udp: dict[str, socket.socket] = {}
        self.tcp_listen: dict[str, socket.socket] = {}
        self._timers: list = []
        self._seq = 0
        self._reply_conn: _BulkConn | None = None
        self._bulk_conns: set[_BulkConn] = set()
        self._last_sweep = 0.0
        self._stop = False
        self.bulk_conn_ttl_ms = 60_000.0
        self.counters = TrafficCounters()
        self._pending_calls: deque = deque()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self.selector.register(self._wake_r, selectors.EVENT_READ, ("wake",))

    # -- node management ---------------------------------------------------------

    def bind(self, host: str, port: int) -> str:
        """Bind UDP and TCP sockets; returns the actual address label."""
        udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            udp.bind((host, port))
        except OSError as exc:
            udp.close()
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        actual_port = udp.getsockname()[1]
        tcp = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        tcp.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            tcp.bind((host, actual_port))
        except OSError as exc:
            udp.close()
            tcp.close()
            raise BindError(f"cannot bind {host}:{actual_port}/tcp: {exc}") from exc
        tcp.listen(32)
        udp.setblocking(False)
        tcp.setblocking(False)
        label = _addr_str(udp.getsockname())
        self.udp[label] = udp
        self.tcp_listen[label] = tcp
        self.selector.register(udp, selectors.EVENT_READ, ("udp", label))
        self.selector.register(tcp, selectors.EVENT_READ, ("listen", label))
        return label

    def attach(self, label: str, node) -> None:
        self.nodes[label] = node

    # -- env interface -------------------------------------------------------------

    def now(self) -> float:
        return time.monotonic() * 1000.0

    def set_timer(self, node_id: str, delay_ms: float, fn) -> _TimerHandle:
        handle = _TimerHandle()
        self._seq += 1
        heapq.heappush(self._timers,
                       (self.now() + delay_ms, self._seq, handle, fn))
        return handle

    def cancel_timer(self, handle: _TimerHandle) -> None:
        handle.cancelled = True

    def send(self, src: str, dst: str, frame: Frame) -> None:
        data = encode_frame(frame)
        if len(data) > MAX_DATAGRAM:
            self.send_bulk(src, dst, frame)
            return
        self.counters.record(frame, len(data))
        sock = self.udp.get(src)
        if sock is None:
            return
        try:
            sock.sendto(data, _parse_addr(dst))
        except OSError:
            pass  # unreachable peer behaves like a lost datagram

    def send_bulk(self, src: str, dst: str, frame: Frame) -> None:
        data = encode_frame(frame)
        self.counters.record(frame, len(data))
        if (self._reply_conn is not None
                and frame.kind in (FrameKind.RESP, FrameKind.BULK_RESP)):
            # Response to the request currently being delivered on this
            # connection: write back on the same stream.
            conn = self._reply_conn
            conn.outbuf += _LEN.pack(len(data)) + data
            self._arm_write(conn)
            return
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setblocking(False)
        # Requests await a response frame; anything else is one-way.
        on_frame = None
        if frame.kind == FrameKind.BULK_REQ:
            on_frame = lambda fr: self._deliver(dst, src, fr)
        conn = _BulkConn(sock, on_frame=on_frame, born_ms=self.now())
        label = src.encode()
        conn.outbuf = (struct.pack(">H", len(label)) + label
                       + _LEN.pack(len(data)) + data)
        try:
            sock.connect_ex(_parse_addr(dst))
        except OSError:
            sock.close()
            return
        self._bulk_conns.add(conn)
        self.selector.register(sock, selectors.EVENT_READ | selectors.EVENT_WRITE,
                               ("bulk", conn))

    # -- loop internals ---------------------------------------------------------------

    def _arm_write(self, conn: _BulkConn) -> None:
        try:
            self.selector.modify(conn.sock,
                                 selectors.EVENT_READ | selectors.EVENT_WRITE,
                                 ("bulk", conn))
        except KeyError:
            self.selector.register(conn.sock,
                                   selectors.EVENT_READ | selectors.EVENT_WRITE,
                                   ("bulk", conn))

    def _deliver(self, src: str, dst: str, frame: Frame) -> None:
        node = self.nodes.get(dst)
        if node is not None:
            node.on_frame(src, frame)

    def _close_conn(self, conn: _BulkConn) -> None:
        try:
            self.selector.unregister(conn.sock)
        except (KeyError, ValueError):
            pass
        conn.sock.close()
        self._bulk_conns.discard(conn)

    def _handle_udp(self, label: str) -> None:
        sock = self.udp[label]
        for _ in range(64):  # drain a burst per wakeup
            try:
                data, addr = sock.recvfrom(65535)
            except BlockingIOError:
                return
            except OSError:
                return
            try:
                frame = decode_frame(data)
            except WireError:
                continue
            self._deliver(_addr_str(addr), label, frame)

    def _handle_accept(self, label: str) -> None:
        listener = self.tcp_listen[label]
        try:
            sock, _ = listener.accept()
        except OSError:
            return
        sock.setblocking(False)
        conn = _BulkConn(sock, born_ms=self.now())
        conn.node_label = label
        self._bulk_conns.add(conn)
        self.selector.register(sock, selectors.EVENT_READ, ("bulk", conn))

    def _handle_bulk(self, conn: _BulkConn, mask: int) -> None:
        if mask & selectors.EVENT_WRITE and conn.outbuf:
            try:
                sent = conn.sock.send(conn.outbuf)
                conn.outbuf = conn.outbuf[sent:]
            except OSError:
                self._close_conn(conn)
                return
            if not conn.outbuf:
                if conn.on_frame is None:
                    self._close_conn(conn)  # server side: response flushed
                    return
                self.selector.modify(conn.sock, selectors.EVENT_READ,
                                     ("bulk", conn))
        if mask & selectors.EVENT_READ:
            try:
                chunk = conn.sock.recv(1 << 16)
            except OSError:
                self._close_conn(conn)
                return
            if not chunk:
                self._close_conn(conn)
                return
            conn.inbuf += chunk
            if conn.node_label is not None and conn.peer_label is None:
                # Accepted stream: parse the sender label header first.
                if len(conn.inbuf) < 2:
                    return
                n = struct.unpack_from(">H", conn.inbuf)[0]
                if len(conn.inbuf) < 2 + n:
                    return
                conn.peer_label = conn.inbuf[2:2 + n].decode(errors="replace")
                conn.inbuf = conn.inbuf[2 + n:]
            while len(conn.inbuf) >= 4:
                length = _LEN.unpack_from(conn.inbuf)[0]
                if length > (1 << 30) or len(conn.inbuf) < 4 + length:
                    break
                blob, conn.inbuf = conn.inbuf[4:4 + length], conn.inbuf[4 + length:]
                try:
                    frame = decode_frame(blob)
                except WireError:
                    continue
                if conn.on_frame is not None:
                    self._close_conn(conn)
                    conn.on_frame(frame)
                    return
                # Accepted side: deliver, reply (if any) on this connection.
                self._reply_conn = conn
                try:
                    self._deliver(conn.peer_label, conn.node_label, frame)
                finally:
                    self._reply_conn = None

    def _fire_timers(self) -> None:
        now = self.now()
        while self._timers and self._timers[0][0] <= now:
            _, _, handle, fn = heapq.heappop(self._timers)
            if not handle.cancelled:
                fn()
        if now - self._last_sweep > 5_000.0:
            self._last_sweep = now
            for conn in [c for c in self._bulk_conns
                         if now - c.born_ms > self.bulk_conn_ttl_ms]:
                self._close_conn(conn)

    def call_soon_threadsafe(self, fn) -> None:
        """Schedule fn to run inside the loop thread; safe from any thread."""
        self._pending_calls.append(fn)
        try:
            self._wake_w.send(b"x")
        except OSError:
            pass

    def step(self, max_wait_ms: float = 50.0) -> None:
        timeout = max_wait_ms / 1000.0
        if self._pending_calls:
            timeout = 0.0
        elif self._timers:
            timeout = min(timeout,
                          max(0.0, (self._timers[0][0] - self.now()) / 1000.0))
        for key, mask in self.selector.select(timeout):
            kind = key.data[0]
            if kind == "udp":
                self._handle_udp(key.data[1])
            elif kind == "listen":
                self._handle_accept(key.data[1])
            elif kind == "bulk":
                self._handle_bulk(key.data[1], mask)
            elif kind == "wake":
                try:
                    self._wake_r.recv(4096)
                except OSError:
                    pass
        while self._pending_calls:
            self._pending_calls.popleft()()
        self._fire_timers()

    def run_until(self, predicate, timeout_ms: float = 60_000.0) -> bool:
        deadline = self.now() + timeout_ms
        while not predicate():
            if self._stop or self.now() > deadline:
                return predicate()
            self.step()
        return True

    def run_forever(self) -> None:
        while not self._stop:
            self.step()

    def stop(self) -> None:
        self._stop = True

    def close(self) -> None:
        for conn in list(self._bulk_conns):
            self._close_conn(conn)
        for sock in list(self.udp.values()) + list(self.tcp_listen.values()):
            try:
                self.selector.unregister(sock)
            except (KeyError, ValueError):
                pass
            sock.close()
        self.udp.clear()
        self.tcp_listen.clear()
        for sock in (self._wake_r, self._wake_w):
            try:
                sock.close()
            except OSError:
                pass
        self.selector.close()

    # SimNet-compatible hooks used by node code.
    def is_alive(self, node_id: str) -> bool:
        return node_id in self.nodes


class NetCluster:
    """A whole deployment (servers plus clients) inside one process.

    Binds every node to an ephemeral loopback port first, then builds the
    quorum configuration from the actual addresses.
    """

    def __init__(self, scenario_template: ScenarioConfig, host: str = "127.0.0.1"):
        from dataclasses import replace
        self.runtime = NetRuntime()
        base = scenario_template
        n = base.quorum.n
        labels = [self.runtime.bind(host, 0) for _ in range(n)]
        quorum = replace(base.quorum, servers=tuple(labels))
        self.scenario = replace(base, quorum=quorum)
        self.servers: dict[str, ServerNode] = {}
        for i, label in enumerate(labels):
            node = ServerNode(label, i, self.runtime, self.scenario)
            self.runtime.attach(label, node)
            node.start()
            self.servers[label] = node
        self.clients: dict[str, ClientNode] = {}

    def add_client(self, index: int, host: str = "127.0.0.1") -> "SyncClient":
        label = self.runtime.bind(host, 0)
        node = ClientNode(label, client_hw_addr(index), self.runtime,
                          self.scenario)
        self.runtime.attach(label, node)
        self.clients[label] = node
        client = SyncClient(self.runtime, node)
        client.boot()
        return client

    def close(self) -> None:
        self.runtime.close()


class SyncClient:
    """Blocking read()/write() facade over one client node."""

    def __init__(self, runtime: NetRuntime, node: ClientNode,
                 timeout_ms: float = 30_000.0):
        self.runtime = runtime
        self.node = node
        self.timeout_ms = timeout_ms

    def _wait(self, start):
        box = []
        start(box.append)
        ok = self.runtime.run_until(lambda: bool(box), self.timeout_ms)
        if not ok:
            raise TimeoutError("operation did not complete in time")
        result = box[0]
        if isinstance(result, StableRegError):
            raise result
        return result

    def boot(self, restarted: bool = False):
        return self._wait(lambda cb: self.node.boot(restarted, on_ready=cb))

    def write(self, value: bytes) -> None:
        result = self._wait(lambda cb: self.node.submit("write", value, cb))
        assert result[0] == "write"

    def read(self) -> bytes:
        result = self._wait(lambda cb: self.node.submit("read", None, cb))
        return result[2]

    @property
    def rounds_last_op(self) -> int:
        return self.node.rounds_this_op
