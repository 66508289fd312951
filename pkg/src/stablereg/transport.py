"""Node-side transport: self-stabilizing stop-and-wait channels over datagrams.

Each ordered (src, dst, class) pair gets an independent token-passing channel
(sender counter incremented modulo cap+1), so gossip or reset traffic never
head-of-line-blocks quorum phases. Responses ride the acknowledgment, which
makes every reliable send a request/response round trip. Large elements are
routed over a bulk byte-stream transport instead of datagrams.

The environment object (simulator or real sockets) provides::

    now() -> float ms
    send(src, dst, frame)        # datagram, may be lost/duplicated/reordered
    send_bulk(src, dst, frame)   # reliable ordered stream, one per transfer
    set_timer(node_id, delay_ms, fn) -> handle
    cancel_timer(handle)
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .core import StableRegError
from .wire import (CLS_BULK, Frame, FrameKind, MsgType, WireMessage,
                   frame_size)

#: Outgoing messages queued behind an in-flight token, per channel. Stale
#: entries are dropped oldest-first; upper layers retry, so this bound only
#: trades latency for memory.
SEND_QUEUE_CAP = 4


class BulkTimeout(StableRegError):
    """A bulk transfer did not complete within its deadline."""


@dataclass(slots=True)
class ChannelState:
    """Sender half of one token-passing channel."""

    counter: int = 0
    pending: tuple[WireMessage, object] | None = None  # (msg, on_response)
    queue: deque = field(default_factory=deque)
    timer: object | None = None


@dataclass(slots=True)
class ReceiverState:
    """Receiver half: last delivered token and the response that answered it."""

    counter: int | None = None
    last_response: WireMessage | None = None


class Transport:
    """Per-node messaging endpoint; owns all channel state of that node."""

    def __init__(self, node_id: str, env, *, cap: int = 8,
                 rto_ms: float = 100.0, bulk_threshold: int = 8192,
                 bulk_timeout_ms: float = 10_000.0):
        self.node_id = node_id
        self.env = env
        self.cap = cap
        self.rto_ms = rto_ms
        self.bulk_threshold = bulk_threshold
        self.bulk_timeout_ms = bulk_timeout_ms
        self.senders: dict[tuple[str, int], ChannelState] = {}
        self.receivers: dict[tuple[str, int], ReceiverState] = {}
        self.raw_buffer: dict[tuple[str, MsgType], WireMessage] = {}
        self._bulk_seq = 0
        self._bulk_pending: dict[int, tuple[object, object]] = {}
        # Installed by the owning node:
        self.request_handler = None   # fn(src, msg) -> WireMessage | None
        self.raw_handler = None       # fn(src, msg) -> None

    # -- sending ------------------------------------------------------------

    def send_unreliable(self, dst: str, msg: WireMessage) -> None:
        """Fire-and-forget datagram; receiver keeps only the latest per slot."""
        self.env.send(self.node_id, dst, Frame(FrameKind.RAW, 0, msg))

    def send_reliable(self, dst: str, cls: int, msg: WireMessage,
                      on_response=None, replace: bool = True) -> None:
        """Queue msg on the (dst, cls) channel; retransmits until acknowledged.

        With replace=True a queued (not yet in-flight) message of the same
        msg_type is superseded, which keeps stale phase attempts from piling
        up behind a slow peer.
        """
        ch = self.senders.setdefault((dst, cls), ChannelState())
        if replace:
            for i, (queued, _) in enumerate(ch.queue):
                if queued.msg_type == msg.msg_type:
                    del ch.queue[i]
                    break
        while len(ch.queue) >= SEND_QUEUE_CAP:
            ch.queue.popleft()
        ch.queue.append((msg, on_response))
        if ch.pending is None:
            self._start_next(dst, cls, ch)

    def send_auto(self, dst: str, cls: int, msg: WireMessage,
                  on_response=None) -> None:
        """Reliable send, routed over the bulk stream above the size threshold."""
        probe = Frame(FrameKind.REQ, cls, msg)
        if frame_size(probe) > self.bulk_threshold:
            self.send_bulk(dst, msg, on_response)
        else:
            self.send_reliable(dst, cls, msg, on_response)

    def send_bulk(self, dst: str, msg: WireMessage, on_response=None) -> None:
        """One reliable ordered transfer; on_response gets the reply or BulkTimeout."""
        self._bulk_seq += 1
        xfer = self._bulk_seq
        framed = Frame(FrameKind.BULK_REQ, CLS_BULK,
                       WireMessage(msg.msg_type, msg.sender, xfer, msg.tag,
                                   msg.phase, msg.element, msg.payload))
        timer = self.env.set_timer(self.node_id, self.bulk_timeout_ms,
                                   lambda: self._bulk_timeout(xfer))
        self._bulk_pending[xfer] = (on_response, timer)
        self.env.send_bulk(self.node_id, dst, framed)

    def _bulk_timeout(self, xfer: int) -> None:
        entry = self._bulk_pending.pop(xfer, None)
        if entry is None:
            return
        on_response, _ = entry
        if on_response is not None:
            on_response(BulkTimeout(f"bulk transfer {xfer} timed out"))

    def _start_next(self, dst: str, cls: int, ch: ChannelState) -> None:
        if not ch.queue:
            return
        ch.pending = ch.queue.popleft()
        self._transmit(dst, cls, ch)

    def _transmit(self, dst: str, cls: int, ch: ChannelState) -> None:
        msg, _ = ch.pending
        framed = Frame(FrameKind.REQ, cls,
                       WireMessage(msg.msg_type, msg.sender, ch.counter,
                                   msg.tag, msg.phase, msg.element, msg.payload))
        self.env.send(self.node_id, dst, framed)
        if ch.timer is not None:
            self.env.cancel_timer(ch.timer)
        ch.timer = self.env.set_timer(
            self.node_id, self.rto_ms,
            lambda: self._retransmit(dst, cls))

    def _retransmit(self, dst: str, cls: int) -> None:
        ch = self.senders.get((dst, cls))
        if ch is None or ch.pending is None:
            return
        ch.timer = None
        self._transmit(dst, cls, ch)

    # -- receiving ----------------------------------------------------------

    def on_frame(self, src: str, frame: Frame) -> None:
        kind = frame.kind
        if kind == FrameKind.RAW:
            self.raw_buffer[(src, frame.msg.msg_type)] = frame.msg
            if self.raw_handler is not None:
                self.raw_handler(src, frame.msg)
        elif kind == FrameKind.REQ:
            self._on_request(src, frame)
        elif kind == FrameKind.RESP:
            self._on_response(src, frame)
        elif kind == FrameKind.BULK_REQ:
            self._on_bulk_request(src, frame)
        elif kind == FrameKind.BULK_RESP:
            self._on_bulk_response(frame)

    def _send_response(self, src: str, response_frame: Frame) -> None:
        # Large responses (data-carrying acks) go over the stream transport,
        # mirroring the per-transfer connection used for big objects.
        if frame_size(response_frame) > self.bulk_threshold:
            self.env.send_bulk(self.node_id, src, response_frame)
        else:
            self.env.send(self.node_id, src, response_frame)

    def _on_request(self, src: str, frame: Frame) -> None:
        key = (src, frame.cls)
        rcv = self.receivers.setdefault(key, ReceiverState())
        msg = frame.msg
        if (rcv.counter is not None and msg.token == rcv.counter
                and rcv.last_response is not None):
            # Duplicate of the last delivered token: re-acknowledge only.
            # Re-token the stored response so an arbitrarily corrupted one
            # cannot livelock the sender. (A corrupted counter without a
            # stored response falls through, costing at most one duplicate
            # delivery instead.)
            resp = rcv.last_response
            if resp.token != msg.token:
                resp = WireMessage(resp.msg_type, resp.sender, msg.token,
                                   resp.tag, resp.phase, resp.element,
                                   resp.payload)
                rcv.last_response = resp
            self._send_response(src, Frame(FrameKind.RESP, frame.cls, resp))
            return
        response = self.request_handler(src, msg)
        if response is None:
            # Deliberate silence (e.g. blocked server): keep the token
            # unconsumed so the sender goes on retrying.
            return
        response = WireMessage(response.msg_type, response.sender, msg.token,
                               response.tag, response.phase, response.element,
                               response.payload)
        rcv.counter = msg.token
        rcv.last_response = response
        self._send_response(src, Frame(FrameKind.RESP, frame.cls, response))

    def _on_response(self, src: str, frame: Frame) -> None:
        ch = self.senders.get((src, frame.cls))
        if ch is None or ch.pending is None:
            return
        if frame.msg.token != ch.counter:
            return  # stale acknowledgment
        _, on_response = ch.pending
        ch.pending = None
        ch.counter = (ch.counter + 1) % (self.cap + 1)
        if ch.timer is not None:
            self.env.cancel_timer(ch.timer)
            ch.timer = None
        if on_response is not None:
            on_response(frame.msg)
        self._start_next(src, frame.cls, ch)

    def _on_bulk_request(self, src: str, frame: Frame) -> None:
        msg = frame.msg
        response = self.request_handler(src, msg)
        if response is None:
            return
        response = WireMessage(response.msg_type, response.sender, msg.token,
                               response.tag, response.phase, response.element,
                               response.payload)
        self.env.send_bulk(self.node_id, src,
                           Frame(FrameKind.BULK_RESP, CLS_BULK, response))

    def _on_bulk_response(self, frame: Frame) -> None:
        entry = self._bulk_pending.pop(frame.msg.token, None)
        if entry is None:
            return
        on_response, timer = entry
        self.env.cancel_timer(timer)
        if on_response is not None:
            on_response(frame.msg)

    # -- fault injection hooks ------------------------------------------------

    def corrupt_counters(self, rng) -> None:
        """Randomize every channel counter within its legal range."""
        for ch in self.senders.values():
            ch.counter = rng.randrange(self.cap + 1)
        for rcv in self.receivers.values():
            rcv.counter = rng.randrange(self.cap + 1)

    def shutdown(self) -> None:
        for ch in self.senders.values():
            if ch.timer is not None:
                self.env.cancel_timer(ch.timer)
                ch.timer = None
        for _, timer in self._bulk_pending.values():
            self.env.cancel_timer(timer)
        self._bulk_pending.clear()
