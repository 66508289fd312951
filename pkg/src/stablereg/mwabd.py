"""Multi-writer ABD over a majority quorum: the full-replication baseline.

Two phases per operation. A write queries majorities for the maximum tag,
then writes (tag+1, value) to a majority. A read queries for the maximum
(tag, value) pair and propagates it to a majority before returning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import INITIAL_TAG, Tag, max_tag, next_tag
from .quorum import EpochChanged
from .wire import AckResp, MsgType, QuorumReq, WireMessage


@dataclass
class AbdState:
    """Single-record server state: latest adopted (tag, value)."""

    tag: Tag = INITIAL_TAG
    data: bytes = b""

    def adopt(self, tag: Tag, data: bytes | None) -> bool:
        """Adopt strictly greater tags only; keeps duplicates idempotent."""
        if self.tag < tag:
            self.tag = tag
            self.data = data or b""
            return True
        return False


def handle_request(server, src: str, msg: WireMessage) -> WireMessage | None:
    """MW-ABD server handlers: query, data query, write/propagate."""
    state: AbdState = server.store
    pid = getattr(msg.payload, "phase_id", None)
    if pid is None:
        return WireMessage(MsgType.ACK, server.sender_uid)
    ack = AckResp(pid, server.epoch)
    if msg.msg_type == MsgType.QUERY:
        return WireMessage(MsgType.ACK, server.sender_uid, tag=state.tag,
                           payload=ack)
    if msg.msg_type == MsgType.FINREAD:
        return WireMessage(MsgType.ACK, server.sender_uid, tag=state.tag,
                           element=state.data, payload=ack)
    if msg.msg_type == MsgType.PREWRITE and msg.tag is not None:
        state.adopt(msg.tag, msg.element)
        return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)
    return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)


def _query_builder(client, msg_type):
    def build(pid):
        req = QuorumReq(pid)
        return {srv: WireMessage(msg_type, client.uid, payload=req)
                for srv in client.server_ids}
    return build


def _store_builder(client, tag, data):
    def build(pid):
        req = QuorumReq(pid)
        return {srv: WireMessage(MsgType.PREWRITE, client.uid, tag=tag,
                                 element=data, payload=req)
                for srv in client.server_ids}
    return build


def write_op(client, value: bytes):
    """Client write: tag query to a majority, then write to a majority."""
    q = client.cfg.majority_size()
    while True:
        try:
            res = yield from client.qrm("query", q, _query_builder(client, MsgType.QUERY))
            top = max_tag(r.tag for r in res.responses.values() if r.tag is not None)
            tag = next_tag(top, client.uid, client.cfg.maxint)
            yield from client.qrm("abdwrite", q, _store_builder(client, tag, value))
            return ("write", tag, value)
        except EpochChanged:
            continue


def read_op(client):
    """Client read: fetch the maximum (tag, value), propagate it, return it."""
    q = client.cfg.majority_size()
    while True:
        try:
            res = yield from client.qrm("finread", q, _query_builder(client, MsgType.FINREAD))
            best_tag, best_data = INITIAL_TAG, b""
            for r in res.responses.values():
                if r.tag is not None and best_tag < r.tag:
                    best_tag, best_data = r.tag, r.element or b""
            yield from client.qrm("abdprop", q,
                                  _store_builder(client, best_tag, best_data))
            return ("read", best_tag, best_data)
        except EpochChanged:
            continue
