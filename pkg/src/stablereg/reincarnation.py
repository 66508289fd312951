"""Recyclable client identities: incarnation numbers behind a majority quorum.

Servers keep a bounded FIFO of (hardware address, incarnation number)
entries. Clients periodically query the quorum for their number and bump it
when the quorum knows a different one; a booting client that detected its
own restart always bumps, so responses addressed to its previous life can
never be mistaken for current ones.
"""

from __future__ import annotations

from collections import OrderedDict

from .core import OverflowDetected, Uid
from .quorum import EpochChanged
from .wire import IncCntrReq, MsgType, QuorumReq, WireMessage


class IncarnationQueue:
    """FIFO of per-hardware-address incarnation numbers, bounded by capacity."""

    def __init__(self, capacity: int, maxinc: int):
        self.capacity = max(1, capacity)
        self.maxinc = maxinc
        self.entries: OrderedDict[bytes, int] = OrderedDict()

    def has_overflow(self) -> bool:
        return any(v >= self.maxinc for v in self.entries.values())

    def max_inc(self) -> int:
        return max(self.entries.values(), default=0)

    def query(self, hw_addr: bytes) -> int | None:
        """Incarnation number for hw_addr; None means blocked (overflow present)."""
        if self.has_overflow():
            return None
        if hw_addr in self.entries:
            self.entries.move_to_end(hw_addr)
            return self.entries[hw_addr]
        return 0

    def update(self, hw_addr: bytes, new_inc: int) -> None:
        self.entries.pop(hw_addr, None)
        self.entries[hw_addr] = new_inc
        while len(self.entries) > self.capacity:
            self.entries.popitem(last=False)

    def clear(self) -> None:
        self.entries.clear()

    def corrupt(self, rng) -> None:
        """Fault injection: replace the queue with random near-bound entries."""
        self.entries.clear()
        for _ in range(rng.randrange(self.capacity + 1)):
            hw = rng.getrandbits(64).to_bytes(8, "big")
            self.entries[hw] = rng.randrange(max(1, self.maxinc - 1))


def handle_cntr_qry(server, src: str, msg: WireMessage) -> WireMessage | None:
    """Server side of the incarnation query; silent when blocked."""
    pid = getattr(msg.payload, "phase_id", None)
    if pid is None:
        return WireMessage(MsgType.ACK, server.sender_uid)
    inc = server.inc_queue.query(msg.sender.hw_addr)
    if inc is None or server.blocked() or server.resetting():
        return None
    from .wire import CntrResp
    return WireMessage(MsgType.ACK, server.sender_uid,
                       payload=CntrResp(pid, server.epoch, inc))


def handle_inc_cntr(server, src: str, msg: WireMessage) -> WireMessage | None:
    """Server side of the incarnation update: remove-then-append, then ack."""
    payload = msg.payload
    pid = getattr(payload, "phase_id", None)
    if pid is None or not isinstance(payload, IncCntrReq):
        return WireMessage(MsgType.ACK, server.sender_uid)
    if server.blocked() or server.resetting():
        return None
    from .wire import AckResp
    if payload.epoch == server.epoch:  # epoch fence, as for register writes
        server.inc_queue.update(msg.sender.hw_addr, payload.new_inc)
        server.note_inc_seen(payload.new_inc)
    return WireMessage(MsgType.ACK, server.sender_uid,
                       payload=AckResp(pid, server.epoch))


def incarnation_task(client, force: bool = False):
    """Client task: query the majority, adopt max+1 when out of date.

    `force` is set on a boot that follows a detected restart, so the new life
    gets a strictly larger incarnation number even when the quorum still
    reports the old one.
    """
    maj = client.cfg.majority_size()

    def build_qry(pid):
        req = QuorumReq(pid)
        return {srv: WireMessage(MsgType.CNTRQRY, client.uid, payload=req)
                for srv in client.server_ids}

    while True:
        try:
            res = yield from client.qrm("cntrqry", maj, build_qry)
            known = max(r.payload.inc_nbr for r in res.responses.values())
            if known != client.uid.inc_nbr or force:
                new_inc = max(known, client.uid.inc_nbr) + 1
                if new_inc > client.cfg.maxinc:
                    raise OverflowDetected("incarnation number space exhausted")

                def build_upd(pid):
                    return {srv: WireMessage(
                        MsgType.INCCNTR, client.uid,
                        payload=IncCntrReq(pid, new_inc,
                                           client.claimed_epoch(srv)))
                            for srv in client.server_ids}

                yield from client.qrm("inccntr", maj, build_upd)
                client.set_uid(Uid(client.uid.hw_addr, new_inc))
            return ("incarnate", client.uid.inc_nbr)
        except EpochChanged:
            continue
