"""The coded register: record store, server handlers, and client operations.

Writers run query / pre-write / finalize (plus a fourth FIN round in the
self-stabilizing variant, which also prunes server storage down to the
N_clients + delta + 3 bound). Readers run query / finalize and decode the
object from at least k returned elements, or report the read unsuccessful.
"""

from __future__ import annotations

from .codec import decode_nk, element_from_wire, element_to_wire, encode_nk
from .core import (INITIAL_TAG, Phase, Record, StableRegError, Tag, Variant,
                   max_tag, next_tag, phase_rank)
from .quorum import EpochChanged
from .wire import MsgType, QuorumReq, WireMessage


class UnsuccessfulRead(StableRegError):
    """Fewer than k elements were available for the queried tag; retry later."""


class ServerStore:
    """Per-server record set keyed by tag, with the CASSS storage bound."""

    def __init__(self, variant: Variant, record_bound: int, maxint: int):
        self.variant = variant
        self.record_bound = record_bound
        self.maxint = maxint
        self.records: dict[Tag, Record] = {}
        self.max_fin: Tag = INITIAL_TAG
        # Highest tag ever seen here, including gossip: what writer queries
        # must exceed so corrupted pre-write records get hidden.
        self.max_pre_known: Tag = INITIAL_TAG
        # Instrumentation read by the harness assertions.
        self.peak_post_prune = 0
        self.evicted_max_fin = False

    def __len__(self):
        return len(self.records)

    def note_pre_tag(self, tag: Tag) -> None:
        if self.max_pre_known < tag:
            self.max_pre_known = tag

    def _note_fin(self, tag: Tag) -> None:
        if self.max_fin < tag:
            self.max_fin = tag

    def insert_pre(self, tag: Tag, element: bytes | None) -> None:
        if tag not in self.records:
            self.records[tag] = Record(tag, element, Phase.PRE)
        elif self.records[tag].element is None:
            self.records[tag].element = element
        self.note_pre_tag(tag)
        self.prune()

    def finalize(self, tag: Tag, phase: Phase, element: bytes | None = None) -> None:
        rec = self.records.get(tag)
        if rec is None:
            rec = Record(tag, element, phase)
            self.records[tag] = rec
        else:
            rec.upgrade(phase)
            if rec.element is None and element is not None:
                rec.element = element
        self.note_pre_tag(tag)
        self._note_fin(tag)
        self.prune()

    def adopt_fin(self, tag: Tag) -> None:
        """Fin tag learned via gossip: stored with no element until observed."""
        self.finalize(tag, Phase.FIN)

    def element_for(self, tag: Tag) -> bytes | None:
        rec = self.records.get(tag)
        return rec.element if rec is not None else None

    def has_overflow(self) -> bool:
        return self.max_pre_known.seq >= self.maxint

    def prune(self) -> None:
        """Enforce the record bound; runs after every mutation.

        Keeps the maximum finalized record and the newest record of each
        writer; evicts lowest tags first, touching the per-writer keepers
        only if garbage still exceeds the bound (the max-fin record is never
        evicted).
        """
        if self.variant is not Variant.CASSS:
            return
        if len(self.records) <= self.record_bound:
            self.peak_post_prune = max(self.peak_post_prune, len(self.records))
            return
        newest_per_writer: dict = {}
        for tag in self.records:
            cur = newest_per_writer.get(tag.writer)
            if cur is None or cur < tag:
                newest_per_writer[tag.writer] = tag
        keep = set(newest_per_writer.values())
        fin_max = self.max_fin_record_tag()
        if fin_max is not None:
            keep.add(fin_max)
        expendable = sorted((t for t in self.records if t not in keep),
                            key=Tag.sort_key)
        excess = len(self.records) - self.record_bound
        for tag in expendable[:excess]:
            del self.records[tag]
        excess = len(self.records) - self.record_bound
        if excess > 0:
            keepers = sorted((t for t in keep if t != fin_max and t in self.records),
                             key=Tag.sort_key)
            for tag in keepers[:excess]:
                del self.records[tag]
        if fin_max is not None and fin_max not in self.records:
            self.evicted_max_fin = True
        self.peak_post_prune = max(self.peak_post_prune, len(self.records))

    def max_fin_record_tag(self) -> Tag | None:
        best = None
        for tag, rec in self.records.items():
            if rec.is_finalized() and (best is None or best < tag):
                best = tag
        return best

    def local_reset(self, agreed: Tag, reset_tag: Tag) -> bool:
        """Shrink to the agreed record, reinstalled under the initial tag.

        Returns False when the store already is exactly the reset image, so
        repeated phase-2 steps stay idempotent.
        """
        if (len(self.records) == 1 and reset_tag in self.records
                and not self.has_overflow()):
            return False
        # On a repeated pass the agreed record already lives under reset_tag;
        # never lose its element to a stray record that arrived in between.
        rec = self.records.get(agreed) or self.records.get(reset_tag)
        element = rec.element if rec is not None else None
        self.records = {reset_tag: Record(reset_tag, element, Phase.FIN)}
        self.max_fin = reset_tag
        self.max_pre_known = reset_tag
        return True

    def corrupt(self, rng, n_writers_hint: int = 4) -> None:
        """Fault injection: replace contents with random records (tags kept
        below the overflow bound; overflow has a dedicated injection)."""
        from .core import Uid
        self.records = {}
        count = rng.randrange(2 * self.record_bound)
        phases = (Phase.PRE, Phase.FIN, Phase.FINFIN)
        for _ in range(count):
            seq = rng.choice((rng.randrange(1, 100),
                              rng.randrange(max(2, self.maxint // 2), self.maxint)))
            uid = Uid(rng.getrandbits(64).to_bytes(8, "big"), rng.randrange(4))
            tag = Tag(seq, uid)
            phase = phases[rng.randrange(3)]
            element = rng.randbytes(16) if rng.random() < 0.5 else None
            self.records[tag] = Record(tag, element, phase)
        self.max_fin = max_tag(t for t, r in self.records.items()
                               if r.is_finalized())
        self.max_pre_known = max_tag(self.records)


# ---------------------------------------------------------------------------
# Server request handlers (dispatched from the node).

def handle_request(server, src: str, msg: WireMessage) -> WireMessage | None:
    from .wire import AckResp, QueryResp

    store: ServerStore = server.store
    pid = getattr(msg.payload, "phase_id", None)
    if pid is None:
        return WireMessage(MsgType.ACK, server.sender_uid)
    mtype = msg.msg_type

    if server.blocked() or server.resetting():
        # Abstain from supporting operations entirely (gossip and the reset
        # exchange keep running). Answering non-query phases here would let a
        # write complete after the agreement already sampled the common
        # maximum, and the reset would erase a completed write.
        return None

    if mtype == MsgType.QUERY:
        return WireMessage(
            MsgType.ACK, server.sender_uid,
            payload=QueryResp(pid, server.epoch, store.max_fin,
                              store.max_pre_known))

    ack = AckResp(pid, server.epoch)

    # Mutations are fenced on the reset epoch: a request built against an
    # older epoch is acknowledged (the ack carries the current epoch, which
    # aborts the client's operation) but takes no effect, so tags minted
    # after a reset cannot mix with leftovers of a pre-reset namesake.
    stale = getattr(msg.payload, "epoch", server.epoch) != server.epoch

    if mtype == MsgType.PREWRITE and msg.tag is not None:
        if not stale:
            store.insert_pre(msg.tag, msg.element)
            server.after_store_change()
        return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)

    if mtype == MsgType.FINWRITE and msg.tag is not None:
        if not stale:
            store.finalize(msg.tag, Phase.FIN)
            server.after_store_change()
            server.on_finalize_arrival(msg.tag)
        return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)

    if mtype == MsgType.FINREAD and msg.tag is not None:
        if stale:
            return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)
        element = store.element_for(msg.tag)
        store.finalize(msg.tag, Phase.FIN)
        server.after_store_change()
        server.on_finalize_arrival(msg.tag)
        return WireMessage(MsgType.ACK, server.sender_uid, element=element,
                           payload=ack)

    if mtype == MsgType.FINFIN and msg.tag is not None:
        if not stale:
            store.finalize(msg.tag, Phase.FINFIN)
            server.after_store_change()
        return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)

    return WireMessage(MsgType.ACK, server.sender_uid, payload=ack)


# ---------------------------------------------------------------------------
# Client operations.

def _query_builder(client):
    def build(pid):
        req = QuorumReq(pid)
        return {srv: WireMessage(MsgType.QUERY, client.uid, payload=req)
                for srv in client.server_ids}
    return build


def write_op(client, value: bytes):
    """Coded write: query, pre-write, finalize (and FIN when self-stabilizing)."""
    cfg = client.cfg
    q = cfg.coded_quorum_size()
    casss = cfg.variant is Variant.CASSS
    elements = [element_to_wire(el) for el in encode_nk(value, cfg.n, cfg.k)]
    while True:
        try:
            res = yield from client.qrm("query", q, _query_builder(client))
            if casss:
                top = max_tag(
                    t for r in res.responses.values()
                    for t in (r.payload.max_fin, r.payload.max_pre))
            else:
                # The baseline considers only finalized records.
                top = max_tag(r.payload.max_fin for r in res.responses.values())
            tag = next_tag(top, client.uid, cfg.maxint)

            def build_pre(pid):
                return {srv: WireMessage(MsgType.PREWRITE, client.uid, tag=tag,
                                         phase=Phase.PRE, element=elements[i],
                                         payload=QuorumReq(pid, client.claimed_epoch(srv)))
                        for i, srv in enumerate(client.server_ids)}

            yield from client.qrm("prewrite", q, build_pre)

            def build_fin(pid, mtype, phase):
                return {srv: WireMessage(mtype, client.uid, tag=tag, phase=phase,
                                         payload=QuorumReq(pid, client.claimed_epoch(srv)))
                        for srv in client.server_ids}

            yield from client.qrm(
                "finwrite", q, lambda pid: build_fin(pid, MsgType.FINWRITE, Phase.FIN))
            if casss:
                yield from client.qrm(
                    "finfin", q, lambda pid: build_fin(pid, MsgType.FINFIN, Phase.FINFIN))
            return ("write", tag, value)
        except EpochChanged:
            continue


def read_op(client):
    """Coded read: query for the max finalized tag, collect elements, decode."""
    cfg = client.cfg
    q = cfg.coded_quorum_size()
    while True:
        try:
            res = yield from client.qrm("query", q, _query_builder(client))
            target = max_tag(r.payload.max_fin for r in res.responses.values())

            def build_finread(pid):
                return {srv: WireMessage(MsgType.FINREAD, client.uid, tag=target,
                                         phase=Phase.FIN,
                                         payload=QuorumReq(pid, client.claimed_epoch(srv)))
                        for srv in client.server_ids}

            res2 = yield from client.qrm("finread", q, build_finread)
            if target == INITIAL_TAG:
                return ("read", target, b"")
            elements = []
            for r in res2.responses.values():
                if r.element is not None:
                    try:
                        elements.append(element_from_wire(r.element))
                    except ValueError:
                        continue
            if len({el.index for el in elements}) >= cfg.k:
                try:
                    data = decode_nk(elements, cfg.n, cfg.k)
                except StableRegError:
                    raise UnsuccessfulRead(
                        f"inconsistent elements for tag {target}") from None
                return ("read", target, data)
            raise UnsuccessfulRead(
                f"only {len(elements)} elements for tag {target}")
        except EpochChanged:
            continue
