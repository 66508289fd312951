"""Server and client node wiring: routes messages and timers to the protocols.

Each node runs inside a single logical event loop (simulated or real); one
handler executes at a time, so state mutations are atomic per message.
"""

from __future__ import annotations

from . import cas, gossip, mwabd, reincarnation
from .config import ScenarioConfig
from .core import RESET_TAG, Tag, Uid, Variant, server_hw_addr
from .quorum import QuorumClient
from .reset import ResetService
from .transport import Transport
from .wire import CLS_RESET, MsgType, ResetXchg, WireMessage

EPOCH_WINDOW = 1 << 16


class ServerNode:
    """One storage server of any variant."""

    def __init__(self, node_id: str, index: int, env, scenario: ScenarioConfig,
                 record_event=None):
        self.node_id = node_id
        self.index = index
        self.env = env
        self.scenario = scenario
        self.cfg = scenario.quorum
        self.variant = self.cfg.variant
        self.sender_uid = Uid(server_hw_addr(index), 0)
        self.peer_ids = [s for s in self.cfg.servers if s != node_id]
        self.record_event = record_event or (lambda *a: None)
        self.transport = Transport(
            node_id, env,
            cap=scenario.channel_cap,
            rto_ms=scenario.rto_ms(),
            bulk_threshold=scenario.bulk_threshold,
        )
        self.transport.request_handler = self._handle_request
        self.transport.raw_handler = self._handle_raw
        if self.variant is Variant.MWABD:
            self.store = mwabd.AbdState()
        else:
            self.store = cas.ServerStore(self.variant, self.cfg.record_bound(),
                                         self.cfg.maxint)
        self.inc_queue = reincarnation.IncarnationQueue(
            2 * self.cfg.n_clients, self.cfg.maxinc)
        self.digests_from: dict[str, gossip.GossipDigest] = {}
        self.epoch = 0
        self._max_inc_seen = 0
        self._peer_overflow = False
        self._was_blocked = False
        self.reset: ResetService | None = None
        if self.variant is Variant.CASSS:
            self.reset = ResetService(node_id, self.cfg.servers,
                                      self._do_local_reset)

    def start(self) -> None:
        """Arm periodic services; call once after registration."""
        if self.variant is Variant.CASSS:
            period = self.scenario.gossip_period_ms
            stagger = period * (self.index + 1) / (self.cfg.n + 1)
            self.env.set_timer(self.node_id, stagger, self._gossip_tick)
            xperiod = self.scenario.reset_exchange_period_ms
            xstagger = xperiod * (self.index + 1) / (self.cfg.n + 1)
            self.env.set_timer(self.node_id, xstagger, self._reset_tick)

    def on_frame(self, src, frame):
        self.transport.on_frame(src, frame)

    # -- state predicates -------------------------------------------------------

    def blocked(self) -> bool:
        """Overflow detected somewhere: stop answering queries, keep gossiping."""
        if self.variant is Variant.MWABD:
            return False
        now_blocked = (self.store.has_overflow()
                       or self.inc_queue.has_overflow()
                       or self._max_inc_seen >= self.cfg.maxinc
                       or self._peer_overflow)
        if now_blocked and not self._was_blocked:
            self._was_blocked = True
            self.record_event(self.node_id, "blocked", None)
        return now_blocked

    def resetting(self) -> bool:
        return self.reset is not None and self.reset.active()

    def overflow_seen(self) -> bool:
        return self.blocked()

    def max_inc_seen(self) -> int:
        return max(self.inc_queue.max_inc(), self._max_inc_seen)

    def note_inc_seen(self, value: int) -> None:
        if value > self._max_inc_seen:
            self._max_inc_seen = value

    def latch_peer_overflow(self) -> None:
        self._peer_overflow = True

    # -- request dispatch ---------------------------------------------------------

    def _handle_request(self, src: str, msg: WireMessage) -> WireMessage | None:
        mtype = msg.msg_type
        if mtype == MsgType.CNTRQRY:
            return reincarnation.handle_cntr_qry(self, src, msg)
        if mtype == MsgType.INCCNTR:
            resp = reincarnation.handle_inc_cntr(self, src, msg)
            self.after_store_change()
            return resp
        if mtype == MsgType.GOSSIP:
            # Reliable one-shot gossip of the baseline variant.
            if isinstance(msg.payload, gossip.GossipDigest) and not self.resetting():
                gossip.on_gossip(self, src, msg.payload)
                self.after_store_change()
            return WireMessage(MsgType.ACK, self.sender_uid)
        if mtype == MsgType.RESETSTATE:
            if self.reset is not None and isinstance(msg.payload, ResetXchg):
                self.reset.on_exchange(src, msg.payload)
                return WireMessage(MsgType.RESETSTATE, self.sender_uid,
                                   payload=self.reset.xchg_for(src))
            return WireMessage(MsgType.ACK, self.sender_uid)
        if self.variant is Variant.MWABD:
            return mwabd.handle_request(self, src, msg)
        return cas.handle_request(self, src, msg)

    def _handle_raw(self, src: str, msg: WireMessage) -> None:
        if msg.msg_type != MsgType.GOSSIP:
            return
        if not isinstance(msg.payload, gossip.GossipDigest):
            return  # malformed digest: drop silently
        if self.resetting():
            # Mid-agreement merges would let stale overflow digests re-poison
            # the state the reset is about to install.
            return
        gossip.on_gossip(self, src, msg.payload)
        self.after_store_change()
        self._maybe_propose()

    # -- protocol hooks -------------------------------------------------------------

    def on_finalize_arrival(self, tag: Tag) -> None:
        if self.variant is Variant.CAS:
            gossip.gossip_on_finalize(self, tag)

    def after_store_change(self) -> None:
        if self.variant is not Variant.MWABD:
            self.blocked()  # latches the blocked-transition event

    def _gossip_tick(self) -> None:
        gossip.gossip_tick(self)
        self._maybe_propose()
        self.env.set_timer(self.node_id, self.scenario.gossip_period_ms,
                           self._gossip_tick)

    def _maybe_propose(self) -> None:
        """Invoke the reset agreement once every server reports the same
        maximum finalized tag while the system is blocked on an overflow."""
        if self.reset is None or not self.blocked():
            return
        my_fin = self.store.max_fin
        for peer in self.peer_ids:
            d = self.digests_from.get(peer)
            if d is None or not d.overflow or d.max_fin != my_fin:
                return
        if self.reset.propose(my_fin):
            self.record_event(self.node_id, "proposal", my_fin)

    def _reset_tick(self) -> None:
        self.reset.step()
        for peer in self.peer_ids:
            msg = WireMessage(MsgType.RESETSTATE, self.sender_uid,
                              payload=self.reset.xchg_for(peer))
            self.transport.send_reliable(
                peer, CLS_RESET, msg,
                lambda resp, p=peer: self._on_reset_response(p, resp))
        self.env.set_timer(self.node_id,
                           self.scenario.reset_exchange_period_ms,
                           self._reset_tick)

    def _on_reset_response(self, peer: str, resp) -> None:
        if isinstance(resp, WireMessage) and isinstance(resp.payload, ResetXchg):
            self.reset.on_exchange(peer, resp.payload)

    def _do_local_reset(self, tag: Tag) -> None:
        changed = self.store.local_reset(tag, RESET_TAG)
        if not changed:
            return
        self.epoch = (self.epoch + 1) % EPOCH_WINDOW
        self.inc_queue.clear()
        self.digests_from.clear()
        self._max_inc_seen = 0
        self._peer_overflow = False
        self._was_blocked = False
        self.record_event(self.node_id, "local_reset", tag)

    # -- fault injection ---------------------------------------------------------------

    def inject_overflow_tag(self, writer: Uid) -> None:
        """Plant a pre-write record carrying the maximal tag (reset trigger)."""
        if self.variant is Variant.MWABD:
            return
        tag = Tag(self.cfg.maxint, writer)
        self.store.insert_pre(tag, None)
        self.after_store_change()
        self.record_event(self.node_id, "overflow_injected", tag)

    def corrupt_store(self, rng) -> None:
        if self.variant is Variant.MWABD:
            self.store.tag = Tag(rng.randrange(1, 1000), self.sender_uid)
            self.store.data = rng.randbytes(8)
        else:
            self.store.corrupt(rng)

    def corrupt_channels(self, rng) -> None:
        self.transport.corrupt_counters(rng)

    def corrupt_reset_state(self, rng) -> None:
        if self.reset is not None:
            self.reset.corrupt(rng)

    def corrupt_inc_queue(self, rng) -> None:
        self.inc_queue.corrupt(rng)


class ClientNode(QuorumClient):
    """One client; performs its operations sequentially."""

    def __init__(self, node_id: str, hw_addr: bytes, env,
                 scenario: ScenarioConfig, record_event=None):
        super().__init__(node_id, env, scenario.quorum, scenario)
        self.hw_addr = hw_addr
        self.uid = Uid(hw_addr, 0)
        self.scenario = scenario
        self.record_event = record_event or (lambda *a: None)
        self.ready = False
        self.inc_period_ms = 50 * scenario.gossip_period_ms

    def set_uid(self, uid: Uid) -> None:
        self.uid = uid

    def boot(self, restarted: bool, on_ready=None) -> None:
        """Run the reincarnation task before the first register operation."""

        def done(result):
            self.ready = True
            self.record_event(self.node_id, "ready", self.uid.inc_nbr)
            if on_ready is not None:
                on_ready(result)

        self.start_op(reincarnation.incarnation_task(self, force=restarted), done)
        self.env.set_timer(self.node_id, self.inc_period_ms, self._periodic_inc)

    def _periodic_inc(self) -> None:
        if not self.busy():
            self.start_op(reincarnation.incarnation_task(self), lambda r: None)
        self.env.set_timer(self.node_id, self.inc_period_ms, self._periodic_inc)

    def submit(self, kind: str, value: bytes | None, on_done) -> None:
        """Start one register operation; on_done receives the result tuple
        or the error that ended the operation."""
        if self.cfg.variant is Variant.MWABD:
            gen = mwabd.write_op(self, value) if kind == "write" else mwabd.read_op(self)
        else:
            gen = cas.write_op(self, value) if kind == "write" else cas.read_op(self)
        self.start_op(gen, on_done)
