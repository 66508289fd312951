"""Client-side quorum access: broadcast a phase request, gather q responses.

Operations are written as generators that `yield from qrm(...)` once per
phase; the event loop resumes them when enough responses arrived or the
phase deadline passed. A phase that times out is retried forever under a
fresh phase identifier, since liveness rests on fairness, not synchrony.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import StableRegError
from .transport import BulkTimeout, Transport
from .wire import CLS_QUORUM, PhaseId, WireMessage

#: Bounded window for per-client phase counters.
PHASE_CTR_WINDOW = 1 << 16


class PhaseTimeout(StableRegError):
    """A quorum of responses did not arrive within the deadline."""


class EpochChanged(StableRegError):
    """A server reported a different reset epoch mid-operation; restart it."""


@dataclass
class PhaseResult:
    """Responses of one completed quorum phase, keyed by server id."""

    responses: dict[str, WireMessage]
    elapsed: float


@dataclass
class _PendingPhase:
    pid: PhaseId
    quorum: int
    started: float
    responses: dict[str, WireMessage] = field(default_factory=dict)
    timer: object = None
    track_epoch: bool = True


_TIMED_OUT = object()


def _payload_phase_id(msg: WireMessage):
    payload = msg.payload
    return getattr(payload, "phase_id", None)


def _payload_epoch(msg: WireMessage):
    payload = msg.payload
    return getattr(payload, "epoch", None)


class QuorumClient:
    """Base for client nodes: transport wiring plus the phase state machine.

    One operation runs at a time (clients are sequential); one phase of that
    operation is outstanding at any moment.
    """

    def __init__(self, node_id: str, env, cfg, scenario):
        self.node_id = node_id
        self.env = env
        self.cfg = cfg
        self.server_ids = list(cfg.servers)
        self.transport = Transport(
            node_id, env,
            cap=scenario.channel_cap,
            rto_ms=scenario.rto_ms(),
            bulk_threshold=scenario.bulk_threshold,
        )
        self.transport.request_handler = self._handle_request
        self.transport.raw_handler = lambda src, msg: None
        self.phase_deadline_ms = scenario.phase_deadline_ms()
        self._phase_ctr = 0
        self._pending: _PendingPhase | None = None
        self._op_gen = None
        self._op_done_cb = None
        self._op_epochs: dict[str, int] = {}
        self.rounds_this_op = 0
        self.retries_this_op = 0

    # Clients answer no requests; returning an ACK keeps channels from
    # wedging if something addresses us by mistake.
    def _handle_request(self, src, msg):
        from .wire import MsgType
        return WireMessage(MsgType.ACK, self.uid)

    def on_frame(self, src, frame):
        self.transport.on_frame(src, frame)

    # -- operation driving ----------------------------------------------------

    def busy(self) -> bool:
        return self._op_gen is not None

    def start_op(self, gen, on_done) -> None:
        assert self._op_gen is None, "client operations are sequential"
        self._op_gen = gen
        self._op_done_cb = on_done
        self._op_epochs = {}
        self.rounds_this_op = 0
        self.retries_this_op = 0
        self._advance(lambda g: g.send(None))

    def _advance(self, resume) -> None:
        gen = self._op_gen
        try:
            resume(gen)
        except StopIteration as stop:
            self._finish(stop.value)
        except StableRegError as err:
            self._finish(err)

    def _finish(self, result) -> None:
        self._clear_pending()
        self._op_gen = None
        cb, self._op_done_cb = self._op_done_cb, None
        if cb is not None:
            cb(result)

    def _clear_pending(self) -> None:
        if self._pending is not None and self._pending.timer is not None:
            self.env.cancel_timer(self._pending.timer)
        self._pending = None

    def claimed_epoch(self, srv: str) -> int:
        """Reset epoch this operation believes `srv` is in, learned from the
        query phase; servers not heard from get the epoch seen elsewhere."""
        if srv in self._op_epochs:
            return self._op_epochs[srv]
        for epoch in self._op_epochs.values():
            return epoch  # all tracked epochs agree or the op was restarted
        return 0

    # -- the quorum phase generator --------------------------------------------

    def qrm(self, name: str, quorum: int, build, *, track_epoch: bool = True):
        """One phase: send build(pid) to its servers, await `quorum` responses.

        Retries with a fresh phase id on timeout; returns a PhaseResult.
        """
        while True:
            self._phase_ctr = (self._phase_ctr + 1) % PHASE_CTR_WINDOW
            pid = PhaseId(self.uid, self._phase_ctr, name)
            pending = _PendingPhase(pid, quorum, self.env.now(),
                                    track_epoch=track_epoch)
            self._pending = pending
            for srv, msg in build(pid).items():
                self.transport.send_auto(
                    srv, CLS_QUORUM, msg,
                    lambda resp, s=srv, p=pid: self._on_response(p, s, resp))
            pending.timer = self.env.set_timer(
                self.node_id, self.phase_deadline_ms, self._on_phase_timeout)
            outcome = yield
            if outcome is _TIMED_OUT:
                self.retries_this_op += 1
                continue
            self.rounds_this_op += 1
            return PhaseResult(outcome, self.env.now() - pending.started)

    def _on_response(self, pid: PhaseId, srv: str, resp) -> None:
        pending = self._pending
        if pending is None or pending.pid != pid:
            return  # stale phase
        if isinstance(resp, BulkTimeout):
            return
        resp_pid = _payload_phase_id(resp)
        if resp_pid is not None and resp_pid != pid:
            return  # response for some other phase attempt
        if srv in pending.responses:
            return  # never count one server twice
        epoch = _payload_epoch(resp)
        if epoch is not None and pending.track_epoch:
            seen = self._op_epochs.get(srv)
            if seen is not None and seen != epoch:
                self._clear_pending()
                self._op_epochs = {}
                self._advance(lambda g: g.throw(EpochChanged()))
                return
            self._op_epochs[srv] = epoch
        pending.responses[srv] = resp
        if len(pending.responses) >= pending.quorum:
            result = pending.responses
            self._clear_pending()
            self._advance(lambda g: g.send(result))

    def _on_phase_timeout(self) -> None:
        if self._pending is None:
            return
        self._pending.timer = None
        self._advance(lambda g: g.send(_TIMED_OUT))
