"""Scenario execution: builds a cluster in the simulator, scripts clients,
injects faults, and records the operation history plus traffic metrics.

Runs are deterministic: the same scenario and seed produce byte-identical
history and metrics hashes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import random
from dataclasses import dataclass, field

from .config import ScenarioConfig
from .core import (InvalidConfig, OverflowDetected, StableRegError, Uid,
                   client_hw_addr)
from .cas import UnsuccessfulRead
from .node import ClientNode, ServerNode
from .runtime import SimNet

#: Synthetic writer identity used by injected overflow records.
FAULT_WRITER = Uid(b"\xff" * 8, 0)


@dataclass
class OpRecord:
    client: str
    kind: str
    value_label: str
    t_start: float
    t_end: float | None = None
    rounds: int = 0
    retries: int = 0
    status: str = "pending"
    returned_label: str | None = None

    def latency_ms(self) -> float | None:
        if self.t_end is None:
            return None
        return self.t_end - self.t_start


@dataclass
class Metrics:
    ops: list[OpRecord] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)
    msgs_sent: int = 0
    bytes_sent: int = 0
    by_type: dict = field(default_factory=dict)
    duration_ms: float = 0.0

    def completed(self, kind: str | None = None) -> list[OpRecord]:
        return [op for op in self.ops if op.status == "ok"
                and (kind is None or op.kind == kind)]

    @property
    def unsuccessful_reads(self) -> int:
        return sum(1 for op in self.ops if op.status == "unsuccessful")

    def canonical(self) -> str:
        parts = []
        for op in self.ops:
            parts.append(repr((op.client, op.kind, op.value_label, op.t_start,
                               op.t_end, op.rounds, op.retries, op.status,
                               op.returned_label)))
        for ev in self.events:
            parts.append(repr(ev))
        parts.append(repr((self.msgs_sent, self.bytes_sent)))
        for key in sorted(self.by_type):
            parts.append(repr((key, self.by_type[key])))
        parts.append(repr(round(self.duration_ms, 9)))
        return "\n".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def ops_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["client", "kind", "value", "t_start_ms", "t_end_ms",
                    "rounds", "retries", "status", "returned"])
        for op in self.ops:
            w.writerow([op.client, op.kind, op.value_label, op.t_start,
                        op.t_end if op.t_end is not None else "",
                        op.rounds, op.retries, op.status,
                        op.returned_label or ""])
        return out.getvalue()


@dataclass
class HistoryEvent:
    t: float
    client: str
    kind: str
    action: str  # invoke | respond
    value_label: str | None

    def row(self):
        return [self.t, self.client, self.kind, self.action,
                self.value_label or ""]


class History:
    """Timestamped invocations and responses, one list for the whole run."""

    def __init__(self):
        self.events: list[HistoryEvent] = []

    def invoke(self, t, client, kind, label):
        self.events.append(HistoryEvent(t, client, kind, "invoke", label))

    def respond(self, t, client, kind, label):
        self.events.append(HistoryEvent(t, client, kind, "respond", label))

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["t_ms", "client", "kind", "action", "value"])
        for ev in self.events:
            w.writerow(ev.row())
        return out.getvalue()


class _ClientScript:
    """Sequential operation schedule of one client, surviving restarts."""

    def __init__(self, run: "ScenarioRun", index: int):
        self.run = run
        self.index = index
        self.node_id = f"c{index}"
        self.role = "write" if index < run.scenario.n_writers else "read"
        self.rng = random.Random(run.scenario.seed * 1_000_003 + index)
        self.ops_done = 0
        self.finished = run.scenario.op_count == 0
        self.crashed = False
        self.current: OpRecord | None = None

    def op_kind(self) -> str:
        if self.run.scenario.mixed_ops:
            return "write" if self.rng.random() < 0.5 else "read"
        return self.role

    def make_value(self) -> bytes:
        size = self.run.scenario.object_size
        header = self.index.to_bytes(4, "big") + self.ops_done.to_bytes(4, "big")
        body = self.rng.randbytes(max(0, size - len(header)))
        return (header + body)[:size] if size >= len(header) else header[:size]

    def delay(self) -> float:
        lo, hi = self.run.scenario.inter_op_delay_ms
        return self.rng.uniform(lo, hi)


class ScenarioRun:
    """One executed scenario; exposes history, metrics, and live node state."""

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.net = SimNet(scenario.link, scenario.seed)
        self.history = History()
        self.metrics = Metrics()
        self.value_labels: dict[bytes, str] = {b"": "init"}
        self.fault_rng = random.Random(scenario.seed ^ 0x5EED)
        self.servers: dict[str, ServerNode] = {}
        self.clients: dict[str, ClientNode] = {}
        self.scripts: list[_ClientScript] = []
        self._restarts_pending: dict[str, int] = {}
        for fault in scenario.faults:
            if fault.kind == "restart":
                self._restarts_pending[fault.target] = \
                    self._restarts_pending.get(fault.target, 0) + 1
        self._build()

    # -- construction -----------------------------------------------------------

    def _record_event(self, node, kind, detail):
        self.metrics.events.append((round(self.net.clock, 6), node, kind,
                                    repr(detail)))

    def _build(self):
        scen = self.scenario
        for i, sid in enumerate(scen.quorum.servers):
            node = ServerNode(sid, i, self.net, scen, self._record_event)
            self.net.register(sid, node)
            node.start()
            self.servers[sid] = node
        for i in range(scen.n_clients):
            script = _ClientScript(self, i)
            self.scripts.append(script)
            self._spawn_client(script, restarted=False, at_ms=1.0 + i * 2.0)
        for fault in scen.faults:
            self.net.schedule(fault.time_ms,
                              lambda f=fault: self._apply_fault(f))

    def _spawn_client(self, script: _ClientScript, restarted: bool,
                      at_ms: float | None = None):
        node = ClientNode(script.node_id, client_hw_addr(script.index),
                          self.net, self.scenario, self._record_event)
        self.clients[script.node_id] = node
        self.net.register(script.node_id, node)

        def boot():
            node.boot(restarted, on_ready=lambda _: self._schedule_next(script))

        if at_ms is None:
            boot()
        else:
            self.net.schedule(at_ms, boot)

    # -- client scripting ----------------------------------------------------------

    def _schedule_next(self, script: _ClientScript):
        if script.finished or script.crashed:
            return
        self.net.schedule(self.net.clock + script.delay(),
                          lambda: self._start_op(script))

    def _start_op(self, script: _ClientScript):
        if script.finished or script.crashed:
            return
        client = self.clients[script.node_id]
        if not self.net.is_alive(script.node_id):
            return
        if client.busy():  # periodic incarnation task in flight; retry shortly
            self.net.schedule(self.net.clock + 5.0,
                              lambda: self._start_op(script))
            return
        kind = script.op_kind()
        value = script.make_value() if kind == "write" else None
        label = f"c{script.index}o{script.ops_done}" if kind == "write" else "?"
        if kind == "write":
            self.value_labels[value] = label
        op = OpRecord(script.node_id, kind, label, self.net.clock)
        script.current = op
        self.metrics.ops.append(op)
        self.history.invoke(self.net.clock, script.node_id, kind,
                            label if kind == "write" else None)
        client.submit(kind, value,
                      lambda result: self._op_done(script, op, result))

    def _op_done(self, script: _ClientScript, op: OpRecord, result):
        client = self.clients[script.node_id]
        op.t_end = self.net.clock
        op.rounds = client.rounds_this_op
        op.retries = client.retries_this_op
        if isinstance(result, UnsuccessfulRead):
            op.status = "unsuccessful"
            self.history.respond(self.net.clock, script.node_id, op.kind,
                                 "<unsuccessful>")
        elif isinstance(result, OverflowDetected):
            op.status = "aborted"
            self.history.respond(self.net.clock, script.node_id, op.kind,
                                 "<aborted>")
        elif isinstance(result, StableRegError):
            op.status = "failed"
            self.history.respond(self.net.clock, script.node_id, op.kind,
                                 "<failed>")
        else:
            op.status = "ok"
            if op.kind == "read":
                _, _, data = result
                label = self.value_labels.get(
                    data, "?" + hashlib.sha256(data).hexdigest()[:8])
                op.returned_label = label
                self.history.respond(self.net.clock, script.node_id, "read", label)
            else:
                op.returned_label = op.value_label
                self.history.respond(self.net.clock, script.node_id, "write",
                                     op.value_label)
        script.current = None
        script.ops_done += 1
        if script.ops_done >= self.scenario.op_count:
            script.finished = True
        else:
            self._schedule_next(script)

    # -- fault injection --------------------------------------------------------------

    def _apply_fault(self, fault):
        target = fault.target
        self._record_event(target, f"fault:{fault.kind}", fault.time_ms)
        if fault.kind == "crash":
            self.net.crash(target)
            script = self._script_for(target)
            if script is not None:
                script.crashed = True
                if script.current is not None:
                    script.current.status = "pending"
                    script.current = None
            return
        if fault.kind == "restart":
            script = self._script_for(target)
            if script is None:
                return
            self._restarts_pending[target] -= 1
            script.crashed = False
            self._spawn_client(script, restarted=True)
            return
        node = self.servers.get(target) or self.clients.get(target)
        if node is None:
            return
        if fault.kind == "corruptStore" and target in self.servers:
            node.corrupt_store(self.fault_rng)
        elif fault.kind == "corruptChannel":
            node.transport.corrupt_counters(self.fault_rng)
        elif fault.kind == "corruptResetState" and target in self.servers:
            node.corrupt_reset_state(self.fault_rng)
        elif fault.kind == "corruptIncQueue" and target in self.servers:
            node.corrupt_inc_queue(self.fault_rng)
        elif fault.kind == "injectOverflowTag" and target in self.servers:
            node.inject_overflow_tag(FAULT_WRITER)

    def _script_for(self, node_id: str) -> _ClientScript | None:
        for script in self.scripts:
            if script.node_id == node_id:
                return script
        return None

    # -- execution -----------------------------------------------------------------

    def _all_done(self) -> bool:
        for script in self.scripts:
            if script.finished:
                continue
            if script.crashed and self._restarts_pending.get(script.node_id, 0) == 0:
                continue
            return False
        return True

    def run(self) -> "ScenarioRun":
        self.net.run(self.scenario.max_run_ms, stop_when=self._all_done)
        # Drain the last client op completion if the stop check fired between
        # response delivery and bookkeeping.
        self.metrics.duration_ms = self.net.clock
        self.metrics.msgs_sent = self.net.counters.msgs
        self.metrics.bytes_sent = self.net.counters.bytes
        self.metrics.by_type = {k: tuple(v)
                                for k, v in self.net.counters.by_type.items()}
        return self

    # -- post-run helpers --------------------------------------------------------------

    def lincheck_ops(self):
        """Operations in the form the linearizability checker consumes."""
        from .lincheck import Op
        ops = []
        by_client: dict[str, list] = {}
        for ev in self.history.events:
            by_client.setdefault(ev.client, []).append(ev)
        for client, events in sorted(by_client.items()):
            pending = None
            for ev in events:
                if ev.action == "invoke":
                    pending = ev
                else:
                    assert pending is not None, "respond without invoke"
                    if ev.value_label not in ("<unsuccessful>", "<aborted>",
                                              "<failed>"):
                        ops.append(Op(client, pending.kind,
                                      pending.t, ev.t,
                                      pending.value_label if pending.kind == "write"
                                      else ev.value_label))
                    pending = None
            if pending is not None and pending.kind == "write":
                # Crashed or unfinished write: possibly effective.
                ops.append(Op(client, "write", pending.t, None,
                              pending.value_label))
        return ops


def run_scenario(scenario: ScenarioConfig) -> ScenarioRun:
    if scenario.quorum.n_clients < scenario.n_clients:
        raise InvalidConfig("quorum.n_clients below the scenario client count")
    return ScenarioRun(scenario).run()
