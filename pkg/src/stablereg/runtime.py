"""Deterministic discrete-event network: virtual clock, faulty links, timers.

Single-threaded; every run is a pure function of the scenario config and
seed. Datagrams suffer seeded loss, duplication, and reordering; bulk
transfers are a lossless FIFO per ordered node pair. Crashed nodes receive
nothing and their timers never fire.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .config import LinkModel
from .wire import Frame, FrameKind, frame_size


@dataclass(slots=True)
class TimerHandle:
    node_id: str
    generation: int
    cancelled: bool = False


@dataclass
class TrafficCounters:
    msgs: int = 0
    bytes: int = 0
    by_type: dict = field(default_factory=dict)

    def record(self, frame: Frame, size: int) -> None:
        self.msgs += 1
        self.bytes += size
        key = (int(frame.kind), int(frame.msg.msg_type))
        entry = self.by_type.get(key)
        if entry is None:
            self.by_type[key] = [1, size]
        else:
            entry[0] += 1
            entry[1] += size


class SimNet:
    """The simulated network and event loop."""

    def __init__(self, link: LinkModel, seed: int):
        self.link = link
        self.rng = random.Random(seed)
        self.clock = 0.0
        self._heap: list = []
        self._seq = 0
        self.nodes: dict[str, object] = {}
        self.alive: dict[str, bool] = {}
        self.generation: dict[str, int] = {}
        self.counters = TrafficCounters()
        self._bulk_tail: dict[tuple[str, str], float] = {}
        self.trace_hooks: list = []
        self.link_overrides: dict[tuple[str, str], LinkModel] = {}

    # -- node management ------------------------------------------------------

    def register(self, node_id: str, node) -> None:
        self.nodes[node_id] = node
        self.alive[node_id] = True
        self.generation[node_id] = self.generation.get(node_id, 0) + 1

    def crash(self, node_id: str) -> None:
        self.alive[node_id] = False
        self.generation[node_id] += 1

    def is_alive(self, node_id: str) -> bool:
        return self.alive.get(node_id, False)

    # -- env interface used by Transport ---------------------------------------

    def now(self) -> float:
        return self.clock

    def set_timer(self, node_id: str, delay_ms: float, fn) -> TimerHandle:
        handle = TimerHandle(node_id, self.generation[node_id])
        self._push(self.clock + delay_ms, ("timer", handle, fn))
        return handle

    def cancel_timer(self, handle: TimerHandle) -> None:
        handle.cancelled = True

    def send(self, src: str, dst: str, frame: Frame) -> None:
        size = frame_size(frame)
        self.counters.record(frame, size)
        link = self.link_overrides.get((src, dst), self.link)
        copies = 1
        if self.rng.random() < link.loss_prob:
            copies = 0
        if copies and self.rng.random() < link.dup_prob:
            copies += 1
        for _ in range(copies):
            latency = self._sample_latency(link, size)
            self._push(self.clock + latency, ("deliver", dst, src, frame,
                                              self.generation.get(dst, 0)))

    def send_bulk(self, src: str, dst: str, frame: Frame) -> None:
        size = frame_size(frame)
        self.counters.record(frame, size)
        link = self.link_overrides.get((src, dst), self.link)
        latency = self._sample_latency(link, size)
        key = (src, dst)
        at = max(self.clock + latency, self._bulk_tail.get(key, 0.0) + 1e-6)
        self._bulk_tail[key] = at
        self._push(at, ("deliver", dst, src, frame, self.generation.get(dst, 0)))

    def _sample_latency(self, link: LinkModel, size: int) -> float:
        base = self.rng.triangular(link.latency_min_ms, link.latency_max_ms,
                                   link.latency_mode_ms)
        if link.reorder_prob and self.rng.random() < link.reorder_prob:
            base += self.rng.uniform(0.0, 2.0 * link.latency_mode_ms)
        return base + size / link.bandwidth_bytes_per_ms

    # -- event loop -------------------------------------------------------------

    def _push(self, at: float, event) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, event))

    def schedule(self, at_ms: float, fn) -> None:
        """Run fn at absolute virtual time (scenario-level hook)."""
        self._push(at_ms, ("call", fn))

    def idle(self) -> bool:
        return not self._heap

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        if not self._heap:
            return False
        at, _, event = heapq.heappop(self._heap)
        self.clock = max(self.clock, at)
        kind = event[0]
        if kind == "deliver":
            _, dst, src, frame, gen = event
            if self.alive.get(dst) and self.generation[dst] == gen:
                for hook in self.trace_hooks:
                    hook(self.clock, src, dst, frame)
                self.nodes[dst].on_frame(src, frame)
        elif kind == "timer":
            _, handle, fn = event
            if (not handle.cancelled and self.alive.get(handle.node_id)
                    and self.generation[handle.node_id] == handle.generation):
                fn()
        elif kind == "call":
            event[1]()
        return True

    def run_until(self, t_ms: float) -> None:
        while self._heap and self._heap[0][0] <= t_ms:
            self.step()
        self.clock = max(self.clock, t_ms)

    def run(self, until_ms: float, stop_when=None) -> None:
        while self._heap and self._heap[0][0] <= until_ms:
            self.step()
            if stop_when is not None and stop_when():
                return
        self.clock = max(self.clock, until_ms)
