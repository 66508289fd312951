"""Register linearizability checking over recorded operation histories.

Search in the Wing-Gong style: repeatedly linearize some operation that is
minimal in the real-time precedence order, tracking the register value, with
memoization on (linearized-set, value). Histories are first split at
quiescent points; each segment threads its feasible final values into the
next. Writes that never responded are treated as possibly-effective: they
may be linearized anywhere after their invocation or omitted entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import StableRegError

#: Per-call cap on history length, mirroring the configured check window.
MAX_OPS = 1000
MAX_STATES = 2_000_000

INITIAL_VALUE = "init"


class StateSpaceExceeded(StableRegError):
    """History too adversarial for the configured search bounds."""


@dataclass(frozen=True)
class Op:
    client: str
    kind: str            # "read" | "write"
    invoke: float
    respond: float | None  # None: operation never completed
    value: str           # written value (writes) or returned value (reads)

    @property
    def respond_or_inf(self) -> float:
        return math.inf if self.respond is None else self.respond


@dataclass
class Verdict:
    ok: bool
    witness: list[Op] | None = None     # a valid linearization, if one exists
    violation: tuple[Op, Op] | None = None  # best-effort offending pair

    def __bool__(self):
        return self.ok


def _segments(ops: list[Op]) -> list[list[Op]]:
    """Split at quiescent cuts: no operation spans the boundary."""
    ordered = sorted(ops, key=lambda op: (op.invoke, op.respond_or_inf))
    segments: list[list[Op]] = []
    current: list[Op] = []
    frontier = -math.inf
    for op in ordered:
        if current and op.invoke > frontier:
            segments.append(current)
            current = []
        current.append(op)
        frontier = max(frontier, op.respond_or_inf)
    if current:
        segments.append(current)
    return segments


class _SegmentSearch:
    def __init__(self, ops: list[Op], budget: list[int]):
        self.ops = ops
        self.n = len(ops)
        self.budget = budget

    def solve(self, start_value: str) -> dict[str, list[Op]]:
        """All feasible final values with one witness order each."""
        completed_mask = 0
        for i, op in enumerate(self.ops):
            if op.respond is not None:
                completed_mask |= 1 << i
        results: dict[str, list[Op]] = {}
        seen: set[tuple[int, str]] = set()
        # Iterative DFS; path carries the witness under construction.
        stack = [(0, start_value, [])]
        while stack:
            done, value, path = stack.pop()
            if (done, value) in seen:
                continue
            seen.add((done, value))
            self.budget[0] -= 1
            if self.budget[0] <= 0:
                raise StateSpaceExceeded("linearization search budget exhausted")
            if done & completed_mask == completed_mask:
                if value not in results:
                    results[value] = path
                # Keep exploring: pending writes may extend to other finals.
            candidates = self._minimal(done)
            for i in candidates:
                op = self.ops[i]
                if op.kind == "read":
                    if op.value != value:
                        continue
                    stack.append((done | (1 << i), value, path + [op]))
                else:
                    stack.append((done | (1 << i), op.value, path + [op]))
        return results

    def _minimal(self, done: int) -> list[int]:
        """Operations linearizable next: no un-linearized op responded before
        their invocation."""
        horizon = math.inf
        for j, op in enumerate(self.ops):
            if not done & (1 << j):
                horizon = min(horizon, op.respond_or_inf)
        out = []
        for i, op in enumerate(self.ops):
            if not done & (1 << i) and op.invoke <= horizon:
                out.append(i)
        return out


def _find_violation_pair(ops: list[Op]) -> tuple[Op, Op] | None:
    """Heuristic witness: a completed read returning a value older than a
    write that finished before the read began."""
    writes = {op.value: op for op in ops if op.kind == "write"}
    for read in ops:
        if read.kind != "read" or read.respond is None:
            continue
        for write in ops:
            if write.kind != "write" or write.respond is None:
                continue
            if write.respond < read.invoke and read.value != write.value:
                src = writes.get(read.value)
                # The returned value was written before that write completed
                # (or never written at all): stale by criterion (1).
                if src is None or src.respond_or_inf < write.invoke:
                    return (read, write)
    return None


def check_linearizable(ops: list[Op], initial_value: str = INITIAL_VALUE) -> Verdict:
    """Decide whether a register linearization of `ops` exists.

    Values must identify writes uniquely (the harness guarantees this by
    construction). Raises StateSpaceExceeded past the configured bounds.
    """
    if len(ops) > MAX_OPS:
        raise StateSpaceExceeded(f"history of {len(ops)} ops exceeds {MAX_OPS}")
    for op in ops:
        if op.kind not in ("read", "write"):
            raise ValueError(f"unknown op kind {op.kind!r}")
    budget = [MAX_STATES]
    feasible: dict[str, list[Op]] = {initial_value: []}
    for segment in _segments(ops):
        search = _SegmentSearch(segment, budget)
        nxt: dict[str, list[Op]] = {}
        for value, witness in feasible.items():
            for final, seg_witness in search.solve(value).items():
                if final not in nxt:
                    nxt[final] = witness + seg_witness
        if not nxt:
            return Verdict(False, None, _find_violation_pair(ops))
        feasible = nxt
    witness = min(feasible.values(), key=len)
    return Verdict(True, witness, None)
