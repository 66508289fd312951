"""Core value types shared by every protocol: identities, tags, records, quorums.

Everything here is an immutable value; instances are safe to copy between
nodes and to embed in messages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

HWADDR_LEN = 8

DEFAULT_MAXINT = 2**64 - 1
DEFAULT_MAXINC = 2**32 - 1
DEFAULT_DELTA = 16

# Coding library ceiling mirrored as a configuration bound: data plus parity
# shard count may not exceed 32.
MAX_SERVERS_CODED = 32


class StableRegError(Exception):
    """Base class for errors raised by this package."""


class InvalidConfig(StableRegError):
    """Quorum or scenario configuration violates an invariant."""


class OverflowDetected(StableRegError):
    """A bounded counter (tag sequence or incarnation number) is exhausted."""


class Variant(str, Enum):
    MWABD = "MWABD"
    CAS = "CAS"
    CASSS = "CASSS"


class Ordering(Enum):
    LT = -1
    EQ = 0
    GT = 1


@dataclass(frozen=True, slots=True)
class Uid:
    """Client identity: fixed-size hardware address plus incarnation number.

    The hardware address never changes for a node; the incarnation number is
    bumped through the reincarnation service when the client restarts.
    """

    hw_addr: bytes
    inc_nbr: int

    def __post_init__(self):
        if len(self.hw_addr) != HWADDR_LEN:
            raise ValueError(f"hw_addr must be {HWADDR_LEN} bytes")
        if self.inc_nbr < 0:
            raise ValueError("inc_nbr must be non-negative")

    def sort_key(self) -> tuple:
        return (self.inc_nbr, self.hw_addr)

    def __repr__(self):
        return f"Uid({self.hw_addr.hex()},{self.inc_nbr})"


#: Distinguished "no writer" identity used by initial and reset-installed tags.
NULL_UID = Uid(b"\x00" * HWADDR_LEN, 0)


@dataclass(frozen=True, slots=True)
class Tag:
    """Version identifier: (sequence number, writer uid), totally ordered."""

    seq: int
    writer: Uid

    def sort_key(self) -> tuple:
        return (self.seq, self.writer.inc_nbr, self.writer.hw_addr)

    def __lt__(self, other: "Tag"):
        return self.sort_key() < other.sort_key()

    def __le__(self, other: "Tag"):
        return self.sort_key() <= other.sort_key()

    def __repr__(self):
        return f"Tag({self.seq},{self.writer!r})"


#: Sentinel tag of the never-written register.
INITIAL_TAG = Tag(0, NULL_UID)

#: Tag installed by a global reset for the preserved value; below any tag a
#: live writer can mint (writers always start from a query result >= this).
RESET_TAG = Tag(1, NULL_UID)


class Phase(str, Enum):
    PRE = "pre"
    FIN = "fin"
    FINFIN = "FIN"


_PHASE_RANK = {Phase.PRE: 0, Phase.FIN: 1, Phase.FINFIN: 2}


def phase_rank(p: Phase) -> int:
    return _PHASE_RANK[p]


@dataclass(slots=True)
class Record:
    """One stored object version: tag, coded element (or None), protocol phase.

    For a given tag the phase only advances pre -> fin -> FIN.
    """

    tag: Tag
    element: bytes | None
    phase: Phase

    def upgrade(self, phase: Phase) -> None:
        if phase_rank(phase) > phase_rank(self.phase):
            self.phase = phase

    def is_finalized(self) -> bool:
        return self.phase is not Phase.PRE


def compare_tags(a: Tag, b: Tag) -> Ordering:
    """Total order over tags: (seq, writer incarnation, writer address)."""
    ka, kb = a.sort_key(), b.sort_key()
    if ka < kb:
        return Ordering.LT
    if ka > kb:
        return Ordering.GT
    return Ordering.EQ


def max_tag(tags) -> Tag:
    """Maximum of an iterable of tags; INITIAL_TAG if empty."""
    best = INITIAL_TAG
    for t in tags:
        if best < t:
            best = t
    return best


def next_tag(max_seen: Tag, self_uid: Uid, maxint: int = DEFAULT_MAXINT) -> Tag:
    """Successor tag for a new write: (seq + 1, own uid).

    Raises OverflowDetected when the sequence space is exhausted; the caller
    must abort and leave recovery to the servers' reset path.
    """
    if max_seen.seq >= maxint:
        raise OverflowDetected(f"tag sequence reached its bound {maxint}")
    return Tag(max_seen.seq + 1, self_uid)


@dataclass(frozen=True)
class QuorumConfig:
    """Static service configuration: membership, failure bound, coding."""

    servers: tuple[str, ...]
    f: int
    k: int
    variant: Variant
    delta: int = DEFAULT_DELTA
    maxint: int = DEFAULT_MAXINT
    maxinc: int = DEFAULT_MAXINC
    n_clients: int = 8

    def __post_init__(self):
        n = len(self.servers)
        if n < 1:
            raise InvalidConfig("at least one server required")
        if len(set(self.servers)) != n:
            raise InvalidConfig("duplicate server addresses")
        if self.f < 0 or self.f > n:
            raise InvalidConfig(f"f={self.f} out of range for N={n}")
        if self.variant is not Variant.MWABD:
            if n > MAX_SERVERS_CODED:
                raise InvalidConfig(
                    f"N={n} exceeds the coded-storage limit of {MAX_SERVERS_CODED}")
            if self.k < 1 or self.k > n - 2 * self.f:
                raise InvalidConfig(
                    f"k={self.k} outside [1, N-2f]=[1, {n - 2 * self.f}]")
        if self.delta < 0:
            raise InvalidConfig("delta must be non-negative")
        if self.maxint < 1 or self.maxinc < 1:
            raise InvalidConfig("overflow bounds must be positive")
        if self.n_clients < 1:
            raise InvalidConfig("n_clients must be positive")

    @property
    def n(self) -> int:
        return len(self.servers)

    def majority_size(self) -> int:
        return self.n // 2 + 1

    def coded_quorum_size(self) -> int:
        return math.ceil((self.n + self.k) / 2)

    def record_bound(self) -> int:
        """CASSS per-server storage bound on relevant records."""
        return self.n_clients + self.delta + 3


def quorum_size(cfg: QuorumConfig) -> int:
    """Quorum size used by the configured variant.

    Coded variants use ceil((N+k)/2) so that any two quorums share at least
    k servers; MW-ABD uses a simple majority.
    """
    if cfg.variant is Variant.MWABD:
        return cfg.majority_size()
    return cfg.coded_quorum_size()


def client_hw_addr(index: int) -> bytes:
    """Deterministic hardware address for the index-th client of a deployment."""
    if not 0 <= index < 2**32:
        raise ValueError("client index out of range")
    return b"\x00\x00\x00\x01" + index.to_bytes(4, "big")


def server_hw_addr(index: int) -> bytes:
    if not 0 <= index < 2**32:
        raise ValueError("server index out of range")
    return b"\x00\x00\x00\x02" + index.to_bytes(4, "big")
