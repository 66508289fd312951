"""Canonical wire encoding for every message the nodes exchange.

Layout rules: fixed field order, 64-bit big-endian integers, length-prefixed
byte fields, optional fields behind a one-byte presence flag. Equal messages
always produce identical byte strings, so sizes and hashes are well defined.

Inside the simulator frames travel as Python objects; `frame_size` computes
the canonical encoded size without materializing bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .core import HWADDR_LEN, Phase, Tag, Uid

_U16 = struct.Struct(">H")
_U64 = struct.Struct(">Q")
_U32 = struct.Struct(">I")


class MsgType(IntEnum):
    QUERY = 1
    PREWRITE = 2   # doubles as the write/propagate message of MW-ABD
    FINWRITE = 3
    FINREAD = 4    # doubles as the data-carrying query of an MW-ABD read
    FINFIN = 5
    ACK = 6
    GOSSIP = 7
    CNTRQRY = 8
    INCCNTR = 9
    RESETSTATE = 10


class FrameKind(IntEnum):
    RAW = 0      # fire-and-forget datagram (periodic gossip)
    REQ = 1      # token-passing channel request
    RESP = 2     # token-passing channel response
    BULK_REQ = 3
    BULK_RESP = 4


# Channel classes keep independent token state so gossip or reset traffic
# cannot head-of-line-block quorum phases.
CLS_QUORUM = 0
CLS_GOSSIP = 1
CLS_RESET = 2
CLS_BULK = 3

_PHASE_CODE = {Phase.PRE: 0, Phase.FIN: 1, Phase.FINFIN: 2}
_PHASE_FROM = {v: k for k, v in _PHASE_CODE.items()}

PHASE_NAME_CODES = {"query": 0, "prewrite": 1, "finwrite": 2, "finread": 3,
                    "finfin": 4, "cntrqry": 5, "inccntr": 6, "abdwrite": 7,
                    "abdprop": 8}
_PHASE_NAME_FROM = {v: k for k, v in PHASE_NAME_CODES.items()}


class WireError(ValueError):
    """Raised when bytes cannot be parsed; callers drop such input."""


def _need(data: bytes, off: int, n: int) -> None:
    if off + n > len(data):
        raise WireError("truncated message")


def _pack_uid(out: bytearray, uid: Uid) -> None:
    out += uid.hw_addr
    out += _U64.pack(uid.inc_nbr)


def _unpack_uid(data: bytes, off: int) -> tuple[Uid, int]:
    _need(data, off, HWADDR_LEN + 8)
    hw = data[off:off + HWADDR_LEN]
    inc = _U64.unpack_from(data, off + HWADDR_LEN)[0]
    return Uid(hw, inc), off + HWADDR_LEN + 8

UID_SIZE = HWADDR_LEN + 8


def _pack_tag(out: bytearray, tag: Tag) -> None:
    out += _U64.pack(tag.seq)
    _pack_uid(out, tag.writer)


def _unpack_tag(data: bytes, off: int) -> tuple[Tag, int]:
    _need(data, off, 8)
    seq = _U64.unpack_from(data, off)[0]
    uid, off = _unpack_uid(data, off + 8)
    return Tag(seq, uid), off

TAG_SIZE = 8 + UID_SIZE


def _pack_bytes(out: bytearray, data: bytes) -> None:
    out += _U32.pack(len(data))
    out += data


def _unpack_bytes(data: bytes, off: int) -> tuple[bytes, int]:
    _need(data, off, 4)
    n = _U32.unpack_from(data, off)[0]
    _need(data, off + 4, n)
    return data[off + 4:off + 4 + n], off + 4 + n


@dataclass(frozen=True, slots=True)
class PhaseId:
    """Identifies one quorum phase attempt; stale responses are filtered on it.

    The counter lives in a bounded window so an arbitrary corrupted value
    stays encodable.
    """

    uid: Uid
    ctr: int
    name: str

    SIZE = UID_SIZE + 2 + 1

    def pack(self, out: bytearray) -> None:
        _pack_uid(out, self.uid)
        out += _U16.pack(self.ctr & 0xFFFF)
        out += bytes([PHASE_NAME_CODES[self.name]])

    @classmethod
    def unpack(cls, data: bytes, off: int) -> tuple["PhaseId", int]:
        uid, off = _unpack_uid(data, off)
        _need(data, off, 3)
        ctr = _U16.unpack_from(data, off)[0]
        code = data[off + 2]
        if code not in _PHASE_NAME_FROM:
            raise WireError("bad phase name code")
        return cls(uid, ctr, _PHASE_NAME_FROM[code]), off + 3


# ---------------------------------------------------------------------------
# Structured payloads. Each knows its canonical encoding and size.

@dataclass(frozen=True, slots=True)
class QuorumReq:
    """Quorum phase request. Mutating phases carry the reset epoch the client
    observed during its query; servers fence out mismatched epochs so a tag
    minted after a global reset can never mix with leftovers of its pre-reset
    namesake."""

    phase_id: PhaseId
    epoch: int = 0

    def pack(self, out: bytearray) -> None:
        self.phase_id.pack(out)
        out += _U16.pack(self.epoch & 0xFFFF)

    def size(self) -> int:
        return PhaseId.SIZE + 2

    @classmethod
    def unpack(cls, data: bytes) -> "QuorumReq":
        pid, off = PhaseId.unpack(data, 0)
        _need(data, off, 2)
        return cls(pid, _U16.unpack_from(data, off)[0])


@dataclass(frozen=True, slots=True)
class IncCntrReq:
    phase_id: PhaseId
    new_inc: int
    epoch: int = 0

    def pack(self, out: bytearray) -> None:
        self.phase_id.pack(out)
        out += _U64.pack(self.new_inc)
        out += _U16.pack(self.epoch & 0xFFFF)

    def size(self) -> int:
        return PhaseId.SIZE + 10

    @classmethod
    def unpack(cls, data: bytes) -> "IncCntrReq":
        pid, off = PhaseId.unpack(data, 0)
        _need(data, off, 10)
        return cls(pid, _U64.unpack_from(data, off)[0],
                   _U16.unpack_from(data, off + 8)[0])


@dataclass(frozen=True, slots=True)
class QueryResp:
    phase_id: PhaseId
    epoch: int
    max_fin: Tag
    max_pre: Tag

    def pack(self, out: bytearray) -> None:
        self.phase_id.pack(out)
        out += _U16.pack(self.epoch & 0xFFFF)
        _pack_tag(out, self.max_fin)
        _pack_tag(out, self.max_pre)

    def size(self) -> int:
        return PhaseId.SIZE + 2 + 2 * TAG_SIZE

    @classmethod
    def unpack(cls, data: bytes) -> "QueryResp":
        pid, off = PhaseId.unpack(data, 0)
        _need(data, off, 2)
        epoch = _U16.unpack_from(data, off)[0]
        fin, off = _unpack_tag(data, off + 2)
        pre, off = _unpack_tag(data, off)
        return cls(pid, epoch, fin, pre)


@dataclass(frozen=True, slots=True)
class AckResp:
    phase_id: PhaseId
    epoch: int

    def pack(self, out: bytearray) -> None:
        self.phase_id.pack(out)
        out += _U16.pack(self.epoch & 0xFFFF)

    def size(self) -> int:
        return PhaseId.SIZE + 2

    @classmethod
    def unpack(cls, data: bytes) -> "AckResp":
        pid, off = PhaseId.unpack(data, 0)
        _need(data, off, 2)
        return cls(pid, _U16.unpack_from(data, off)[0])


@dataclass(frozen=True, slots=True)
class CntrResp:
    phase_id: PhaseId
    epoch: int
    inc_nbr: int

    def pack(self, out: bytearray) -> None:
        self.phase_id.pack(out)
        out += _U16.pack(self.epoch & 0xFFFF)
        out += _U64.pack(self.inc_nbr)

    def size(self) -> int:
        return PhaseId.SIZE + 2 + 8

    @classmethod
    def unpack(cls, data: bytes) -> "CntrResp":
        pid, off = PhaseId.unpack(data, 0)
        _need(data, off, 10)
        epoch = _U16.unpack_from(data, off)[0]
        inc = _U64.unpack_from(data, off + 2)[0]
        return cls(pid, epoch, inc)


@dataclass(frozen=True, slots=True)
class GossipPayload:
    """Digest of a server's maxima; also used for the one-shot finalize gossip."""

    max_pre: Tag
    max_fin: Tag
    max_inc: int
    overflow: bool

    def pack(self, out: bytearray) -> None:
        _pack_tag(out, self.max_pre)
        _pack_tag(out, self.max_fin)
        out += _U64.pack(self.max_inc)
        out += bytes([1 if self.overflow else 0])

    def size(self) -> int:
        return 2 * TAG_SIZE + 9

    @classmethod
    def unpack(cls, data: bytes) -> "GossipPayload":
        pre, off = _unpack_tag(data, 0)
        fin, off = _unpack_tag(data, off)
        _need(data, off, 9)
        inc = _U64.unpack_from(data, off)[0]
        return cls(pre, fin, inc, data[off + 8] != 0)


#: Proposal phase marker for the reset agreement's undefined entry.
BOT = 255


@dataclass(frozen=True, slots=True)
class Proposal:
    """(phase, tag) entry of the reset agreement; phase BOT encodes bottom."""

    phase: int
    tag: Tag | None

    def pack(self, out: bytearray) -> None:
        out += bytes([self.phase])
        if self.tag is None:
            out += b"\x00"
        else:
            out += b"\x01"
            _pack_tag(out, self.tag)

    def size(self) -> int:
        return 2 + (TAG_SIZE if self.tag is not None else 0)

    @classmethod
    def unpack(cls, data: bytes, off: int) -> tuple["Proposal", int]:
        _need(data, off, 2)
        phase = data[off]
        if data[off + 1]:
            tag, off2 = _unpack_tag(data, off + 2)
            return cls(phase, tag), off2
        return cls(phase, None), off + 2


DEFAULT_PRP = Proposal(0, None)
BOT_PRP = Proposal(BOT, None)


@dataclass(frozen=True, slots=True)
class ResetXchg:
    """One side of a reset-state exchange: own entry plus echo of the peer's."""

    prp: Proposal
    all_flag: bool
    echo_prp: Proposal | None
    echo_all: bool

    def pack(self, out: bytearray) -> None:
        self.prp.pack(out)
        out += bytes([1 if self.all_flag else 0])
        if self.echo_prp is None:
            out += b"\x00"
        else:
            out += b"\x01"
            self.echo_prp.pack(out)
        out += bytes([1 if self.echo_all else 0])

    def size(self) -> int:
        n = self.prp.size() + 3
        if self.echo_prp is not None:
            n += self.echo_prp.size()
        return n

    @classmethod
    def unpack(cls, data: bytes) -> "ResetXchg":
        prp, off = Proposal.unpack(data, 0)
        _need(data, off, 2)
        all_flag = data[off] != 0
        echo = None
        off += 1
        if data[off]:
            echo, off = Proposal.unpack(data, off + 1)
        else:
            off += 1
        _need(data, off, 1)
        return cls(prp, all_flag, echo, data[off] != 0)


_PAYLOAD_TYPES = (QuorumReq, IncCntrReq, QueryResp, AckResp, CntrResp,
                  GossipPayload, ResetXchg)
_PAYLOAD_CODE = {t: i for i, t in enumerate(_PAYLOAD_TYPES)}


@dataclass(frozen=True, slots=True)
class WireMessage:
    """One protocol message; `payload` is a structured payload or None."""

    msg_type: MsgType
    sender: Uid
    token: int = 0
    tag: Tag | None = None
    phase: Phase | None = None
    element: bytes | None = None
    payload: object | None = None


def encode_message(msg: WireMessage) -> bytes:
    out = bytearray()
    out += bytes([msg.msg_type])
    out += _U64.pack(msg.token)
    if msg.tag is None:
        out += b"\x00"
    else:
        out += b"\x01"
        _pack_tag(out, msg.tag)
    out += bytes([0xFF if msg.phase is None else _PHASE_CODE[msg.phase]])
    if msg.element is None:
        out += b"\x00"
    else:
        out += b"\x01"
        _pack_bytes(out, msg.element)
    _pack_uid(out, msg.sender)
    if msg.payload is None:
        out += b"\xff"
    else:
        out += bytes([_PAYLOAD_CODE[type(msg.payload)]])
        body = bytearray()
        msg.payload.pack(body)
        _pack_bytes(out, bytes(body))
    return bytes(out)


def message_size(msg: WireMessage) -> int:
    n = 1 + 8
    n += 1 + (TAG_SIZE if msg.tag is not None else 0)
    n += 1
    n += 1 + (4 + len(msg.element) if msg.element is not None else 0)
    n += UID_SIZE
    n += 1 + (4 + msg.payload.size() if msg.payload is not None else 0)
    return n


def decode_message(data: bytes) -> WireMessage:
    off = 0
    _need(data, off, 10)
    try:
        mtype = MsgType(data[0])
    except ValueError:
        raise WireError(f"unknown msg type {data[0]}") from None
    token = _U64.unpack_from(data, 1)[0]
    off = 9
    tag = None
    _need(data, off, 1)
    if data[off]:
        tag, off = _unpack_tag(data, off + 1)
    else:
        off += 1
    _need(data, off, 1)
    pcode = data[off]
    off += 1
    if pcode == 0xFF:
        phase = None
    elif pcode in _PHASE_FROM:
        phase = _PHASE_FROM[pcode]
    else:
        raise WireError("bad record phase")
    element = None
    _need(data, off, 1)
    if data[off]:
        element, off = _unpack_bytes(data, off + 1)
    else:
        off += 1
    sender, off = _unpack_uid(data, off)
    _need(data, off, 1)
    paycode = data[off]
    off += 1
    payload = None
    if paycode != 0xFF:
        if paycode >= len(_PAYLOAD_TYPES):
            raise WireError("bad payload code")
        body, off = _unpack_bytes(data, off)
        payload = _PAYLOAD_TYPES[paycode].unpack(body)
    if off != len(data):
        raise WireError("trailing bytes")
    return WireMessage(mtype, sender, token, tag, phase, element, payload)


@dataclass(frozen=True, slots=True)
class Frame:
    """Transport envelope: delivery kind, channel class, message."""

    kind: FrameKind
    cls: int
    msg: WireMessage


def encode_frame(frame: Frame) -> bytes:
    return bytes([frame.kind, frame.cls]) + encode_message(frame.msg)


def frame_size(frame: Frame) -> int:
    return 2 + message_size(frame.msg)


def decode_frame(data: bytes) -> Frame:
    _need(data, 0, 2)
    try:
        kind = FrameKind(data[0])
    except ValueError:
        raise WireError("unknown frame kind") from None
    return Frame(kind, data[1], decode_message(data[2:]))
