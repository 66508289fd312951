"""(N, k) maximum-distance-separable erasure coding of object values.

Systematic Reed-Solomon over GF(2^8): the first k elements are the data
shards, the remaining N-k carry parity, and any k elements reconstruct the
object. Shard arithmetic is vectorized with a 64 KiB multiplication table.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import MAX_SERVERS_CODED, QuorumConfig, StableRegError

_PRIM_POLY = 0x11D


class CodecParamError(StableRegError):
    """Coding parameters outside the supported range."""


class InsufficientElements(StableRegError):
    """Fewer than k distinct elements supplied to decode."""


class InconsistentElements(StableRegError):
    """Supplied elements disagree on length or original object size."""


@dataclass(frozen=True, slots=True)
class CodedElement:
    """One server's share of an encoded object."""

    index: int
    data: bytes
    object_len: int


def element_to_wire(el: CodedElement) -> bytes:
    """Self-describing byte form carried in message element fields."""
    return bytes([el.index]) + el.object_len.to_bytes(8, "big") + el.data


def element_from_wire(data: bytes) -> CodedElement:
    if len(data) < 9:
        raise ValueError("truncated coded element")
    return CodedElement(data[0], data[9:], int.from_bytes(data[1:9], "big"))


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIM_POLY
    exp[255:510] = exp[0:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    for a in range(1, 256):
        mul[a, 1:] = exp[(log[a] + log[1:256]) % 255]
    return exp, log, mul

_EXP, _LOG, _MUL = _build_tables()


def _gf_mul(a: int, b: int) -> int:
    return int(_MUL[a, b])


def _gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("no inverse of 0 in GF(256)")
    return int(_EXP[255 - _LOG[a]])


def _gf_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    for i in range(a.shape[0]):
        acc = np.zeros(b.shape[1], dtype=np.uint8)
        for j in range(a.shape[1]):
            if a[i, j]:
                acc ^= _MUL[a[i, j]][b[j]]
        out[i] = acc
    return out


def _gf_mat_inv(m: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inversion over GF(256); m is small (<= 32 x 32)."""
    n = m.shape[0]
    aug = np.concatenate([m.copy(), np.eye(n, dtype=np.uint8)], axis=1)
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r, col]), None)
        if pivot is None:
            raise InconsistentElements("element indices are not decodable")
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        inv = _gf_inv(int(aug[col, col]))
        aug[col] = _MUL[inv][aug[col]]
        for r in range(n):
            if r != col and aug[r, col]:
                aug[r] ^= _MUL[aug[r, col]][aug[col]]
    return aug[:, n:]


@lru_cache(maxsize=64)
def _generator_matrix(n: int, k: int) -> np.ndarray:
    """Systematic generator: Vandermonde rows normalized so the top k x k is I.

    Every k x k row-submatrix stays invertible, which is the MDS property.
    """
    vander = np.zeros((n, k), dtype=np.uint8)
    for i in range(n):
        acc = 1
        for j in range(k):
            vander[i, j] = acc
            acc = _gf_mul(acc, i + 1)
    top_inv = _gf_mat_inv(vander[:k])
    gen = _gf_matmul(vander, top_inv)
    return gen


def _check_params(n: int, k: int):
    if k < 1 or n < k:
        raise CodecParamError(f"need 1 <= k <= N, got k={k}, N={n}")
    if n > MAX_SERVERS_CODED:
        raise CodecParamError(
            f"N={n} exceeds the shard limit of {MAX_SERVERS_CODED}")


def element_size(object_len: int, k: int) -> int:
    """Bytes per coded element: ceil(object_len / k)."""
    return -(-object_len // k)


def encode(data: bytes, cfg: QuorumConfig) -> list[CodedElement]:
    return encode_nk(data, cfg.n, cfg.k)


def encode_nk(data: bytes, n: int, k: int) -> list[CodedElement]:
    """Split `data` into N coded elements, any k of which reconstruct it."""
    _check_params(n, k)
    if len(data) == 0:
        raise ValueError("cannot encode an empty object")
    shard_len = element_size(len(data), k)
    padded = np.frombuffer(data.ljust(shard_len * k, b"\x00"), dtype=np.uint8)
    shards = padded.reshape(k, shard_len)
    gen = _generator_matrix(n, k)
    out = []
    for i in range(n):
        if i < k:
            piece = shards[i]
        else:
            acc = np.zeros(shard_len, dtype=np.uint8)
            for j in range(k):
                c = gen[i, j]
                if c:
                    acc ^= _MUL[c][shards[j]]
            piece = acc
        out.append(CodedElement(i, piece.tobytes(), len(data)))
    return out


def decode(elements, cfg: QuorumConfig) -> bytes:
    return decode_nk(elements, cfg.n, cfg.k)


def decode_nk(elements, n: int, k: int) -> bytes:
    """Reconstruct the object from any k distinct coded elements."""
    _check_params(n, k)
    chosen: dict[int, CodedElement] = {}
    for el in elements:
        if el.index in chosen:
            continue
        if not 0 <= el.index < n:
            raise InconsistentElements(f"element index {el.index} out of range")
        chosen[el.index] = el
        if len(chosen) == k:
            break
    if len(chosen) < k:
        raise InsufficientElements(
            f"need {k} distinct elements, got {len(chosen)}")
    els = [chosen[i] for i in sorted(chosen)]
    object_len = els[0].object_len
    shard_len = element_size(object_len, k)
    for el in els:
        if el.object_len != object_len:
            raise InconsistentElements("elements disagree on object length")
        if len(el.data) != shard_len:
            raise InconsistentElements("elements disagree on shard length")
    indices = [el.index for el in els]
    if indices == list(range(k)):
        # Systematic fast path: the data shards themselves.
        return b"".join(el.data for el in els)[:object_len]
    gen = _generator_matrix(n, k)
    sub_inv = _gf_mat_inv(gen[indices])
    shards = np.stack([np.frombuffer(el.data, dtype=np.uint8) for el in els])
    data = np.zeros((k, shard_len), dtype=np.uint8)
    for i in range(k):
        acc = np.zeros(shard_len, dtype=np.uint8)
        for j in range(k):
            c = sub_inv[i, j]
            if c:
                acc ^= _MUL[c][shards[j]]
        data[i] = acc
    return data.reshape(-1).tobytes()[:object_len]
