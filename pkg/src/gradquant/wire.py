"""Binary serialization of quantized-gradient messages.

Layout (all integers little-endian):

    u8  kind            1 = dithered, 2 = nested, 3 = stochastic
    u32 n               element count
    u32 K               partition count (nested messages always use 1)
    f32 kappa[K]        per-partition scale factors
    u64 seed, u64 round dither coordinates
    payload             indices packed at a fixed bit width, little-endian
                        bit order within bytes

Dithered indices are stored offset by levels_m in ceil(log2(2M+1)) bits;
nested residues offset by k//2 in ceil(log2 k) bits.  The quantizer config
itself is agreed out of band, so the unpackers take it as an argument and the
packers exist mostly for bit accounting and format-freezing tests.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .dither import DitherCoordinates
from .errors import DecodeError
from .nested import NestedConfig, NestedMessage
from .quantizers import PartitionBound, QuantizedMessage, UniformQuantizerCfg

__all__ = [
    "KIND_DITHERED",
    "KIND_NESTED",
    "KIND_STOCHASTIC",
    "pack_quantized_message",
    "unpack_quantized_message",
    "pack_nested_message",
    "unpack_nested_message",
]

KIND_DITHERED = 1
KIND_NESTED = 2
KIND_STOCHASTIC = 3  # dithered layout, but the decoder adds no dither back

_FIXED = struct.Struct("<BII")
_COORDS = struct.Struct("<QQ")


def _pack_bits_le(values: np.ndarray, width: int) -> bytes:
    bits = ((values[:, None] >> np.arange(width, dtype=np.uint64)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _unpack_bits_le(payload: bytes, n: int, width: int) -> np.ndarray:
    need = (n * width + 7) // 8
    if len(payload) != need:
        raise DecodeError(f"payload is {len(payload)} bytes, expected {need}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    tail = bits[n * width:]
    if tail.any():
        raise DecodeError("nonzero padding bits in payload")
    bits = bits[: n * width].reshape(n, width).astype(np.uint64)
    return (bits << np.arange(width, dtype=np.uint64)).sum(axis=1)


def _pack_header(kind: int, n: int, kappas, coords: DitherCoordinates) -> bytes:
    parts = [_FIXED.pack(kind, n, len(kappas))]
    parts += [struct.pack("<f", k) for k in kappas]
    parts.append(_COORDS.pack(coords.seed, coords.round))
    return b"".join(parts)


def pack_quantized_message(msg: QuantizedMessage, kind: int = KIND_DITHERED) -> bytes:
    if kind not in (KIND_DITHERED, KIND_STOCHASTIC):
        raise ValueError("kind must be KIND_DITHERED or KIND_STOCHASTIC")
    header = _pack_header(kind, msg.n, [p.kappa for p in msg.partitions], msg.dither)
    width = msg.cfg.index_bits
    offsets = (msg.indices + msg.cfg.levels_m).astype(np.uint64)
    return header + _pack_bits_le(offsets, width)


def pack_nested_message(msg: NestedMessage) -> bytes:
    header = _pack_header(KIND_NESTED, msg.n, [msg.kappa], msg.dither)
    width = msg.cfg.index_bits
    offsets = (msg.rel_indices + msg.cfg.nesting_k // 2).astype(np.uint64)
    return header + _pack_bits_le(offsets, width)


def _parse_header(data: bytes, expect_kind: int):
    if len(data) < _FIXED.size:
        raise DecodeError("message shorter than its fixed header")
    kind, n, k = _FIXED.unpack_from(data)
    if kind != expect_kind:
        raise DecodeError(f"unexpected message kind {kind}")
    if n == 0 or k == 0:
        raise DecodeError("empty message")
    pos = _FIXED.size
    end_scales = pos + 4 * k + _COORDS.size
    if len(data) < end_scales:
        raise DecodeError("message truncated inside the header")
    kappas = [struct.unpack_from("<f", data, pos + 4 * j)[0] for j in range(k)]
    seed, rnd = _COORDS.unpack_from(data, pos + 4 * k)
    return n, kappas, DitherCoordinates(seed=seed, round=rnd), data[end_scales:]


def unpack_quantized_message(data: bytes, cfg: UniformQuantizerCfg, kind: int = KIND_DITHERED) -> QuantizedMessage:
    n, kappas, coords, payload = _parse_header(data, kind)
    offsets = _unpack_bits_le(payload, n, cfg.index_bits)
    if offsets.max(initial=0) > 2 * cfg.levels_m:
        raise DecodeError("index offset exceeds the level range")
    indices = offsets.astype(np.int64) - cfg.levels_m
    k = len(kappas)
    if k > n:
        raise DecodeError("more partitions than elements")
    sizes = [n // k + (1 if j < n % k else 0) for j in range(k)]
    bounds, a = [], 0
    for size, kap in zip(sizes, kappas):
        if kap < 0 or not math.isfinite(kap):
            raise DecodeError("invalid scale factor")
        bounds.append(PartitionBound(a, a + size, float(kap)))
        a += size
    return QuantizedMessage(cfg=cfg, dither=coords, indices=indices, partitions=tuple(bounds))


def unpack_nested_message(data: bytes, cfg: NestedConfig) -> NestedMessage:
    n, kappas, coords, payload = _parse_header(data, KIND_NESTED)
    if len(kappas) != 1:
        raise DecodeError("nested messages carry exactly one scale factor")
    offsets = _unpack_bits_le(payload, n, cfg.index_bits)
    if offsets.max(initial=0) >= cfg.nesting_k:
        raise DecodeError("residue offset exceeds the nesting ratio")
    rel = offsets.astype(np.int64) - cfg.nesting_k // 2
    return NestedMessage(cfg=cfg, dither=coords, kappa=float(kappas[0]), rel_indices=rel)
