"""Bit accounting and entropy coding for quantizer index streams.

Raw-bit accounting uses the fractional convention n*log2(levels) plus 32 bits
per scale factor, with an integer-packing variant alongside.  The entropy
coder is a 32-bit arithmetic coder with an adaptive frequency model: all
counts start at 1, the coded symbol's count is incremented after each step,
and counts are halved (never below 1) when the total exceeds 2^16.  Frames
are self-framing: a little-endian u32 symbol count and u8 alphabet size
precede the payload.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError

__all__ = [
    "IndexStream",
    "BitReport",
    "raw_bits",
    "packed_raw_bits",
    "empirical_entropy",
    "aac_encode",
    "aac_decode",
    "make_bit_report",
]

_FRAME_HEADER = struct.Struct("<IB")
_RESCALE_LIMIT = 1 << 16

_STATE_SIZE = 32
_STATE_MASK = (1 << _STATE_SIZE) - 1
_HALF = 1 << (_STATE_SIZE - 1)
_QUARTER = 1 << (_STATE_SIZE - 2)


@dataclass(frozen=True)
class IndexStream:
    """A run of integer symbols together with their declared alphabet."""

    symbols: np.ndarray
    alphabet_min: int
    alphabet_max: int

    def __post_init__(self):
        s = np.ascontiguousarray(self.symbols, dtype=np.int64)
        object.__setattr__(self, "symbols", s)
        if s.ndim != 1:
            raise ValueError("symbols must be 1-D")
        if self.alphabet_max < self.alphabet_min:
            raise ValueError("empty alphabet")
        if s.size and (s.min() < self.alphabet_min or s.max() > self.alphabet_max):
            raise ValueError("symbols outside the declared alphabet")

    @property
    def n(self) -> int:
        return self.symbols.size

    @property
    def alphabet_size(self) -> int:
        return self.alphabet_max - self.alphabet_min + 1


@dataclass(frozen=True)
class BitReport:
    """Per-message bit accounting: raw, entropy-ideal, and actually coded."""

    raw_bits: float
    packed_bits: int
    entropy_bits: float
    coded_bits: int
    scale_bits: int


def raw_bits(n: int, levels: int, num_partitions: int) -> float:
    """n*log2(levels) index bits plus 32 bits per partition scale factor."""
    if n < 1 or levels < 2 or num_partitions < 0:
        raise ValueError("need n >= 1, levels >= 2, num_partitions >= 0")
    return n * math.log2(levels) + 32.0 * num_partitions

def packed_raw_bits(n: int, levels: int, num_partitions: int) -> int:
    """Fixed-width packing: n*ceil(log2(levels)) index bits plus scale bits."""
    if n < 1 or levels < 2 or num_partitions < 0:
        raise ValueError("need n >= 1, levels >= 2, num_partitions >= 0")
    return n * math.ceil(math.log2(levels)) + 32 * num_partitions


def empirical_entropy(stream: IndexStream) -> float:
    """Total bits n*H of the stream's empirical symbol distribution."""
    if stream.n == 0:
        raise ValueError("entropy of an empty stream is undefined")
    _, counts = np.unique(stream.symbols, return_counts=True)
    p = counts / stream.n
    return float(stream.n * -(p * np.log2(p)).sum())


class _BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nbits = 0

    def write(self, bit: int):
        self._acc = (self._acc << 1) | bit
        self._nbits += 1
        if self._nbits == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._nbits = 0

    def getvalue(self) -> bytes:
        if self._nbits:
            return bytes(self._bytes) + bytes([self._acc << (8 - self._nbits)])
        return bytes(self._bytes)


class _BitReader:
    """Reads MSB-first bits; zero-pads past the end but only up to a budget.

    A well-formed payload never needs more than STATE_SIZE bits beyond its
    own length, so a larger overdraw means the frame was truncated.
    """

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.overdraw = 0

    def read(self) -> int:
        byte_i, bit_i = divmod(self._pos, 8)
        self._pos += 1
        if byte_i >= len(self._data):
            self.overdraw += 1
            if self.overdraw > _STATE_SIZE:
                raise DecodeError("payload truncated: coder ran past the end of the frame")
            return 0
        return (self._data[byte_i] >> (7 - bit_i)) & 1


class _AdaptiveModel:
    """Frequency table shared by encoder and decoder; updated in lockstep."""

    def __init__(self, alphabet_size: int):
        self.counts = [1] * alphabet_size
        self.total = alphabet_size

    def range_of(self, symbol: int) -> tuple[int, int, int]:
        lo = sum(self.counts[:symbol])
        return lo, lo + self.counts[symbol], self.total

    def locate(self, value: int) -> tuple[int, int, int]:
        lo = 0
        for sym, c in enumerate(self.counts):
            if value < lo + c:
                return sym, lo, lo + c
            lo += c
        raise DecodeError("arithmetic decoder produced an out-of-range value")

    def update(self, symbol: int):
        self.counts[symbol] += 1
        self.total += 1
        if self.total > _RESCALE_LIMIT:
            self.counts = [(c + 1) // 2 for c in self.counts]
            self.total = sum(self.counts)


class _Encoder:
    def __init__(self, out: _BitWriter):
        self.low = 0
        self.high = _STATE_MASK
        self.underflow = 0
        self.out = out

    def encode(self, cum_lo: int, cum_hi: int, total: int):
        span = self.high - self.low + 1
        self.high = self.low + cum_hi * span // total - 1
        self.low = self.low + cum_lo * span // total
        while ((self.low ^ self.high) & _HALF) == 0:
            bit = self.low >> (_STATE_SIZE - 1)
            self.out.write(bit)
            for _ in range(self.underflow):
                self.out.write(bit ^ 1)
            self.underflow = 0
            self.low = (self.low << 1) & _STATE_MASK
            self.high = ((self.high << 1) & _STATE_MASK) | 1
        while (self.low & ~self.high & _QUARTER) != 0:
            self.underflow += 1
            self.low = (self.low << 1) ^ _HALF
            self.high = ((self.high ^ _HALF) << 1) | _HALF | 1

    def finish(self):
        # One disambiguation bit plus every pending underflow bit; the
        # decoder's zero padding then lands inside the final interval.
        self.underflow += 1
        bit = 0 if self.low < _QUARTER else 1
        self.out.write(bit)
        for _ in range(self.underflow):
            self.out.write(bit ^ 1)


class _Decoder:
    def __init__(self, inp: _BitReader):
        self.low = 0
        self.high = _STATE_MASK
        self.inp = inp
        self.code = 0
        for _ in range(_STATE_SIZE):
            self.code = (self.code << 1) | inp.read()

    def decode(self, model: _AdaptiveModel) -> int:
        span = self.high - self.low + 1
        value = ((self.code - self.low + 1) * model.total - 1) // span
        symbol, cum_lo, cum_hi = model.locate(value)
        self.high = self.low + cum_hi * span // model.total - 1
        self.low = self.low + cum_lo * span // model.total
        while ((self.low ^ self.high) & _HALF) == 0:
            self.code = ((self.code << 1) & _STATE_MASK) | self.inp.read()
            self.low = (self.low << 1) & _STATE_MASK
            self.high = ((self.high << 1) & _STATE_MASK) | 1
        while (self.low & ~self.high & _QUARTER) != 0:
            self.code = (self.code & _HALF) | ((self.code << 1) & (_STATE_MASK >> 1)) | self.inp.read()
            self.low = (self.low << 1) ^ _HALF
            self.high = ((self.high ^ _HALF) << 1) | _HALF | 1
        return symbol


def aac_encode(stream: IndexStream) -> bytes:
    """Encode a stream into a framed byte string (lossless)."""
    size = stream.alphabet_size
    if size > 255:
        raise ValueError("alphabet size exceeds the u8 frame field")
    if stream.n >= 1 << 32:
        raise ValueError("stream too long for the u32 frame field")
    writer = _BitWriter()
    enc = _Encoder(writer)
    model = _AdaptiveModel(size)
    for sym in (stream.symbols - stream.alphabet_min).tolist():
        cum_lo, cum_hi, total = model.range_of(sym)
        enc.encode(cum_lo, cum_hi, total)
        model.update(sym)
    enc.finish()
    return _FRAME_HEADER.pack(stream.n, size) + writer.getvalue()


def aac_decode(data: bytes, alphabet_min: int, alphabet_max: int) -> IndexStream:
    """Decode a framed byte string produced by :func:`aac_encode`."""
    if len(data) < _FRAME_HEADER.size:
        raise DecodeError("frame shorter than its header")
    count, size = _FRAME_HEADER.unpack_from(data)
    if size != alphabet_max - alphabet_min + 1:
        raise DecodeError(f"frame alphabet size {size} does not match [{alphabet_min}, {alphabet_max}]")
    reader = _BitReader(data[_FRAME_HEADER.size:])
    dec = _Decoder(reader)
    model = _AdaptiveModel(size)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        sym = dec.decode(model)
        model.update(sym)
        out[i] = sym
    return IndexStream(symbols=out + alphabet_min, alphabet_min=alphabet_min, alphabet_max=alphabet_max)


def coded_payload_bits(frame: bytes) -> int:
    """Bits in the arithmetic-coded payload, excluding the fixed frame header."""
    return 8 * (len(frame) - _FRAME_HEADER.size)


def make_bit_report(stream: IndexStream, levels: int, num_partitions: int) -> BitReport:
    """Account one message's bits every way at once."""
    frame = aac_encode(stream)
    return BitReport(
        raw_bits=raw_bits(stream.n, levels, num_partitions),
        packed_bits=packed_raw_bits(stream.n, levels, num_partitions),
        entropy_bits=empirical_entropy(stream),
        coded_bits=coded_payload_bits(frame),
        scale_bits=32 * num_partitions,
    )
