"""Deterministic, counter-addressed dither generation.

Worker and server never exchange dither values.  Both sides regenerate the
same stream from shared (seed, round) coordinates plus the element index, so
a transmitted stream of quantizer indices is enough for the receiver to
reconstruct the dithered values bit-exactly.  Each address is hashed
independently (no sequential state), which makes the generator random-access
and safe to evaluate in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ProtocolError

_MASK64 = (1 << 64) - 1

# Round increment and per-index increment for the address hash.  The first is
# the SplitMix64 golden-ratio gamma, the second the first finalizer multiplier;
# both are odd, so neither collapses the address space.
ROUND_GAMMA = 0x9E3779B97F4A7C15
INDEX_GAMMA = 0xBF58476D1CE4E5B9

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit scrambler (xor-shift/multiply chain)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _M1) & _MASK64
    z = ((z ^ (z >> 27)) * _M2) & _MASK64
    return z ^ (z >> 31)


def _mix64_u64(z: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class DitherCoordinates:
    """Address of one worker's dither stream: a 64-bit seed plus a round counter.

    The element index is supplied per call, so a single coordinate pair
    addresses the whole vector quantized in that round.
    """

    seed: int
    round: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64):
            raise ValueError(f"seed out of 64-bit range: {self.seed}")
        if not (0 <= self.round <= _MASK64):
            raise ValueError(f"round out of 64-bit range: {self.round}")


def worker_seed(master_seed: int, worker_id: int) -> int:
    """Per-worker seed assignment: s_p = master_seed + p (mod 2^64)."""
    if worker_id < 0:
        raise ValueError("worker_id must be nonnegative")
    return (master_seed + worker_id) & _MASK64


def advance_round(coords: DitherCoordinates) -> DitherCoordinates:
    """Move to the next round's dither stream without touching the seed."""
    if coords.round >= _MASK64:
        raise ProtocolError("round counter would overflow 64 bits")
    return replace(coords, round=coords.round + 1)


def _round_base(coords: DitherCoordinates) -> int:
    return mix64((coords.seed + ROUND_GAMMA * coords.round) & _MASK64)


def _to_unit(word):
    # Top 53 bits give a double uniform on [0, 1).
    return (word >> np.uint64(11)) * 2.0**-53 if isinstance(word, np.ndarray) else (word >> 11) * 2.0**-53


def dither_at(coords: DitherCoordinates, index: int, delta: float, *, c2: int | None = None) -> float:
    """Dither value for one element: uniform on [-delta/2, delta/2).

    ``c2`` overrides the per-index increment and exists only so the
    verification suite can demonstrate that a corrupted constant is caught.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if index < 0:
        raise ValueError("index must be nonnegative")
    gamma = INDEX_GAMMA if c2 is None else c2
    word = mix64((_round_base(coords) + gamma * index) & _MASK64)
    return (_to_unit(word) - 0.5) * delta


def dither_block(coords: DitherCoordinates, n: int, delta: float, *, c2: int | None = None) -> np.ndarray:
    """Dither values for element indices 0..n-1 as a float64 array."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    gamma = INDEX_GAMMA if c2 is None else c2
    base = np.uint64(_round_base(coords))
    idx = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        words = _mix64_u64(base + np.uint64(gamma & _MASK64) * idx)
    return (_to_unit(words) - 0.5) * delta
