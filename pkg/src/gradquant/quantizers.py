"""Scalar and vector gradient quantizers.

The vector quantizers normalize by the max-magnitude scale factor kappa so
that indices live in a small signed range, and address their dither through
:class:`~gradquant.dither.DitherCoordinates` so a receiver holding the same
coordinates reproduces the reconstruction bit-exactly.  Rounding is always
round-half-away-from-zero, which keeps the index range symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .dither import DitherCoordinates, dither_block
from .errors import ProtocolError

__all__ = [
    "GradientVector",
    "UniformQuantizerCfg",
    "QuantizedMessage",
    "PartitionBound",
    "OneBitState",
    "OneBitMessage",
    "ExcessVarianceBounds",
    "uniform_quantize",
    "dithered_encode",
    "dithered_decode",
    "partition_encode",
    "half_dithered_quantize",
    "stochastic_quantize",
    "stochastic_variance",
    "onebit_encode",
    "onebit_decode",
    "excess_variance_bound",
]


def _round_half_away(t):
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(t) + 0.5), t)


def _as_values(g) -> np.ndarray:
    if isinstance(g, GradientVector):
        return g.values
    v = np.asarray(g, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


@dataclass(frozen=True)
class GradientVector:
    """A flat float64 gradient with the tensor shape it was flattened from."""

    values: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("gradient must be a nonempty 1-D vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("gradient contains non-finite entries")
        if math.prod(self.shape) != v.size:
            raise ValueError("shape metadata does not match vector length")

    @classmethod
    def from_array(cls, arr) -> "GradientVector":
        a = np.asarray(arr, dtype=np.float64)
        return cls(a.reshape(-1), a.shape if a.ndim else (1,))

    @property
    def n(self) -> int:
        return self.values.size

    def to_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)


@dataclass(frozen=True)
class UniformQuantizerCfg:
    """Uniform mid-tread quantizer: step delta, signed index range [-levels_m, levels_m].

    When the input is kappa-normalized (so |x| <= 1), delta should equal
    1/levels_m; :meth:`from_levels` constructs that pairing.
    """

    delta: float
    levels_m: int

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError("delta must be positive and finite")
        if int(self.levels_m) != self.levels_m or self.levels_m < 1:
            raise ValueError("levels_m must be an integer >= 1")

    @classmethod
    def from_levels(cls, m: int) -> "UniformQuantizerCfg":
        return cls(delta=1.0 / m, levels_m=m)

    @property
    def n_levels(self) -> int:
        """Number of representable levels, 2M + 1."""
        return 2 * self.levels_m + 1

    @property
    def index_bits(self) -> int:
        """Bits per index under plain fixed-width packing."""
        return max(1, math.ceil(math.log2(self.n_levels)))


class PartitionBound(NamedTuple):
    start: int
    end: int
    kappa: float


@dataclass(frozen=True)
class QuantizedMessage:
    """One worker-to-server transmission: scale factor(s), indices, dither address."""

    cfg: UniformQuantizerCfg
    dither: DitherCoordinates
    indices: np.ndarray
    partitions: tuple[PartitionBound, ...]

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("indices must be a nonempty 1-D vector")
        m = self.cfg.levels_m
        if np.any(np.abs(idx) > m):
            raise ValueError(f"indices out of range [-{m}, {m}]")
        if not self.partitions or self.partitions[0].start != 0 or self.partitions[-1].end != idx.size:
            raise ValueError("partitions must tile [0, n)")
        for (a, b, kap), nxt in zip(self.partitions, self.partitions[1:] + (None,)):
            if b <= a or (nxt is not None and nxt.start != b):
                raise ValueError("partitions must be contiguous and nonempty")
            if kap < 0 or not math.isfinite(kap):
                raise ValueError("kappa must be finite and nonnegative")

    @property
    def n(self) -> int:
        return self.indices.size

    @property
    def kappa(self) -> float:
        """Scale factor; only meaningful for single-partition messages."""
        if len(self.partitions) != 1:
            raise ValueError("message has multiple partitions; use .partitions")
        return self.partitions[0].kappa


def uniform_quantize(v, delta: float):
    """Map v to the nearest multiple of delta (ties away from zero)."""
    if not (delta > 0 and math.isfinite(delta)):
        raise ValueError("delta must be positive and finite")
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    out = delta * _round_half_away(arr / delta)
    return float(out) if np.isscalar(v) or arr.ndim == 0 else out


def _f32_at_least(x: float) -> float:
    """Round x to float32, upward if float32 rounding went below x.

    Scale factors travel as 32-bit floats; rounding kappa up keeps |g|/kappa
    <= 1 so the index range and the error bound survive serialization.
    """
    k = np.float32(x)
    if float(k) < x:
        k = np.nextafter(k, np.float32(np.inf))
    return float(k)


def _check_normalized(cfg: UniformQuantizerCfg):
    if not math.isclose(cfg.delta * cfg.levels_m, 1.0, rel_tol=1e-9):
        raise ValueError("normalized encoding requires delta == 1/levels_m")


def partition_encode(
    g,
    k: int,
    cfg: UniformQuantizerCfg,
    dither: DitherCoordinates,
    u: Sequence[float] | np.ndarray | None = None,
) -> QuantizedMessage:
    """Split g into k near-equal spans, each dither-quantized with its own scale.

    Spans are contiguous; when k does not divide n the first n mod k spans get
    one extra element.  ``u`` overrides the generated dither stream (mainly for
    tests and worked examples) and must have length n.
    """
    values = _as_values(g)
    n = values.size
    if n == 0 or not np.all(np.isfinite(values)):
        raise ValueError("gradient must be nonempty and finite")
    if not (1 <= k <= n):
        raise ValueError(f"partition count must satisfy 1 <= k <= {n}")
    _check_normalized(cfg)

    if u is None:
        u = dither_block(dither, n, cfg.delta)
    else:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (n,):
            raise ValueError("dither stream length does not match gradient length")

    m = cfg.levels_m
    indices = np.zeros(n, dtype=np.int64)
    bounds = []
    sizes = [n // k + (1 if j < n % k else 0) for j in range(k)]  # remainder goes to the first spans
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    for a, b in zip(offsets[:-1], offsets[1:]):
        kappa = _f32_at_least(float(np.max(np.abs(values[a:b]))))
        bounds.append(PartitionBound(int(a), int(b), kappa))
        if kappa == 0.0:
            continue
        t = values[a:b] / kappa + u[a:b]
        q = _round_half_away(t / cfg.delta)
        # |t| <= 1 + delta/2, so q can only exceed M at the exact tie; clamp it back.
        np.clip(q, -m, m, out=q)
        indices[a:b] = q.astype(np.int64)
    return QuantizedMessage(cfg=cfg, dither=dither, indices=indices, partitions=tuple(bounds))


def dithered_encode(
    g,
    cfg: UniformQuantizerCfg,
    dither: DitherCoordinates,
    u: Sequence[float] | np.ndarray | None = None,
) -> QuantizedMessage:
    """Quantize g with subtractive dither and a single max-magnitude scale."""
    values = _as_values(g)
    return partition_encode(values, 1, cfg, dither, u=u)


def dithered_decode(
    msg: QuantizedMessage,
    dither: DitherCoordinates | None = None,
    *,
    cfg: UniformQuantizerCfg | None = None,
    u: Sequence[float] | np.ndarray | None = None,
) -> np.ndarray:
    """Reconstruct kappa * (delta*q - u) from a message.

    ``dither``/``cfg`` are the receiver's own mirrors; if supplied they must
    match what the message carries, otherwise the two sides would silently
    reconstruct different values.
    """
    if dither is not None and dither != msg.dither:
        raise ProtocolError(f"dither coordinates mismatch: {dither} != {msg.dither}")
    if cfg is not None and cfg != msg.cfg:
        raise ProtocolError(f"quantizer config mismatch: {cfg} != {msg.cfg}")
    n = msg.n
    if u is None:
        u = dither_block(msg.dither, n, msg.cfg.delta)
    else:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (n,):
            raise ValueError("dither stream length does not match message length")
    out = np.zeros(n, dtype=np.float64)
    for a, b, kappa in msg.partitions:
        if kappa == 0.0:
            continue
        out[a:b] = kappa * (msg.cfg.delta * msg.indices[a:b] - u[a:b])
    return out


def half_dithered_quantize(x, cfg: UniformQuantizerCfg, u):
    """Quantize x + u without subtracting the dither afterwards."""
    return uniform_quantize(np.asarray(x, dtype=np.float64) + np.asarray(u, dtype=np.float64), cfg.delta)


def stochastic_quantize(x, m: int, rand):
    """Randomized rounding onto the grid {0, 1/M, ..., 1} * sign(x).

    With |x| in [l/M, (l+1)/M], returns sign(x) * l/M with probability
    l + 1 - M|x| and sign(x) * (l+1)/M otherwise.  ``rand`` supplies the unit
    uniforms, one per element, so callers control the randomness source.
    """
    if int(m) != m or m < 1:
        raise ValueError("m must be an integer >= 1")
    arr = np.asarray(x, dtype=np.float64)
    r = np.asarray(rand, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0):
        raise ValueError("stochastic quantizer expects |x| <= 1")
    if r.shape != arr.shape:
        raise ValueError("rand must match the shape of x")
    mag = np.abs(arr)
    low = np.minimum(np.floor(mag * m), m - 1)
    p_low = low + 1.0 - m * mag
    level = np.where(r < p_low, low, low + 1.0) / m
    out = np.sign(arr) * level
    return float(out) if arr.ndim == 0 else out


def stochastic_variance(x, m: int):
    """Conditional variance of the stochastic quantizer at input x."""
    if int(m) != m or m < 1:
        raise ValueError("m must be an integer >= 1")
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0):
        raise ValueError("stochastic quantizer expects |x| <= 1")
    mag = np.abs(arr)
    low = np.minimum(np.floor(mag * m), m - 1) / m
    out = (mag - low) * (low + 1.0 / m - mag)
    return float(out) if arr.ndim == 0 else out


@dataclass(frozen=True)
class OneBitState:
    """Per-worker error-feedback residual carried across rounds."""

    residual: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(self.residual, dtype=np.float64)
        object.__setattr__(self, "residual", r)
        if r.ndim != 1 or not np.all(np.isfinite(r)):
            raise ValueError("residual must be a finite 1-D vector")

    @classmethod
    def zeros(cls, n: int) -> "OneBitState":
        return cls(np.zeros(n, dtype=np.float64))


class OneBitMessage(NamedTuple):
    bits: np.ndarray  # True where the corrected gradient is positive
    mu_pos: float
    mu_neg: float


def onebit_encode(g, state: OneBitState) -> tuple[OneBitMessage, OneBitState]:
    """Sign-quantize g + residual into two conditional means, with error feedback.

    Returns the message and the updated state; the caller owns the state and
    threads it through successive rounds.
    """
    values = _as_values(g)
    if values.shape != state.residual.shape:
        raise ValueError("state length does not match gradient length")
    v = values + state.residual
    bits = v > 0
    mu_pos = float(v[bits].mean()) if bits.any() else 0.0
    neg = v < 0
    mu_neg = float(v[neg].mean()) if neg.any() else 0.0
    msg = OneBitMessage(bits=bits, mu_pos=mu_pos, mu_neg=mu_neg)
    recon = onebit_decode(msg)
    return msg, OneBitState(v - recon)


def onebit_decode(msg: OneBitMessage) -> np.ndarray:
    return np.where(msg.bits, msg.mu_pos, msg.mu_neg)


class ExcessVarianceBounds(NamedTuple):
    """Bounds on E||g_tilde - g||^2 added by dithered quantization."""

    second_moment: float  # n*delta^2/12 * E||g||^2, no distributional assumption
    gaussian: float       # delta^2/3 * ln(sqrt(2) n) * Var + n*delta^2/6 * ||mu||_inf^2
    partitioned: float    # delta^2/6 * (2 ln(sqrt(2) n / K) * Var + n ||mu||_inf^2)


def excess_variance_bound(
    n: int,
    delta: float,
    var_sg: float,
    e_g_sq: float,
    grad_inf_norm: float,
    k: int = 1,
) -> ExcessVarianceBounds:
    """Evaluate the three excess-variance bounds for an n-vector at step delta.

    ``var_sg`` is E||g - E g||^2, ``e_g_sq`` is E||g||^2, ``grad_inf_norm`` is
    the sup-norm of the mean gradient, and ``k`` the partition count used by
    the partitioned variant.
    """
    if n < 1 or not (1 <= k <= n):
        raise ValueError("need n >= 1 and 1 <= k <= n")
    if delta < 0 or var_sg < 0 or e_g_sq < 0 or grad_inf_norm < 0:
        raise ValueError("arguments must be nonnegative")
    d2 = delta * delta
    second = n * d2 / 12.0 * e_g_sq
    gaussian = d2 / 3.0 * math.log(math.sqrt(2.0) * n) * var_sg + n * d2 / 6.0 * grad_inf_norm**2
    partitioned = d2 / 6.0 * (2.0 * math.log(math.sqrt(2.0) * n / k) * var_sg + n * grad_inf_norm**2)
    return ExcessVarianceBounds(second_moment=second, gaussian=gaussian, partitioned=partitioned)
