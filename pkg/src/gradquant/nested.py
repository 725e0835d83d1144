"""Nested quantization against server-side side information.

Two uniform quantizers with steps delta1 and delta2 = k * delta1 are nested:
every coarse reconstruction point is also a fine one.  The sender transmits
only the fine index relative to the coarse cell (log2 k bits per element);
the receiver resolves the coarse cell from its side information y, which is
close to the true value when the workers' gradients are correlated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dither import DitherCoordinates, dither_block
from .errors import ProtocolError
from .quantizers import _as_values, _f32_at_least, _round_half_away, uniform_quantize

__all__ = [
    "NestedConfig",
    "SideInfoModel",
    "NestedMessage",
    "nested_encode",
    "nested_decode",
    "nested_encode_vector",
    "nested_decode_vector",
    "alpha_optimal",
    "failure_prob_bound",
    "nested_mse",
]


@dataclass(frozen=True)
class NestedConfig:
    """Fine step delta1, integer nesting ratio k (delta2 = k*delta1), scaling alpha."""

    delta1: float
    nesting_k: int
    alpha: float = 1.0

    def __post_init__(self):
        if not (self.delta1 > 0 and math.isfinite(self.delta1)):
            raise ValueError("delta1 must be positive and finite")
        if int(self.nesting_k) != self.nesting_k or self.nesting_k < 2:
            raise ValueError("nesting_k must be an integer >= 2")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def delta2(self) -> float:
        return self.nesting_k * self.delta1

    @property
    def index_bits(self) -> int:
        """Bits per element: the residue alphabet has exactly k symbols."""
        return max(1, math.ceil(math.log2(self.nesting_k)))


@dataclass(frozen=True)
class SideInfoModel:
    """Gaussian model of the innovation z = x - y between source and side info."""

    sigma_z: float

    def __post_init__(self):
        if self.sigma_z < 0 or not math.isfinite(self.sigma_z):
            raise ValueError("sigma_z must be finite and nonnegative")


def _centered_residue(rel, k: int):
    """Map fine-minus-coarse index differences onto the centered k-ary set."""
    half = k // 2
    return (rel + half) % k - half


def nested_encode(x, cfg: NestedConfig, u):
    """Residue index of Q1(alpha*x + u) relative to Q2 of the same point.

    Scalar in, int out; arrays map elementwise.  The residue determines
    Q1(t) - Q2(t) up to a multiple of delta2, which is all the decoder needs.
    """
    t = cfg.alpha * np.asarray(x, dtype=np.float64) + np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("input contains non-finite values")
    q1 = _round_half_away(t / cfg.delta1)
    q2 = _round_half_away(t / cfg.delta2)
    rel = _centered_residue(q1 - cfg.nesting_k * q2, cfg.nesting_k)
    return int(rel) if np.ndim(rel) == 0 else rel.astype(np.int64)


def nested_decode(s_rel, y, cfg: NestedConfig, u):
    """Reconstruct from a residue index and side information y.

    Computes r = s*delta1 - u - alpha*y and folds it into the base coarse
    cell; correct whenever alpha*x + u lands in the coarse cell the decoder
    infers from y.
    """
    s = np.asarray(s_rel, dtype=np.float64)
    r = s * cfg.delta1 - np.asarray(u, dtype=np.float64) - cfg.alpha * np.asarray(y, dtype=np.float64)
    xhat = np.asarray(y, dtype=np.float64) + cfg.alpha * (r - uniform_quantize(r, cfg.delta2))
    return float(xhat) if np.ndim(xhat) == 0 else xhat


def alpha_optimal(delta1: float, sigma_z: float) -> float:
    """MSE-minimizing scaling factor sqrt(1 - delta1^2 / (12 sigma_z^2))."""
    if delta1 <= 0:
        raise ValueError("delta1 must be positive")
    if sigma_z * sigma_z <= delta1 * delta1 / 12.0:
        raise ValueError("alpha_optimal requires sigma_z^2 > delta1^2 / 12")
    return math.sqrt(1.0 - delta1 * delta1 / (12.0 * sigma_z * sigma_z))


def failure_prob_bound(cfg: NestedConfig, model: SideInfoModel, z_bound: float | None = None) -> float:
    """Upper bound on the probability that decoding picks the wrong coarse cell.

    ``z_bound`` asserts |z| <= z_bound almost surely; when that keeps
    alpha*z + u inside half the coarse cell the failure probability is exactly
    zero.
    """
    d1, d2, a = cfg.delta1, cfg.delta2, cfg.alpha
    if z_bound is not None:
        if z_bound < 0:
            raise ValueError("z_bound must be nonnegative")
        if z_bound < (d2 - d1) / (2.0 * a):
            return 0.0
    bound = d1 * d1 / (3.0 * d2 * d2) + 4.0 * a * a * model.sigma_z**2 / (d2 * d2)
    return min(1.0, bound)


def nested_mse(cfg: NestedConfig, model: SideInfoModel) -> float:
    """Reconstruction MSE conditioned on no decoding failure."""
    a2 = cfg.alpha * cfg.alpha
    return a2 * cfg.delta1**2 / 12.0 + (1.0 - a2) ** 2 * model.sigma_z**2


@dataclass(frozen=True)
class NestedMessage:
    """Nested-quantized gradient: scale factor, residue indices, dither address."""

    cfg: NestedConfig
    dither: DitherCoordinates
    kappa: float
    rel_indices: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.rel_indices, dtype=np.int64)
        object.__setattr__(self, "rel_indices", idx)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("rel_indices must be a nonempty 1-D vector")
        k = self.cfg.nesting_k
        hi = (k - 1) // 2 if k % 2 else k // 2 - 1
        if np.any(idx < -(k // 2)) or np.any(idx > hi):
            raise ValueError("residue indices outside the centered set")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError("kappa must be positive and finite")

    @property
    def n(self) -> int:
        return self.rel_indices.size


def nested_encode_vector(
    g,
    kappa: float,
    cfg: NestedConfig,
    dither: DitherCoordinates,
    u=None,
) -> NestedMessage:
    """Encode g/kappa elementwise; the dither stream is drawn at step delta1."""
    values = _as_values(g)
    if kappa <= 0 or not math.isfinite(kappa):
        raise ValueError("kappa must be positive and finite")
    kappa = _f32_at_least(kappa)
    n = values.size
    if u is None:
        u = dither_block(dither, n, cfg.delta1)
    else:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (n,):
            raise ValueError("dither stream length does not match gradient length")
    rel = nested_encode(values / kappa, cfg, u)
    return NestedMessage(cfg=cfg, dither=dither, kappa=kappa, rel_indices=np.asarray(rel, dtype=np.int64))


def nested_decode_vector(
    msg: NestedMessage,
    side_info,
    *,
    cfg: NestedConfig | None = None,
    dither: DitherCoordinates | None = None,
    u=None,
) -> np.ndarray:
    """Reconstruct the sender's vector using the receiver's side information.

    ``side_info`` is in gradient units; both sides work on kappa-normalized
    values internally, mirroring the encoder.
    """
    if dither is not None and dither != msg.dither:
        raise ProtocolError(f"dither coordinates mismatch: {dither} != {msg.dither}")
    if cfg is not None and cfg != msg.cfg:
        raise ProtocolError(f"nested config mismatch: {cfg} != {msg.cfg}")
    y = _as_values(side_info)
    if y.shape != (msg.n,):
        raise ValueError("side information length does not match message length")
    if u is None:
        u = dither_block(msg.dither, msg.n, msg.cfg.delta1)
    else:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (msg.n,):
            raise ValueError("dither stream length does not match message length")
    xhat = nested_decode(msg.rel_indices, y / msg.kappa, msg.cfg, u)
    return msg.kappa * xhat
