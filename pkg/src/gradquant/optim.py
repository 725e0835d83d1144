"""Optimizer steps and convergence-horizon calculators.

Steps are pure functions from (state, gradient) to a new state, so replicated
workers applying the same aggregated gradient stay bit-identical.  The
learning rate decays by a fixed factor at each epoch boundary, where an epoch
is ``epoch_rounds`` optimizer steps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import TrainingDiverged

__all__ = [
    "OptState",
    "sgd_state",
    "adam_state",
    "sgd_step",
    "adam_step",
    "current_lr",
    "HorizonInputs",
    "quantized_sigma_sq",
    "training_horizon",
    "excess_time_ratio",
    "bounded_sg_constants",
]


@dataclass(frozen=True)
class OptState:
    """Parameters plus optimizer bookkeeping; ``kind`` is 'sgd' or 'adam'."""

    w: np.ndarray
    kind: str
    lr: float
    decay: float = 0.98
    epoch_rounds: int = 1
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0 or not (0 < self.decay <= 1) or self.epoch_rounds < 1:
            raise ValueError("need lr > 0, decay in (0, 1], epoch_rounds >= 1")


def sgd_state(w, lr: float = 0.01, decay: float = 0.98, epoch_rounds: int = 1) -> OptState:
    return OptState(w=np.asarray(w, dtype=np.float64).copy(), kind="sgd", lr=lr, decay=decay, epoch_rounds=epoch_rounds)


def adam_state(w, lr: float = 0.001, decay: float = 0.98, epoch_rounds: int = 1) -> OptState:
    w = np.asarray(w, dtype=np.float64).copy()
    return OptState(
        w=w, kind="adam", lr=lr, decay=decay, epoch_rounds=epoch_rounds,
        m=np.zeros_like(w), v=np.zeros_like(w),
    )


def current_lr(state: OptState) -> float:
    """Learning rate in effect for the upcoming step."""
    return state.lr * state.decay ** (state.t // state.epoch_rounds)


def _check_grad(state: OptState, g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.w.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(g)):
        raise TrainingDiverged(f"non-finite gradient at step {state.t}")
    return g


def sgd_step(state: OptState, g) -> OptState:
    g = _check_grad(state, g)
    eta = current_lr(state)
    return replace(state, w=state.w - eta * g, t=state.t + 1)


def adam_step(state: OptState, g) -> OptState:
    if state.kind != "adam":
        raise ValueError("adam_step requires an adam state")
    g = _check_grad(state, g)
    eta = current_lr(state)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    w = state.w - eta * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, w=w, m=m, v=v, t=t)


def step(state: OptState, g) -> OptState:
    return adam_step(state, g) if state.kind == "adam" else sgd_step(state, g)


@dataclass(frozen=True)
class HorizonInputs:
    """Inputs to the horizon calculator for quantized distributed SGD.

    ``sigma_sq`` is the per-worker effective gradient variance after
    quantization; :func:`quantized_sigma_sq` builds it from the oracle
    variance V and the squared gradient-norm bound B.
    """

    r: float         # radius bound on ||w - w0||
    epsilon: float   # target suboptimality
    sigma_sq: float
    workers: int
    ell: float       # smoothness constant

    def __post_init__(self):
        if min(self.r, self.epsilon, self.sigma_sq, self.ell) <= 0 or self.workers < 1:
            raise ValueError("all horizon inputs must be positive")


def quantized_sigma_sq(v: float, b: float, n: int, delta: float) -> float:
    """sigma^2 = V * (1 + n delta^2 / 12) + n B delta^2 / 12."""
    if v < 0 or b < 0 or n < 1 or delta < 0:
        raise ValueError("invalid sigma^2 inputs")
    excess = n * delta * delta / 12.0
    return v * (1.0 + excess) + b * excess


def training_horizon(h: HorizonInputs) -> tuple[int, float]:
    """Round budget and constant step size that reach epsilon suboptimality.

    Returns T = ceil(2.5 R^2 sigma^2 / (P epsilon^2)) and
    eta = epsilon / (epsilon * ell + 1.1 sigma^2 / P).  Warns when epsilon is
    large relative to sigma^2 / (P * ell), where the bound behind these
    constants loses its guarantee.
    """
    t = math.ceil(2.5 * h.r * h.r * h.sigma_sq / (h.workers * h.epsilon * h.epsilon))
    eta = h.epsilon / (h.epsilon * h.ell + 1.1 * h.sigma_sq / h.workers)
    if h.epsilon >= 0.2 * h.sigma_sq / (h.workers * h.ell):
        warnings.warn(
            "epsilon >= 0.2 sigma^2 / (P ell): outside the regime the horizon "
            "guarantee was derived for",
            stacklevel=2,
        )
    return t, eta


def excess_time_ratio(n: int, delta: float, b_over_v: float) -> float:
    """Relative extra rounds caused by quantization: n delta^2/12 * (1 + B/V)."""
    if n < 1 or delta < 0 or b_over_v < 0:
        raise ValueError("invalid arguments")
    return n * delta * delta / 12.0 * (1.0 + b_over_v)


def bounded_sg_constants(a: float, b: float, n: int, delta: float) -> tuple[float, float]:
    """Transfer (A, B) bounds on E||g||^2 <= A*||grad||^2 + B through quantization."""
    if a < 0 or b < 0 or n < 1 or delta < 0:
        raise ValueError("invalid arguments")
    factor = 1.0 + n * delta * delta / 12.0
    return factor * a, factor * b
