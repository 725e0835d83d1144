"""Statistical checks used to validate the quantizers empirically.

Fixed significance level alpha = 0.01 throughout.  The KS test uses the
asymptotic critical value c(0.01)/sqrt(N) with c(0.01) = 1.628, which is what
the pass/fail verdicts below are calibrated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ALPHA = 0.01
KS_CRITICAL = 1.628  # c(0.01) in the D < c/sqrt(N) rule


class KsResult(NamedTuple):
    statistic: float
    threshold: float
    passed: bool


class CorrelationResult(NamedTuple):
    r: float
    degenerate: bool


class MomentEstimate(NamedTuple):
    value: float
    standard_error: float


def ks_uniform(samples, lo: float, hi: float) -> KsResult:
    """One-sample KS test of samples against Uniform(lo, hi)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("need at least 100 samples in a 1-D array")
    if not hi > lo:
        raise ValueError("need hi > lo")
    if x.min() < lo or x.max() > hi:
        return KsResult(statistic=1.0, threshold=KS_CRITICAL / math.sqrt(x.size), passed=False)
    n = x.size
    cdf = (np.sort(x) - lo) / (hi - lo)
    steps = np.arange(1, n + 1) / n
    d = float(np.max(np.maximum(steps - cdf, cdf - (steps - 1.0 / n))))
    threshold = KS_CRITICAL / math.sqrt(n)
    return KsResult(statistic=d, threshold=threshold, passed=d < threshold)


def independence_check(errors, inputs) -> CorrelationResult:
    """Pearson correlation between paired series; constant series report r = 0."""
    e = np.asarray(errors, dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    if e.shape != x.shape or e.ndim != 1 or e.size < 2:
        raise ValueError("need two paired 1-D series")
    se, sx = e.std(), x.std()
    if se == 0.0 or sx == 0.0:
        return CorrelationResult(r=0.0, degenerate=True)
    r = float(np.mean((e - e.mean()) * (x - x.mean())) / (se * sx))
    return CorrelationResult(r=r, degenerate=False)


def moment_estimate(samples, k: int) -> MomentEstimate:
    """k-th central moment with a delta-method standard error."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("need at least 100 samples")
    if k not in (1, 2, 3, 4):
        raise ValueError("k must be in 1..4")
    c = x - x.mean()
    mk = float(np.mean(c**k))
    var_mk = max(float(np.mean(c ** (2 * k))) - mk * mk, 0.0)
    return MomentEstimate(value=mk, standard_error=math.sqrt(var_mk / x.size))


@dataclass(frozen=True)
class SampleSummary:
    """Descriptive statistics plus optional distributional verdicts."""

    count: int
    mean: float
    variance: float
    central_moments: tuple[float, float, float]  # orders 2, 3, 4
    ks: KsResult | None = None
    correlation: CorrelationResult | None = None


def summarize(
    samples,
    *,
    uniform_bounds: tuple[float, float] | None = None,
    paired=None,
) -> SampleSummary:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("need at least 100 samples")
    c = x - x.mean()
    moments = tuple(float(np.mean(c**k)) for k in (2, 3, 4))
    ks = ks_uniform(x, *uniform_bounds) if uniform_bounds is not None else None
    corr = independence_check(x, paired) if paired is not None else None
    return SampleSummary(
        count=x.size,
        mean=float(x.mean()),
        variance=moments[0],
        central_moments=moments,
        ks=ks,
        correlation=corr,
    )


def tv_distance(counts_a: dict, counts_b: dict) -> float:
    """Total-variation distance between two empirical distributions."""
    na, nb = sum(counts_a.values()), sum(counts_b.values())
    if na == 0 or nb == 0:
        raise ValueError("empty sample")
    support = set(counts_a) | set(counts_b)
    return 0.5 * sum(abs(counts_a.get(s, 0) / na - counts_b.get(s, 0) / nb) for s in support)


def tv_distance_to_probs(counts: dict, probs: dict) -> float:
    """Total-variation distance between an empirical and an exact distribution."""
    n = sum(counts.values())
    if n == 0:
        raise ValueError("empty sample")
    support = set(counts) | set(probs)
    return 0.5 * sum(abs(counts.get(s, 0) / n - probs.get(s, 0.0)) for s in support)
