import math

import numpy as np
import pytest
from scipy import stats as sps

from gradquant.stats import (
    ALPHA,
    KS_CRITICAL,
    independence_check,
    ks_uniform,
    moment_estimate,
    summarize,
    tv_distance,
    tv_distance_to_probs,
)


def test_threshold_is_the_pinned_critical_value():
    assert ALPHA == 0.01
    assert KS_CRITICAL == 1.628
    res = ks_uniform(np.linspace(0.001, 0.999, 10_000), 0.0, 1.0)
    assert res.threshold == pytest.approx(1.628 / math.sqrt(10_000))


def test_uniform_passes_gaussian_fails(rng):
    u = rng.uniform(-1, 1, 100_000)
    assert ks_uniform(u, -1, 1).passed
    g = np.clip(rng.normal(size=100_000), -3, 3)
    assert not ks_uniform(g, -3, 3).passed


def test_ks_statistic_matches_scipy(rng):
    """Cross-check the hand-rolled D statistic against scipy's on shared data."""
    x = rng.uniform(0.0, 1.0, 5000)
    ours = ks_uniform(x, 0.0, 1.0).statistic
    theirs = sps.kstest(x, "uniform").statistic
    assert ours == pytest.approx(float(theirs), rel=1e-9)


def test_ks_verdict_agrees_with_scipy_pvalue(rng):
    """Our fixed-threshold verdict should track scipy's p-value at alpha=0.01."""
    agree = 0
    for i in range(30):
        r = np.random.default_rng(i)
        # Mix of genuine uniforms and slightly skewed samples near the boundary.
        x = r.uniform(0, 1, 2000) ** (1.0 + 0.02 * (i % 3))
        x = np.clip(x, 0.0, 1.0)
        ours = ks_uniform(x, 0, 1).passed
        theirs = sps.kstest(x, "uniform").pvalue > ALPHA
        agree += ours == theirs
    assert agree >= 28  # the asymptotic threshold may disagree right at the edge


def test_out_of_range_sample_fails_immediately(rng):
    x = rng.uniform(-1, 1, 1000)
    x[17] = 1.5
    res = ks_uniform(x, -1, 1)
    assert not res.passed
    assert res.statistic == 1.0


def test_ks_input_validation():
    with pytest.raises(ValueError):
        ks_uniform(np.zeros(50), 0, 1)
    with pytest.raises(ValueError):
        ks_uniform(np.zeros(200), 1, 0)


def test_independence_check(rng):
    a = rng.normal(size=10_000)
    b = rng.normal(size=10_000)
    assert abs(independence_check(a, b).r) < 0.05
    dependent = independence_check(a, 2 * a)
    assert dependent.r == pytest.approx(1.0)
    degenerate = independence_check(a, np.zeros(10_000))
    assert degenerate.degenerate
    assert degenerate.r == 0.0
    with pytest.raises(ValueError):
        independence_check(a, b[:-1])


def test_moment_estimate_uniform(rng):
    u = rng.uniform(-0.5, 0.5, 400_000)
    m2 = moment_estimate(u, 2)
    assert abs(m2.value - 1 / 12) < 4 * m2.standard_error
    m4 = moment_estimate(u, 4)
    assert abs(m4.value - 1 / 80) < 4 * m4.standard_error
    with pytest.raises(ValueError):
        moment_estimate(u, 5)


def test_summarize_bundles_verdicts(rng):
    u = rng.uniform(0, 1, 5000)
    s = summarize(u, uniform_bounds=(0, 1), paired=rng.normal(size=5000))
    assert s.count == 5000
    assert s.ks is not None and s.ks.passed
    assert s.correlation is not None and abs(s.correlation.r) < 0.05
    assert s.variance == pytest.approx(1 / 12, rel=0.1)


def test_tv_distance_hand_values():
    assert tv_distance({0: 5, 1: 5}, {0: 5, 1: 5}) == 0.0
    assert tv_distance({0: 10}, {1: 10}) == 1.0
    assert tv_distance({0: 3, 1: 1}, {0: 1, 1: 3}) == pytest.approx(0.5)
    assert tv_distance_to_probs({0: 3, 1: 1}, {0: 0.5, 1: 0.5}) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        tv_distance({}, {0: 1})
