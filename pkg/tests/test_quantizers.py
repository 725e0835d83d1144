import math

import numpy as np
import pytest

from gradquant.dither import DitherCoordinates, dither_block
from gradquant.errors import ProtocolError
from gradquant.quantizers import (
    GradientVector,
    OneBitState,
    QuantizedMessage,
    UniformQuantizerCfg,
    dithered_decode,
    dithered_encode,
    excess_variance_bound,
    half_dithered_quantize,
    onebit_decode,
    onebit_encode,
    partition_encode,
    stochastic_quantize,
    stochastic_variance,
    uniform_quantize,
)

COORDS = DitherCoordinates(seed=1, round=0)


# --------------------------------------------------------------- mid-tread Q


def test_uniform_quantize_scalars():
    assert uniform_quantize(0.24, 0.5) == 0.0
    assert uniform_quantize(0.26, 0.5) == 0.5
    assert uniform_quantize(-0.26, 0.5) == -0.5
    # Ties round away from zero, symmetrically.
    assert uniform_quantize(0.25, 0.5) == 0.5
    assert uniform_quantize(-0.25, 0.5) == -0.5
    assert uniform_quantize(0.75, 0.5) == 1.0


def test_uniform_quantize_array_and_validation():
    out = uniform_quantize(np.array([0.1, -0.9, 1.3]), 0.5)
    assert np.array_equal(out, [0.0, -1.0, 1.5])
    with pytest.raises(ValueError):
        uniform_quantize([np.inf], 0.5)
    with pytest.raises(ValueError):
        uniform_quantize([0.1], 0.0)


# ------------------------------------------------------------ config/message


def test_cfg_from_levels():
    cfg = UniformQuantizerCfg.from_levels(2)
    assert cfg.delta == 0.5
    assert cfg.n_levels == 5
    assert cfg.index_bits == 3
    assert UniformQuantizerCfg.from_levels(1).index_bits == 2
    with pytest.raises(ValueError):
        UniformQuantizerCfg(delta=0.0, levels_m=1)
    with pytest.raises(ValueError):
        UniformQuantizerCfg(delta=0.5, levels_m=0)


def test_gradient_vector_roundtrip():
    arr = np.arange(6.0).reshape(2, 3)
    g = GradientVector.from_array(arr)
    assert g.n == 6
    assert g.shape == (2, 3)
    assert np.array_equal(g.to_array(), arr)
    with pytest.raises(ValueError):
        GradientVector(np.array([1.0, np.nan]), (2,))
    with pytest.raises(ValueError):
        GradientVector(np.array([1.0, 2.0]), (3,))


def test_message_validation():
    from gradquant.quantizers import PartitionBound

    cfg = UniformQuantizerCfg.from_levels(1)
    with pytest.raises(ValueError, match="out of range"):
        QuantizedMessage(cfg=cfg, dither=COORDS, indices=np.array([2]),
                         partitions=(PartitionBound(0, 1, 1.0),))
    with pytest.raises(ValueError, match="tile"):
        QuantizedMessage(cfg=cfg, dither=COORDS, indices=np.array([0, 1]),
                         partitions=(PartitionBound(0, 1, 1.0),))
    with pytest.raises(ValueError, match="contiguous"):
        QuantizedMessage(cfg=cfg, dither=COORDS, indices=np.array([0, 1]),
                         partitions=(PartitionBound(0, 2, 1.0), PartitionBound(1, 2, 1.0)))


# ------------------------------------------------------- dithered encode path


def test_encode_worked_example_zero_dither():
    """With u = 0 the scheme reduces to plain mid-tread quantization of g/kappa."""
    g = np.array([0.8, -0.3, 0.1, -0.8])
    cfg = UniformQuantizerCfg.from_levels(2)
    msg = dithered_encode(g, cfg, COORDS, u=np.zeros(4))
    # kappa = 0.8; normalized = [1, -0.375, 0.125, -1]; /0.5 -> [2, -0.75, 0.25, -2]
    assert msg.kappa == np.float32(0.8)
    assert np.array_equal(msg.indices, [2, -1, 0, -2])
    decoded = dithered_decode(msg, u=np.zeros(4))
    assert np.allclose(decoded, msg.kappa * np.array([1.0, -0.5, 0.0, -1.0]))


def test_encode_worked_example_with_dither():
    g = np.array([0.6, -0.6])
    cfg = UniformQuantizerCfg.from_levels(2)
    u = np.array([0.2, -0.1])
    msg = dithered_encode(g, cfg, COORDS, u=u)
    kappa = msg.kappa
    # t = g/kappa + u, rounded to multiples of 0.5 with ties away from zero.
    t = g / kappa + u
    assert np.array_equal(msg.indices, np.round(t / 0.5).astype(int))
    decoded = dithered_decode(msg, u=u)
    assert np.allclose(decoded, kappa * (0.5 * msg.indices - u))
    # Reconstruction error never exceeds kappa * delta/2 when |q| stays inside.
    assert np.all(np.abs(decoded - g) <= kappa * 0.25 + 1e-12)


def test_kappa_serializes_as_float32_rounded_up():
    value = 0.1  # not representable in binary32
    g = np.array([value])
    msg = dithered_encode(g, UniformQuantizerCfg.from_levels(2), COORDS)
    assert msg.kappa >= value
    assert np.float32(msg.kappa) == np.float32(msg.kappa)  # exactly representable
    assert msg.kappa == float(np.nextafter(np.float32(0.1), np.float32(np.inf))) or msg.kappa == float(np.float32(0.1))
    # And normalization keeps every index within range as a consequence.
    assert np.all(np.abs(msg.indices) <= 2)


def test_dither_defaults_to_generated_stream():
    g = np.linspace(-1.0, 1.0, 17)
    cfg = UniformQuantizerCfg.from_levels(2)
    msg = dithered_encode(g, cfg, COORDS)
    u = dither_block(COORDS, g.size, cfg.delta)
    again = dithered_encode(g, cfg, COORDS, u=u)
    assert np.array_equal(msg.indices, again.indices)
    assert np.allclose(dithered_decode(msg), dithered_decode(again, u=u))


def test_decode_rejects_mismatched_mirrors():
    g = np.array([0.5, -0.5])
    cfg = UniformQuantizerCfg.from_levels(2)
    msg = dithered_encode(g, cfg, COORDS)
    with pytest.raises(ProtocolError):
        dithered_decode(msg, DitherCoordinates(seed=1, round=1))
    with pytest.raises(ProtocolError):
        dithered_decode(msg, cfg=UniformQuantizerCfg.from_levels(4))


def test_zero_gradient_roundtrip():
    g = np.zeros(5)
    msg = dithered_encode(g, UniformQuantizerCfg.from_levels(2), COORDS)
    assert msg.kappa == 0.0
    assert np.array_equal(msg.indices, np.zeros(5, dtype=np.int64))
    assert np.array_equal(dithered_decode(msg), g)


def test_partition_sizes_remainder_to_front():
    g = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    msg = partition_encode(g, 2, UniformQuantizerCfg.from_levels(2), COORDS)
    spans = [(p.start, p.end) for p in msg.partitions]
    assert spans == [(0, 3), (3, 5)]
    assert msg.partitions[0].kappa == np.float32(3.0)
    assert msg.partitions[1].kappa == np.float32(5.0)


def test_partition_encode_validation():
    cfg = UniformQuantizerCfg.from_levels(2)
    with pytest.raises(ValueError):
        partition_encode(np.ones(3), 4, cfg, COORDS)
    with pytest.raises(ValueError):
        partition_encode(np.ones(3), 0, cfg, COORDS)
    with pytest.raises(ValueError):
        partition_encode(np.array([1.0, np.nan]), 1, cfg, COORDS)
    with pytest.raises(ValueError, match="normalized"):
        partition_encode(np.ones(3), 1, UniformQuantizerCfg(delta=0.5, levels_m=3), COORDS)


def test_partition_roundtrip_bounds_error_per_span(rng):
    g = rng.normal(size=101) * np.repeat([0.01, 10.0], [50, 51])
    cfg = UniformQuantizerCfg.from_levels(2)
    coords = DitherCoordinates(seed=3, round=5)
    msg = partition_encode(g, 2, cfg, coords)
    decoded = dithered_decode(msg)
    for a, b, kappa in msg.partitions:
        assert np.all(np.abs(decoded[a:b] - g[a:b]) <= kappa * cfg.delta / 2 + 1e-9)


# ------------------------------------------------- half-dithered / stochastic


def test_half_dithered_is_quantize_of_sum():
    cfg = UniformQuantizerCfg.from_levels(2)
    x = np.array([0.3, -0.3])
    u = np.array([0.1, 0.2])
    assert np.array_equal(half_dithered_quantize(x, cfg, u), uniform_quantize(x + u, 0.5))


def test_stochastic_quantize_exact_probabilities():
    # x = 0.3, M = 2: lands on 0 with prob 0.4 and on 0.5 with prob 0.6.
    out_low = stochastic_quantize(np.array([0.3]), 2, np.array([0.39]))
    out_high = stochastic_quantize(np.array([0.3]), 2, np.array([0.40]))
    assert out_low[0] == 0.0
    assert out_high[0] == 0.5
    # Sign is carried by the magnitude path.
    assert stochastic_quantize(np.array([-0.3]), 2, np.array([0.9]))[0] == -0.5


def test_stochastic_quantize_grid_points_are_fixed():
    x = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    out = stochastic_quantize(x, 2, np.zeros(5))
    assert np.array_equal(out, x)
    out = stochastic_quantize(x, 2, np.full(5, 0.999999))
    assert np.array_equal(out, x)


def test_stochastic_quantize_validation():
    with pytest.raises(ValueError):
        stochastic_quantize(np.array([1.2]), 2, np.array([0.5]))
    with pytest.raises(ValueError):
        stochastic_quantize(np.array([0.5]), 0, np.array([0.5]))
    with pytest.raises(ValueError):
        stochastic_quantize(np.array([0.5]), 2, np.array([0.5, 0.5]))


def test_stochastic_variance_formula():
    # Hand value: x=0.3, M=2 -> (0.3-0)*(0.5-0.3) = 0.06.
    assert math.isclose(stochastic_variance(0.3, 2), 0.06)
    assert stochastic_variance(0.5, 2) == 0.0
    assert stochastic_variance(-0.3, 2) == stochastic_variance(0.3, 2)
    # Top cell: l is capped at M-1 so x=1 is exactly representable.
    assert stochastic_variance(1.0, 2) == 0.0


def test_stochastic_variance_matches_empirical_mean(rng):
    x = 0.37
    out = stochastic_quantize(np.full(200_000, x), 2, rng.uniform(0, 1, 200_000))
    emp = float(((out - x) ** 2).mean())
    assert math.isclose(emp, stochastic_variance(x, 2), rel_tol=0.05)


# ------------------------------------------------------------------- one-bit


def test_onebit_single_round_means():
    state = OneBitState.zeros(4)
    g = np.array([1.0, 3.0, -2.0, -4.0])
    msg, state2 = onebit_encode(g, state)
    assert np.array_equal(msg.bits, [True, True, False, False])
    assert msg.mu_pos == 2.0
    assert msg.mu_neg == -3.0
    rec = onebit_decode(msg)
    assert np.array_equal(rec, [2.0, 2.0, -3.0, -3.0])
    assert np.allclose(state2.residual, g - rec)


def test_onebit_error_feedback_accumulates():
    state = OneBitState.zeros(3)
    g1 = np.array([0.4, -0.2, 0.1])
    msg1, state = onebit_encode(g1, state)
    g2 = np.array([0.0, 0.0, 0.0])
    msg2, state = onebit_encode(g2, state)
    # Second round quantizes the residual of the first.
    total = onebit_decode(msg1) + onebit_decode(msg2) + state.residual
    assert np.allclose(total, g1 + g2)


def test_onebit_all_zero_vector():
    msg, state = onebit_encode(np.zeros(3), OneBitState.zeros(3))
    assert msg.mu_pos == 0.0 and msg.mu_neg == 0.0
    assert np.array_equal(onebit_decode(msg), np.zeros(3))


# ----------------------------------------------------------------- bounds


def test_excess_variance_bound_values():
    n, delta = 100, 0.5
    b = excess_variance_bound(n, delta, 2.0, 3.0, 0.7, k=4)
    assert math.isclose(b.second_moment, n * delta**2 / 12 * 3.0)
    expected_gauss = delta**2 / 3 * math.log(math.sqrt(2) * n) * 2.0 + n * delta**2 / 6 * 0.7**2
    assert math.isclose(b.gaussian, expected_gauss)
    expected_part = delta**2 / 6 * (2 * math.log(math.sqrt(2) * n / 4) * 2.0 + n * 0.7**2)
    assert math.isclose(b.partitioned, expected_part)


def test_excess_variance_bound_k1_identity():
    b = excess_variance_bound(50, 0.25, 1.1, 0.0, 0.3, k=1)
    assert math.isclose(b.gaussian, b.partitioned)
