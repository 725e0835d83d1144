import math

import numpy as np
import pytest

from gradquant.dither import DitherCoordinates, dither_block
from gradquant.errors import ProtocolError
from gradquant.nested import (
    NestedConfig,
    NestedMessage,
    SideInfoModel,
    _centered_residue,
    alpha_optimal,
    failure_prob_bound,
    nested_decode,
    nested_decode_vector,
    nested_encode,
    nested_encode_vector,
    nested_mse,
)

CFG3 = NestedConfig(delta1=1.0, nesting_k=3, alpha=1.0)


def test_worked_example():
    """delta1=1, delta2=3, u=0.3: x=-4.2 sends -1; decoding near y=-3.4 gives -4.3."""
    assert nested_encode(-4.2, CFG3, 0.3) == -1
    assert nested_decode(-1, -3.4, CFG3, 0.3) == pytest.approx(-4.3, abs=1e-12)
    assert nested_encode(2.7, CFG3, 0.3) == 0


def test_config_properties():
    assert CFG3.delta2 == 3.0
    assert CFG3.index_bits == 2
    assert NestedConfig(delta1=0.25, nesting_k=4).delta2 == 1.0
    assert NestedConfig(delta1=0.5, nesting_k=2).index_bits == 1
    with pytest.raises(ValueError):
        NestedConfig(delta1=1.0, nesting_k=1)
    with pytest.raises(ValueError):
        NestedConfig(delta1=1.0, nesting_k=3, alpha=0.0)
    with pytest.raises(ValueError):
        NestedConfig(delta1=-1.0, nesting_k=3)


def test_centered_residue_odd_k():
    # k=3: residues live in {-1, 0, 1} and are periodic with period 3.
    rel = np.arange(-7, 8)
    out = _centered_residue(rel, 3)
    assert set(out.tolist()) == {-1, 0, 1}
    assert np.array_equal(out, _centered_residue(rel + 3, 3))
    assert _centered_residue(2, 3) == -1
    assert _centered_residue(-2, 3) == 1


def test_centered_residue_even_k():
    # k=4: centered set is {-2, -1, 0, 1}.
    out = _centered_residue(np.arange(-8, 8), 4)
    assert set(out.tolist()) == {-2, -1, 0, 1}
    assert _centered_residue(2, 4) == -2
    assert _centered_residue(-2, 4) == -2


def test_encode_residue_matches_direct_difference():
    rng = np.random.default_rng(5)
    for k in (2, 3, 4, 5):
        cfg = NestedConfig(delta1=0.5, nesting_k=k)
        x = rng.uniform(-10, 10, 200)
        u = rng.uniform(-0.25, 0.25, 200)
        s = nested_encode(x, cfg, u)
        t = x + u
        q1 = np.round(t / cfg.delta1)  # ties are measure-zero for these draws
        q2 = np.round(t / cfg.delta2)
        assert np.array_equal(s, _centered_residue(q1 - k * q2, k).astype(np.int64))


def test_roundtrip_exact_when_side_info_close():
    """If y shares the coarse cell of x (up to dither), decode returns Q1-accurate x."""
    rng = np.random.default_rng(6)
    cfg = NestedConfig(delta1=1.0, nesting_k=3)
    x = rng.uniform(-20, 20, 500)
    z = rng.uniform(-0.9, 0.9, 500)  # |z| < (delta2 - delta1) / 2 = 1
    u = rng.uniform(-0.5, 0.5, 500)
    xhat = nested_decode(nested_encode(x, cfg, u), x - z, cfg, u)
    assert np.all(np.abs(xhat - x) <= cfg.delta1 / 2 + 1e-9)


def test_decode_error_identity_on_success():
    """On success the error decomposes as alpha*e - (1 - alpha^2)*z."""
    rng = np.random.default_rng(7)
    cfg = NestedConfig(delta1=1.0, nesting_k=4, alpha=0.9)
    x = rng.uniform(-10, 10, 1000)
    z = rng.normal(0, 0.3, 1000)
    u = rng.uniform(-0.5, 0.5, 1000)
    xhat = nested_decode(nested_encode(x, cfg, u), x - z, cfg, u)
    t = cfg.alpha * x + u
    e = cfg.delta1 * np.round(t / cfg.delta1) - t
    fail = np.asarray(np.abs(np.round((cfg.alpha * z - (t - cfg.delta1 * np.round(t / cfg.delta1))) / cfg.delta2))) != 0
    ok = ~fail
    assert ok.mean() > 0.9
    predicted = x + cfg.alpha * e - (1 - cfg.alpha**2) * z
    assert np.allclose(xhat[ok], predicted[ok], atol=1e-9)


def test_alpha_optimal_value_and_domain():
    assert math.isclose(alpha_optimal(1.0, 0.5), math.sqrt(1 - 1 / 3))
    with pytest.raises(ValueError):
        alpha_optimal(1.0, 0.2)  # sigma_z^2 <= delta1^2/12


def test_failure_bound_formula():
    cfg = NestedConfig(delta1=1.0, nesting_k=3, alpha=0.8)
    model = SideInfoModel(sigma_z=0.5)
    expected = 1.0 / (3 * 9) + 4 * 0.64 * 0.25 / 9
    assert math.isclose(failure_prob_bound(cfg, model), expected)
    # Caps at 1 and honors the bounded-innovation special case.
    assert failure_prob_bound(NestedConfig(1.0, 2, 1.0), SideInfoModel(9.0)) == 1.0
    # |z| bounded strictly inside (delta2 - delta1) / (2 alpha): cannot fail.
    assert failure_prob_bound(cfg, model, z_bound=1.2) == 0.0
    assert failure_prob_bound(cfg, model, z_bound=1.3) == failure_prob_bound(cfg, model)


def test_nested_mse_values():
    assert math.isclose(nested_mse(CFG3, SideInfoModel(0.5)), 1 / 12)
    a = alpha_optimal(1.0, 0.5)
    cfg = NestedConfig(delta1=1.0, nesting_k=3, alpha=a)
    expected = a * a / 12 + (1 - a * a) ** 2 * 0.25
    assert math.isclose(nested_mse(cfg, SideInfoModel(0.5)), expected)
    # At alpha = 1 the conditional MSE equals the plain dithered one.
    assert nested_mse(CFG3, SideInfoModel(123.0)) == 1 / 12


def test_message_validation():
    with pytest.raises(ValueError, match="centered"):
        NestedMessage(cfg=CFG3, dither=DitherCoordinates(0, 0), kappa=1.0,
                      rel_indices=np.array([2]))
    with pytest.raises(ValueError, match="centered"):
        NestedMessage(cfg=NestedConfig(1.0, 4), dither=DitherCoordinates(0, 0), kappa=1.0,
                      rel_indices=np.array([2]))
    # k=4 allows -2 but not +2.
    NestedMessage(cfg=NestedConfig(1.0, 4), dither=DitherCoordinates(0, 0), kappa=1.0,
                  rel_indices=np.array([-2, 1]))
    with pytest.raises(ValueError, match="kappa"):
        NestedMessage(cfg=CFG3, dither=DitherCoordinates(0, 0), kappa=0.0,
                      rel_indices=np.array([0]))


def test_vector_roundtrip_with_generated_dither():
    rng = np.random.default_rng(8)
    cfg = NestedConfig(delta1=1.0 / 3.0, nesting_k=3)
    coords = DitherCoordinates(seed=21, round=4)
    g = rng.uniform(-1.0, 1.0, 64)
    kappa = float(np.abs(g).max())
    msg = nested_encode_vector(g, kappa, cfg, coords)
    side = g - rng.uniform(-0.05, 0.05, 64) * kappa
    decoded = nested_decode_vector(msg, side)
    # Side info well inside the coarse cell: reconstruction is Q1-accurate.
    assert np.all(np.abs(decoded - g) <= msg.kappa * cfg.delta1 / 2 + 1e-9)
    # Decoding with an explicit matching stream gives the identical result.
    u = dither_block(coords, 64, cfg.delta1)
    assert np.array_equal(decoded, nested_decode_vector(msg, side, u=u))


def test_vector_mirror_checks():
    cfg = NestedConfig(delta1=0.5, nesting_k=2)
    coords = DitherCoordinates(seed=1, round=1)
    msg = nested_encode_vector(np.array([0.3, -0.2]), 0.3, cfg, coords)
    with pytest.raises(ProtocolError):
        nested_decode_vector(msg, np.zeros(2), dither=DitherCoordinates(seed=1, round=2))
    with pytest.raises(ProtocolError):
        nested_decode_vector(msg, np.zeros(2), cfg=NestedConfig(delta1=0.5, nesting_k=4))
    with pytest.raises(ValueError):
        nested_decode_vector(msg, np.zeros(3))
    with pytest.raises(ValueError):
        nested_encode_vector(np.array([0.1]), 0.0, cfg, coords)


def test_vector_kappa_rounded_up_to_float32():
    cfg = NestedConfig(delta1=0.5, nesting_k=2)
    msg = nested_encode_vector(np.array([0.1]), 0.1, cfg, DitherCoordinates(0, 0))
    assert msg.kappa >= 0.1
    assert float(np.float32(msg.kappa)) == msg.kappa
