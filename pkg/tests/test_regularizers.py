import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import ortho_group

from acwm.autodiff import ShapeError, Tensor, backprop, grad_check
from acwm.regularizers import (SigregConfig, SliceSet, VicregWeights, decollapse, epps_pulley_reference,
                               epps_pulley_statistic, sigreg, slices_for_step, vicreg)

from oracles import quadrature_T

COLLAPSED_T = 1 - math.sqrt(2) + 1 / math.sqrt(3)


def test_single_point_value():
    assert float(epps_pulley_statistic(np.zeros(1)).data) == pytest.approx(COLLAPSED_T, abs=1e-6)
    assert COLLAPSED_T == pytest.approx(0.163137, abs=1e-6)


def test_two_point_value():
    expected = (1 + math.exp(-2)) / 2 - math.sqrt(2) * math.exp(-0.25) + 1 / math.sqrt(3)
    assert epps_pulley_reference(np.array([-1.0, 1.0])) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.043628, abs=1e-6)
    assert quadrature_T([-1.0, 1.0]) == pytest.approx(expected, abs=1e-6)


def test_closed_form_matches_quadrature(rng):
    for _ in range(20):
        x = rng.uniform(-5, 5, rng.integers(1, 40))
        assert abs(epps_pulley_reference(x) - quadrature_T(x)) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-5, 5)))
def test_symmetries(x):
    T = epps_pulley_reference(x)
    assert T >= 0
    assert epps_pulley_reference(-x) == pytest.approx(T, abs=1e-12)
    assert epps_pulley_reference(x[::-1]) == pytest.approx(T, abs=1e-12)


def test_gaussian_null_small():
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal(4096)
        assert epps_pulley_reference(x) < 0.01


def test_power_against_null():
    null = np.mean([epps_pulley_reference(np.random.default_rng(s).standard_normal(1024)) for s in range(10)])
    assert COLLAPSED_T >= 10 * null


def test_empty_and_nonfinite():
    with pytest.raises(ValueError):
        epps_pulley_statistic(np.zeros(0))
    with pytest.raises(FloatingPointError):
        epps_pulley_statistic(np.array([np.nan]))


def test_slice_set_unit_and_deterministic():
    a = SliceSet.draw(16, 32, seed=4, step=7)
    b = SliceSet.draw(16, 32, seed=4, step=7)
    np.testing.assert_allclose(np.linalg.norm(a.directions, axis=0), 1.0, atol=1e-6)
    assert a.directions.tobytes() == b.directions.tobytes()
    assert SliceSet.draw(16, 32, 4, 8).directions.tobytes() != a.directions.tobytes()
    fixed = SigregConfig(8, resample_each_step=False)
    assert slices_for_step(4, fixed, 1, 0).directions.tobytes() == slices_for_step(4, fixed, 1, 9).directions.tobytes()


def test_sigreg_collapsed_batch():
    H = np.zeros((32, 8), np.float32)
    assert float(sigreg(H, SliceSet.draw(8, 16, 0)).data) == pytest.approx(COLLAPSED_T, abs=1e-5)


def test_sigreg_gaussian_batch(rng):
    H = rng.standard_normal((4096, 8)).astype(np.float32)
    assert float(sigreg(H, SliceSet.draw(8, 16, 0)).data) < 0.01


def test_sigreg_rotation_invariance(rng):
    H = rng.standard_normal((64, 6))
    U = SliceSet.draw(6, 10, 2).directions.astype(np.float64)
    Q = ortho_group.rvs(6, random_state=3)
    a = float(sigreg(Tensor(H), U).data)
    b = float(sigreg(Tensor(H @ Q), Q.T @ U).data)
    assert a == pytest.approx(b, abs=1e-9)


def test_sigreg_descent_step_from_near_collapse(rng):
    H = Tensor((1e-2 * rng.standard_normal((64, 8))).astype(np.float32), requires_grad=True)
    sl = SliceSet.draw(8, 16, 0)
    before = sigreg(H, sl)
    backprop(before)
    H2 = H.data - 0.5 * H.grad
    assert float(sigreg(H2, sl).data) < float(before.data)


def test_sigreg_gradient(rng):
    H = Tensor(rng.standard_normal((12, 4)).astype(np.float32), requires_grad=True)
    sl = SliceSet.draw(4, 6, 1)
    assert grad_check(lambda: sigreg(H, sl), {"H": H}, eps=1e-5).passed


def test_sigreg_dim_mismatch():
    with pytest.raises(ShapeError):
        sigreg(np.zeros((4, 5), np.float32), SliceSet.draw(6, 3, 0))


def test_decollapse_small(rng):
    H, trace = decollapse(1e-3 * rng.standard_normal((128, 8)), steps=150, num_slices=32)
    assert trace[-1] < trace[0]
    assert np.mean(H.std(axis=0) > 0.5) >= 0.9


# VICReg

def _whitened_batch():
    s = math.sqrt(3 / 4)
    return np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], np.float64) * s


def test_vicreg_zero_at_whitened_identical_views():
    H = _whitened_batch()
    loss, terms = vicreg(H, H)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-7)
    assert terms["covariance"] == pytest.approx(0.0, abs=1e-12)


def test_vicreg_collapsed_batch():
    H = np.ones((8, 4))
    loss, terms = vicreg(H, H, VicregWeights(eps=0.0))
    assert terms["invariance"] == 0.0
    assert float(loss.data) == pytest.approx(25.0 * 1.0, abs=1e-6)
    # default eps keeps the std differentiable at zero: hinge is 1 - sqrt(eps)
    _, terms = vicreg(H, H)
    assert terms["variance"] == pytest.approx(1 - math.sqrt(1e-4), abs=1e-9)


def test_vicreg_linear_in_weights(rng):
    a, b = rng.standard_normal((16, 4)), rng.standard_normal((16, 4))
    base, terms = vicreg(a, b)
    doubled, _ = vicreg(a, b, VicregWeights(cov=2.0))
    assert float(doubled.data) - float(base.data) == pytest.approx(terms["covariance"], rel=1e-5)


def test_vicreg_errors():
    with pytest.raises(ValueError):
        vicreg(np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ShapeError):
        vicreg(np.zeros((4, 3)), np.zeros((4, 2)))
