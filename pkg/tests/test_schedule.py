from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pagdiff import ConfigError, NoiseSchedule, ShapeError, make_linear_schedule
from pagdiff.sampler import predict_x0


def test_single_step_schedule():
    s = make_linear_schedule(1, 0.5, 0.5)
    assert s.betas.tolist() == [0.5]
    assert s.alpha_bars.tolist() == [0.5]
    assert s.sigmas.tolist() == [np.sqrt(0.5)]


def test_four_step_alpha_bars_hand_product():
    # betas (0.1, 0.2, 0.3, 0.4) -> running products of (0.9, 0.8, 0.7, 0.6)
    s = make_linear_schedule(4, 0.1, 0.4)
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.72, 0.504, 0.3024],
                               rtol=1e-14)


def test_alpha_bar_matches_exact_rational_product():
    # Independent oracle: exact rational running product.
    s = make_linear_schedule(100, 1e-4, 0.02)
    prod = Fraction(1)
    for i in range(100):
        beta = Fraction(s.betas[i])  # exact binary value of the stored beta
        prod *= 1 - beta
        assert abs(s.alpha_bars[i] - float(prod)) <= 1e-12 * float(prod)


def test_sigma_squared_equals_beta_exactly():
    s = make_linear_schedule(50, 1e-4, 0.02)
    # sigma is stored as sqrt(beta); squaring must agree to the ulp level
    np.testing.assert_allclose(s.sigmas ** 2, s.betas, rtol=1e-15)


def test_alpha_bar_strictly_decreasing():
    s = make_linear_schedule(200, 1e-4, 0.02)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all(s.alpha_bars > 0) and np.all(s.alpha_bars <= 1)


@pytest.mark.parametrize("T,lo,hi", [(0, 0.1, 0.2), (5, 0.0, 0.2),
                                     (5, 0.3, 0.2), (5, 0.1, 1.0)])
def test_invalid_schedule_config_rejected(T, lo, hi):
    with pytest.raises(ConfigError):
        make_linear_schedule(T, lo, hi)


def _manual_schedule(alpha_bar):
    # Schedule stub with a prescribed alpha_bar at t=1.
    return NoiseSchedule(T=1, betas=np.array([0.1]), alphas=np.array([0.9]),
                         alpha_bars=np.array([alpha_bar]),
                         sigmas=np.array([np.sqrt(0.1)]))


def test_q_sample_limits():
    x0 = np.full((1, 2, 2), 0.25)
    eps = np.full((1, 2, 2), -0.75)
    assert np.array_equal(_manual_schedule(1.0).q_sample(x0, 1, eps), x0)
    assert np.array_equal(_manual_schedule(0.0).q_sample(x0, 1, eps), eps)


def test_q_sample_scalar_oracle():
    # 0.5*1.0 + sqrt(0.75)*(-1.0)
    out = _manual_schedule(0.25).q_sample(np.array([[[1.0]]]), 1,
                                          np.array([[[-1.0]]]))
    assert out[0, 0, 0] == pytest.approx(0.5 - np.sqrt(0.75), abs=1e-15)


def test_q_sample_shape_mismatch():
    s = make_linear_schedule(10)
    with pytest.raises(ShapeError):
        s.q_sample(np.zeros((2, 3, 3)), 5, np.zeros((2, 3, 4)))


def test_q_sample_timestep_range():
    s = make_linear_schedule(10)
    with pytest.raises(ConfigError):
        s.q_sample(np.zeros((1, 2, 2)), 11, np.zeros((1, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_q_sample_is_linear(t_frac, seed):
    s = make_linear_schedule(50)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 1, 4, 4))
    e1, e2 = rng.standard_normal((2, 1, 4, 4))
    t = t_frac
    lhs = s.q_sample(a + b, t, e1 + e2)
    rhs = s.q_sample(a, t, e1) + s.q_sample(b, t, e2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_roundtrip_q_sample_predict_x0(sched100):
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, (8, 8, 8))
    eps = rng.standard_normal(x0.shape)
    for t in (1, 17, 50, 100):
        x_t = sched100.q_sample(x0, t, eps)
        np.testing.assert_allclose(predict_x0(sched100, x_t, t, eps), x0,
                                   atol=1e-9)
