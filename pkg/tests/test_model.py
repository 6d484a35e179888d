import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhlab import model
from hhlab.model import ModelDomainError, SignalSpec, State5


def _raw_rates(v):
    # textbook forms, valid away from the removable singularities
    return (0.01 * (10 - v) / (math.exp(1 - v / 10) - 1), 0.125 * math.exp(-v / 80),
            0.1 * (25 - v) / (math.exp(2.5 - v / 10) - 1), 4 * math.exp(-v / 18),
            0.07 * math.exp(-v / 20), 1 / (math.exp(3 - v / 10) + 1))


@pytest.mark.parametrize("v", [-80.0, -12.3, 0.0, 5.0, 33.3, 90.0])
def test_rates_match_textbook_forms(v):
    assert np.allclose(model.rates(v), _raw_rates(v), rtol=1e-13, atol=0)


@pytest.mark.parametrize("v", [10.0, 25.0])
def test_rates_finite_at_removable_singularities(v):
    r = model.rates(v)
    assert all(math.isfinite(x) for x in r)
    left, right = model.rates(v - 1e-7), model.rates(v + 1e-7)
    assert np.allclose(left, r, rtol=1e-6) and np.allclose(right, r, rtol=1e-6)


@given(st.floats(-5e-3, 5e-3))
def test_expm1_ratio_continuous_across_window(u):
    exact = 1.0 if u == 0 else u / math.expm1(u)
    assert model.expm1_ratio(u) == pytest.approx(exact, rel=1e-12)


def test_f_infinity_table():
    got = model.f_infinity(np.array([-10.0, 0.0, 10.0]))
    assert np.allclose(got, [-6.15, -0.05, 26.61], atol=0.01)
    assert model.f_infinity(0.0) == pytest.approx(-0.0534, abs=1e-3)


def test_ionic_current_linear_in_v():
    n, m, h = 0.3, 0.2, 0.7
    vs = np.linspace(-50, 50, 7)
    F = model.ionic_current(vs, n, m, h)
    assert np.allclose(np.diff(F, 2), 0.0, atol=1e-10)
    assert np.allclose(np.diff(F) / np.diff(vs), model.ionic_current_dv(n, m, h))


@given(st.floats(-20.0, 100.0))
def test_equilibrium_for_input_inverts_f_infinity(c):
    v = model.equilibrium_for_input(c)
    assert float(model.f_infinity(v)) == pytest.approx(c, abs=1e-7)


def test_equilibrium_for_input_out_of_range():
    with pytest.raises(model.InputRangeError):
        model.equilibrium_for_input(1e6)


def test_state_validation():
    with pytest.raises(ModelDomainError):
        State5(0.0, 1.5, 0.1, 0.1, 0.0)
    with pytest.raises(ModelDomainError):
        State5(math.nan, 0.5, 0.1, 0.1, 0.0)
    s = State5(0.0, 1.0 + 1e-13, 0.0, 0.0, 0.0)
    assert s.n == 1.0


@given(st.floats(-100, 100), st.floats(-50, 50))
def test_signal_periodic(t, c0):
    spec = SignalSpec(period=7.0, c0=c0, cos_coeffs=(1.0, -0.5), sin_coeffs=(0.25,))
    assert model.signal_eval(spec, t + 7.0) == pytest.approx(model.signal_eval(spec, t), abs=1e-9)


def test_signal_derivative_matches_difference():
    spec = SignalSpec(period=10.0, c0=1.0, cos_coeffs=(2.0,), sin_coeffs=(0.0, 1.5))
    t = np.linspace(0.1, 9.9, 13)
    h = 1e-5
    fd = (model.signal_eval(spec, t + h) - model.signal_eval(spec, t - h)) / (2 * h)
    assert np.allclose(model.signal_derivative(spec, t), fd, atol=1e-7)


def test_drift_structure():
    spec = SignalSpec(c0=3.0, tau=0.5)
    x = np.array([10.0, 0.3, 0.2, 0.6, 1.0])
    b = model.drift(0.0, x, spec)
    inp = (3.0 - 1.0) * 0.5
    assert b[4] == pytest.approx(inp)
    assert b[0] == pytest.approx(inp - model.ionic_current(*x[:4]))
    assert np.allclose(model.diffusion(spec), 2.0 * math.sqrt(0.5) * np.array([1, 0, 0, 0, 1]))


def test_rest_state_is_fixed_point_of_gating():
    x = model.rest_state(0.0, 0.0)
    b = model.drift(0.0, x, SignalSpec())
    assert np.allclose(b[1:4], 0.0, atol=1e-15)
