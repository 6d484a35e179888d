import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhlab.calculus import (JetError, TaylorJet, gating_drift_derivatives, jet_of_rate,
                            RATE_IDS)

mp.mp.dps = 40

_MP_RATES = {
    "alpha_n": lambda v: mp.mpf("0.01") * (10 - v) / (mp.exp(1 - v / 10) - 1),
    "beta_n": lambda v: mp.mpf("0.125") * mp.exp(-v / 80),
    "alpha_m": lambda v: mp.mpf("0.1") * (25 - v) / (mp.exp(mp.mpf("2.5") - v / 10) - 1),
    "beta_m": lambda v: 4 * mp.exp(-v / 18),
    "alpha_h": lambda v: mp.mpf("0.07") * mp.exp(-v / 20),
    "beta_h": lambda v: 1 / (mp.exp(3 - v / 10) + 1),
}


@pytest.mark.parametrize("rate", RATE_IDS)
@pytest.mark.parametrize("v", [-60.0, -7.5, 9.0, 13.0, 24.0, 26.5, 70.0])
def test_rate_jets_match_high_precision_derivatives(rate, v):
    jet = jet_of_rate(rate, v, 5)
    got = jet.derivatives()
    for k in range(6):
        exact = float(mp.diff(_MP_RATES[rate], mp.mpf(v), k))
        assert got[k] == pytest.approx(exact, rel=1e-8, abs=1e-14 * 10.0**k), (rate, v, k)


@pytest.mark.parametrize("v", [10.0, 25.0])
def test_rate_jets_at_singularity(v):
    # the singular point itself has a finite jet; compare with a nearby centre
    for rate in ("alpha_n", "alpha_m"):
        at = jet_of_rate(rate, v, 4).derivatives()
        for k in range(5):
            exact = float(mp.diff(_MP_RATES[rate], mp.mpf(v) + mp.mpf("1e-20"), k))
            assert at[k] == pytest.approx(exact, rel=1e-9, abs=1e-16)


def test_batched_jet_matches_scalar():
    vs = np.array([-20.0, 0.0, 10.0, 40.0])
    batch = jet_of_rate("alpha_n", vs, 4).derivatives()
    for i, v in enumerate(vs):
        assert np.allclose(batch[:, i], jet_of_rate("alpha_n", v, 4).derivatives(), rtol=1e-14)


coef = st.floats(-3.0, 3.0)


@given(st.lists(coef, min_size=4, max_size=4), st.lists(coef, min_size=4, max_size=4))
def test_exp_of_sum_is_product(a, b):
    ja, jb = TaylorJet(a), TaylorJet(b)
    lhs = (ja + jb).exp().coeffs
    rhs = (ja.exp() * jb.exp()).coeffs
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@given(st.lists(coef, min_size=5, max_size=5))
def test_reciprocal_inverts(a):
    if abs(a[0]) < 0.1:
        a[0] = 1.0
    j = TaylorJet(a)
    one = (j * j.reciprocal()).coeffs
    assert one[0] == pytest.approx(1.0)
    assert np.allclose(one[1:], 0.0, atol=1e-8 * max(1.0, max(abs(x) for x in a)) ** 6)


@given(st.lists(coef, min_size=4, max_size=4), st.floats(-2, 2), st.floats(-2, 2))
def test_affine_then_polyval(a, s, c):
    j = TaylorJet(a)
    assert np.allclose(j.affine(s, c).coeffs, (j * s + c).coeffs)
    assert np.allclose(j.polyval([c, s]).coeffs, (j * s + c).coeffs)


def test_order_limits():
    with pytest.raises(JetError):
        TaylorJet.variable(0.0, 9)
    with pytest.raises(JetError):
        TaylorJet([1.0, 2.0]) + TaylorJet([1.0, 2.0, 3.0])
    with pytest.raises(JetError):
        TaylorJet([0.0, 1.0]).reciprocal()
    with pytest.raises(JetError):
        jet_of_rate("alpha_x", 0.0, 2)


def test_gating_drift_derivatives_against_high_precision():
    v, n, m, h = -3.0, 0.4, 0.2, 0.5
    drifts = [lambda x, a=a, b=b, g=g: _MP_RATES[a](x) * (1 - g) - _MP_RATES[b](x) * g
              for a, b, g in (("alpha_n", "beta_n", n), ("alpha_m", "beta_m", m),
                              ("alpha_h", "beta_h", h))]
    G = gating_drift_derivatives(v, n, m, h, K=4)
    assert G.shape == (3, 4)
    for k in range(1, 5):
        exact = [float(mp.diff(f, mp.mpf(v), k)) for f in drifts]
        assert np.allclose(G[:, k - 1], exact, rtol=1e-9, atol=1e-16)
