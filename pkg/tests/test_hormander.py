import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhlab import hormander as H, model
from hhlab.calculus import gating_drift_derivatives
from hhlab.model import SignalSpec

# frozen from tests/oracles/curve_roots.py (30-digit mpmath)
D_REFERENCE = [
    ((-30.0, 0.3, 0.05, 0.6), -2.6091779919590965e-15),
    ((-5.5, 0.1, 0.9, 0.2), -8.8731004688394285e-14),
    ((20.25, 0.7, 0.4, 0.9), 3.249143068975881e-14),
    ((-200.0, 0.5, 0.5, 0.5), 8.4948547062343217e-7),
    ((42.0, 0.2, 0.8, 0.1), 2.6998238267411127e-16),
]
ROOT_WEIGHTED = 11.0485832699
ROOTS_UNWEIGHTED = (-11.4916255963, 10.312594714)

SPEC = SignalSpec(period=10.0, c0=1.0, cos_coeffs=(2.0,), sin_coeffs=(0.5,), tau=0.5, gamma=2.0)


@pytest.mark.parametrize("point,ref", D_REFERENCE)
def test_determinant_matches_reference(point, ref):
    assert H.determinant_D(*point) == pytest.approx(ref, rel=1e-9)


def test_determinant_vectorised():
    pts = np.array([p for p, _ in D_REFERENCE]).T
    assert np.allclose(H.determinant_D(*pts), [r for _, r in D_REFERENCE], rtol=1e-9, atol=0)


def test_curve_roots_weighted():
    scan = H.scan_equilibrium_curve(-15.0, 30.0, 0.01)
    assert len(scan.roots) == 1
    assert scan.roots[0] == pytest.approx(ROOT_WEIGHTED, abs=1e-5)


def test_curve_roots_unweighted():
    scan = H.scan_equilibrium_curve(-15.0, 30.0, 0.01, opening_weighted=False)
    assert np.allclose(scan.roots, ROOTS_UNWEIGHTED, atol=1e-5)
    mid = H.determinant_on_curve(0.0, opening_weighted=False)
    out = H.determinant_on_curve(np.array([-14.0, 25.0]), opening_weighted=False)
    assert mid < 0 and np.all(out > 0)


def test_scan_edge_cases():
    assert len(H.scan_equilibrium_curve(5.0, 5.0, 0.1).v) == 0
    with pytest.raises(ValueError):
        H.scan_equilibrium_curve(0.0, 1.0, 0.0)


def _closed_form(P, spec, k):
    g = spec.gamma * math.sqrt(spec.tau)
    v, n, m, h = P[:, 1], P[:, 2], P[:, 3], P[:, 4]
    G = gating_drift_derivatives(v, n, m, h, K=4)
    out = np.zeros((len(P), 6))
    if k == 1:
        out[:, 1] = g * model.ionic_current_dv(n, m, h) + g * spec.tau
        out[:, 5] = g * spec.tau
    out[:, 2:5] = -(g**k) * G[:, k - 1].T
    return out


def _random_points(n, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, 10, n), rng.uniform(-20, 40, n),
                            rng.uniform(0, 1, (n, 3)), rng.uniform(-50, 50, n)])


@pytest.mark.parametrize("method,tol", [("jet", 1e-12), ("difference", 1e-4)])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_nested_brackets_match_closed_forms(k, method, tol):
    P = _random_points(50, k)
    num = H.bracket_fields(SPEC, method=method)[k](P)
    cf = _closed_form(P, SPEC, k)
    rel = np.max(np.abs(num - cf), axis=1) / np.linalg.norm(cf, axis=1)
    assert rel.max() < tol
    assert np.allclose(num[:, 0], 0.0, atol=1e-12)


def test_jet_brackets_stay_accurate_at_large_potential():
    P = _random_points(200, 11)
    P[:, 1] = np.linspace(-400, 400, 200)
    for k in range(1, 5):
        cf = _closed_form(P, SPEC, k)
        num = H.bracket_fields(SPEC)[k](P)
        rel = np.max(np.abs(num - cf), axis=1) / np.linalg.norm(cf, axis=1)
        assert rel.max() < 1e-12


def test_bracket_matrix_routes_agree():
    P = _random_points(30, 12)
    a, ta = H.bracket_matrix(P, SPEC)
    b, tb = H.bracket_matrix(P, SPEC, method="difference")
    scale = np.linalg.norm(a, axis=-2, keepdims=True)
    assert np.max(np.abs(a - b) / scale) < 1e-4
    assert np.allclose(ta, 0.0) and np.allclose(tb, 0.0, atol=1e-9)


def test_noise_direction_jets_value_is_drift():
    P = _random_points(10, 13)
    c = H.noise_direction_jets(SPEC, P, 4)
    assert np.allclose(c[0], H.drift_field(SPEC)(P), rtol=1e-13, atol=1e-12)


def test_bracket_fields_rejects_unknown_method():
    with pytest.raises(ValueError):
        H.bracket_fields(SPEC, method="symbolic")


def test_bracket_of_linear_fields_is_commutator():
    rng = np.random.default_rng(3)
    A, B = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    f = lambda p: p @ A.T
    g = lambda p: p @ B.T
    P = rng.normal(size=(20, 6))
    # [f, g](x) = Dg f - Df g = (BA - AB) x
    assert np.allclose(H.lie_bracket(f, g, P), P @ (B @ A - A @ B).T, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_bracket_antisymmetric(seed):
    P = _random_points(5, seed)
    b, s = H.drift_field(SPEC), H.diffusion_field(SPEC)
    assert np.allclose(H.lie_bracket(b, s, P), -H.lie_bracket(s, b, P), atol=1e-12)


def test_bracket_rejects_unknown_stencil():
    b = H.drift_field(SPEC)
    with pytest.raises(ValueError):
        H.lie_bracket(b, b, np.zeros(6), order=3)


def test_numeric_rank():
    assert H.numeric_rank(np.eye(5)) == 5
    assert H.numeric_rank(np.diag([1.0, 1.0, 1.0, 1.0, 0.0])) == 4
    assert H.numeric_rank(np.zeros((3, 3))) == 0
    # equilibration makes badly scaled but regular matrices full rank
    assert H.numeric_rank(np.diag([1e12, 1.0, 1e-12])) == 3


def test_basis_determinant_factorises():
    # det(basis) = -(gamma sqrt(tau))^11 dF/dv D on a generic point
    P = _random_points(20, 7)
    P[:, 1] = np.linspace(-300, -160, 20)
    mats, _ = H.bracket_matrix(P, SPEC)
    g = SPEC.gamma * math.sqrt(SPEC.tau)
    pred = -(g**11) * model.ionic_current_dv(*P[:, 2:5].T) * H.determinant_D(*P[:, 1:5].T)
    assert np.allclose(np.linalg.det(mats) / pred, 1.0, atol=1e-3)


def test_rank_five_at_nondegenerate_points():
    pts = H.sample_nondegenerate_points(100, SPEC, seed=4)
    assert pts.shape == (100, 6)
    assert np.all(np.abs(H.determinant_D(*pts[:, 1:5].T)) > 1e-4)
    ranks, ratios = H.rank_at_points(pts, SPEC)
    assert np.all(ranks == 5) and np.all(ratios > 0)


def test_sampling_is_reproducible():
    a = H.sample_nondegenerate_points(10, SPEC, seed=9)
    b = H.sample_nondegenerate_points(10, SPEC, seed=9)
    assert np.array_equal(a, b)


def test_basis_degenerate_at_curve_root():
    v = ROOT_WEIGHTED
    n, m, h = model.gating_equilibrium(v)
    basis = H.bracket_basis(0.0, [v, n, m, h, 0.0], SPEC)
    assert basis.normalized_det < 1e-6
    assert basis.columns.shape == (5, 5)


def test_rank_map_flags_nothing_away_from_roots():
    nodes = [[v, *model.gating_equilibrium(v)] for v in (-300.0, -200.0)]
    ranks, deficient = H.hormander_rank_map(nodes, SPEC)
    assert list(ranks) == [5, 5] and len(deficient) == 0
