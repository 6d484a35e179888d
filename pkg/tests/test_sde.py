import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hhlab import kernels, model, sde
from hhlab.model import SignalSpec
from hhlab.noise import NoiseStream

SPEC = SignalSpec(period=10.0, c0=10.0, cos_coeffs=(2.0,), tau=0.5, gamma=5.0)


def test_sim_config_validation():
    with pytest.raises(sde.ConfigError):
        sde.SimConfig(dt=0.0)
    with pytest.raises(sde.ConfigError):
        sde.SimConfig(system="nope")
    with pytest.raises(sde.ConfigError):
        sde.steps_for(1.0, 0.3)
    assert sde.steps_for(10.0, 0.005) == 2000


def test_advance_matches_step_euler():
    cfg = sde.SimConfig(dt=0.01, seed=4)
    x = model.rest_state(5.0, 2.0)
    z = NoiseStream(4, 0).normals(0, 50)
    ref = x
    for j in range(50):
        ref = sde.step_euler(j * cfg.dt, ref, cfg.dt, math.sqrt(cfg.dt) * z[j], SPEC)
    got = sde.advance(x.as_array()[None], SPEC, cfg, [0], 0, 50)[0]
    assert np.allclose(got, ref.as_array(), rtol=1e-12, atol=1e-12)


def test_hh_mode_keeps_zeta_and_injects_signal():
    cfg = sde.SimConfig(dt=0.01, seed=1, system="hh")
    x = model.rest_state(0.0, 3.5)
    got = sde.advance(x.as_array()[None], SPEC.with_(gamma=0.0), cfg, [0], 0, 10)[0]
    ref = x
    for j in range(10):
        ref = sde.step_euler(j * cfg.dt, ref, cfg.dt, 0.0, SPEC.with_(gamma=0.0), system="hh")
    assert got[4] == 3.5
    assert np.allclose(got, ref.as_array(), rtol=1e-12)


def test_zeta_is_euler_ou_with_shared_noise():
    cfg = sde.SimConfig(dt=0.005, seed=8)
    x0 = model.rest_state(0.0, 7.0).as_array()
    n = 400
    _, rec = sde.advance(x0[None], SPEC, cfg, [2], 0, n, record_every=1)
    z = NoiseStream(8, 2).normals(0, n)
    s = model.signal_eval(SPEC, np.arange(n) * cfg.dt)
    sig = SPEC.gamma * math.sqrt(SPEC.tau)
    zeta = 7.0
    for j in range(n):
        zeta = zeta + (s[j] - zeta) * SPEC.tau * cfg.dt + sig * math.sqrt(cfg.dt) * z[j]
    assert rec[0, -1, 4] == pytest.approx(zeta, rel=1e-12)


def test_compiled_and_python_kernels_agree():
    fn = kernels.compiled_em_advance()
    if fn is None:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(0)
    x0 = np.tile(model.rest_state(0.0, 10.0).as_array(), (64, 1))
    s = np.full(300, 10.0)
    noise = rng.standard_normal((64, 300))
    a, b = x0.copy(), x0.copy()
    out_a, out_b = np.empty((64, 30, 5)), np.empty((64, 30, 5))
    fn(a, s, noise, 0.01, 0.5, 5.0, 0, out_a, 10)
    kernels.python_em_advance(b, s, noise, 0.01, 0.5, 5.0, 0, out_b, 10)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)
    assert np.allclose(out_a, out_b, rtol=1e-10, atol=1e-10)


def test_gating_stays_in_unit_box():
    cfg = sde.SimConfig(dt=0.01, t_end=200.0, seed=3)
    x0 = np.tile(model.rest_state(0.0, 10.0).as_array(), (50, 1))
    x, rec = sde.simulate_batch(x0, cfg, SPEC, record_every=100)
    assert np.all((rec[..., 1:4] >= 0) & (rec[..., 1:4] <= 1))


def test_simulate_reproducible_and_chunk_independent():
    cfg = sde.SimConfig(dt=0.01, t_end=50.0, seed=12)
    a = sde.simulate(model.rest_state(), cfg, SPEC, stream=5)
    b = sde.simulate(model.rest_state(), cfg, SPEC, stream=5)
    assert np.array_equal(a.states, b.states)
    # splitting the horizon gives the same path
    half = sde.simulate(model.rest_state(), cfg.with_(t_end=25.0), SPEC, stream=5)
    rest = sde.simulate(half.last, cfg.with_(t_end=25.0), SPEC, stream=5, step_offset=2500)
    assert np.allclose(rest.states[-1], a.states[-1], rtol=1e-12, atol=1e-12)


def test_skeleton_matches_period_map():
    cfg = sde.SimConfig(dt=0.01, seed=2)
    x0 = np.tile(model.rest_state(0.0, 10.0).as_array(), (4, 1))
    sk = sde.skeleton_batch(x0, 3, cfg, SPEC)
    assert sk.shape == (4, 4, 5)
    one = sde.period_map(x0, cfg, SPEC, streams=np.arange(4))
    assert np.allclose(sk[:, 1], one, rtol=1e-12)
    assert sde.skeleton(x0[0], 0, cfg, SPEC).shape == (1, 5)


def test_envelope_bound_holds():
    cfg = sde.SimConfig(dt=0.01, t_end=100.0, seed=6)
    tr = sde.simulate(model.rest_state(30.0, -5.0), cfg, SPEC)
    assert sde.envelope_margin(tr) >= 0.0


def test_spike_times_debounce():
    t = np.arange(0, 10, 0.5)
    v = np.where(np.isin(np.arange(20), [2, 4, 12]), 50.0, 0.0)
    assert list(sde.spike_times(t, v)) == [1.0, 6.0]
    assert list(sde.spike_times(t, v, debounce=0.5)) == [1.0, 2.0, 6.0]


def test_deterministic_spiking_vs_subthreshold():
    cfg = sde.SimConfig(dt=0.01, t_end=200.0, system="hh")
    spiking = sde.simulate(model.rest_state(), cfg, SignalSpec(c0=10.0, gamma=0.0))
    sub = sde.simulate(model.rest_state(model.equilibrium_for_input(3.0)), cfg,
                       SignalSpec(c0=3.0, gamma=0.0))
    assert len(sde.spike_times(spiking.times, spiking.states[:, 0])) > 5
    assert len(sde.spike_times(sub.times, sub.states[:, 0])) == 0


def test_ou_transition_constant_signal():
    spec = SignalSpec(c0=5.0, tau=1.0, gamma=2.0)
    dec, shift, sd = sde.ou_transition(0.0, 10.0, spec)
    assert dec == pytest.approx(math.exp(-10.0))
    assert shift == pytest.approx(5.0 * (1 - math.exp(-10.0)))
    assert sd == pytest.approx(2.0 * math.sqrt((1 - math.exp(-20.0)) / 2))
    with pytest.raises(ValueError):
        sde.ou_transition(1.0, 1.0, spec)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.05, 3.0))
def test_moving_average_closed_equals_quadrature(s, tau):
    spec = SignalSpec(period=10.0, c0=1.0, cos_coeffs=(2.0, 0.5), sin_coeffs=(-1.0,), tau=tau)
    assert sde.m_moving_average(spec, s, method="closed") == pytest.approx(
        sde.m_moving_average(spec, s), abs=1e-8)


def test_ou_shift_against_independent_quadrature():
    spec = SignalSpec(period=10.0, c0=1.0, cos_coeffs=(3.0,), tau=0.3)
    _, shift, _ = sde.ou_transition(2.0, 12.0, spec)
    f = lambda u: math.exp(-0.3 * (12.0 - u)) * (1.0 + 3.0 * math.cos(2 * math.pi * u / 10))
    assert shift == pytest.approx(0.3 * integrate.quad(f, 2.0, 12.0)[0], rel=1e-10)


def test_ou_skeleton_preserves_stationary_law():
    spec = SignalSpec(c0=5.0, cos_coeffs=(3.0,), tau=0.1, gamma=2.0)
    xi0 = sde.ou_stationary_sample(spec, 20000, seed=1)
    sk = sde.ou_skeleton(xi0, 5, spec, seed=2)
    m = sde.m_moving_average(spec, 0.0)
    for k in (0, 5):
        assert abs(sk[:, k].mean() - m) < 4 * math.sqrt(2.0 / 20000)
        assert sk[:, k].var() == pytest.approx(2.0, rel=0.05)


def test_write_rows_exact_and_empty(tmp_path):
    p = tmp_path / "a.csv"
    sde.write_rows(p, ("x", "y"), [(0.1, 1 / 3)])
    assert p.read_text() == "x,y\n0.1,0.3333333333333333\n"
    sde.write_rows(p, ("t",), np.empty((0, 1)))
    assert p.read_text() == "t\n"
