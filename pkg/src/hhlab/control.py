"""Explicit steering of the first four coordinates to the rest point y*.

The potential follows the bridge ``vbar(t) = bump(t) * v0``, which is exactly
0 from t = 1 on.  With v prescribed, each gating fraction solves a linear ODE
``g' = b(v) - a(v) g`` (``a = alpha + beta``, ``b = alpha``) and is evaluated
from its closed integral form.  The control ``hdot`` is then whatever makes
the first equation hold identically; the fifth coordinate follows as ``J``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import SignalSpec, State5

GAUSS_NODES = 8
DEFAULT_GRID_DT = 1e-3
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GAUSS_NODES)


class HorizonError(ValueError):
    """The horizon is too short for the requested radius (or the radius is 0)."""

    def __init__(self, msg, required=None):
        super().__init__(msg)
        self.required = required


def bump(t):
    """Quintic smoothstep from 1 at t = 0 down to 0 at t >= 1."""
    u = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    # 1 - 10u^3 + 15u^4 - 6u^5, evaluated in the form that keeps the result
    # inside [0, 1] near each end
    out = np.where(u < 0.5, 1.0 - u**3 * (10.0 + u * (-15.0 + 6.0 * u)),
                   (1.0 - u) ** 3 * (1.0 + u * (3.0 + 6.0 * u)))
    return out if out.ndim else float(out)


def bump_dot(t):
    u = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    out = -30.0 * u * u * (1.0 - u) ** 2
    return out if out.ndim else float(out)


def _ab(v):
    r = model.rates(v)
    return ((r.alpha_n + r.beta_n, r.alpha_n),
            (r.alpha_m + r.beta_m, r.alpha_m),
            (r.alpha_h + r.beta_h, r.alpha_h))


def decay_rates(v: float = 0.0):
    """(a_n, a_m, a_h) at a fixed potential."""
    return tuple(float(a) for a, _ in _ab(v))


def _grid(t_end: float, dt: float) -> np.ndarray:
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} must be a positive multiple of {dt}")
    return dt * np.arange(n + 1)


def _bridge_on(grid: np.ndarray, v0: float, g0) -> np.ndarray:
    """Gating bridge values at ``grid`` (starting at 0) for vbar = bump * v0."""
    lo, hi = grid[:-1], grid[1:]
    half = 0.5 * (hi - lo)
    # Gauss nodes u_i in every interval, and nested nodes for A(u_i) = int_lo^u_i a
    u = lo[:, None] + half[:, None] * (1.0 + _GL_X)
    hu = 0.5 * (u - lo[:, None])
    r = lo[:, None, None] + hu[:, :, None] * (1.0 + _GL_X)
    ab_u = _ab(bump(u) * v0)
    ab_r = _ab(bump(r) * v0)
    out = np.empty((len(grid), 3))
    out[0] = g0
    for c in range(3):
        a_r = ab_r[c][0]
        A_u = hu * np.tensordot(a_r, _GL_W, axes=(2, 0))
        A_full = half * (ab_u[c][0] * _GL_W).sum(axis=1)
        src = half * (ab_u[c][1] * np.exp(-(A_full[:, None] - A_u)) * _GL_W).sum(axis=1)
        E = np.exp(-A_full)
        g = float(g0[c])
        col = out[:, c]
        for k in range(len(lo)):
            g = g * E[k] + src[k]
            col[k + 1] = g
    return out


def gating_bridge(x0, t_end: float, grid_dt: float = DEFAULT_GRID_DT) -> np.ndarray:
    """(nbar, mbar, hbar) on the grid ``k * grid_dt``, shape (K + 1, 3)."""
    if t_end < 1.0:
        raise ValueError("t_end must be at least 1")
    x = x0 if isinstance(x0, State5) else State5.from_array(x0)
    return _bridge_on(_grid(t_end, grid_dt), x.v, (x.n, x.m, x.h))


def required_horizon(x0, eps: float, grid_dt: float = DEFAULT_GRID_DT) -> float:
    """Smallest t0 >= 1 with the gating bridge within eps/2 of equilibrium.

    After t = 1 the potential is 0 and each gating deviation decays exactly
    like ``exp(-a(0) (t - 1))``, so the crossing time is found by bisection on
    that closed form.
    """
    if not eps > 0:
        raise HorizonError("radius must be positive: the equilibrium is reached "
                           "only asymptotically", required=math.inf)
    x = x0 if isinstance(x0, State5) else State5.from_array(x0)
    g1 = _bridge_on(_grid(1.0, grid_dt), x.v, (x.n, x.m, x.h))[-1]
    ginf = np.array(model.gating_equilibrium(0.0), dtype=float)
    dev = g1 - ginf
    rates = np.array(decay_rates(0.0))

    def dist(t):
        return float(np.linalg.norm(dev * np.exp(-rates * (t - 1.0))))

    target = 0.5 * eps
    if dist(1.0) < target:
        return 1.0
    hi = 2.0
    while dist(hi) >= target:
        hi = 1.0 + 2.0 * (hi - 1.0)
    lo = 1.0
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if dist(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ControlPath:
    """Designed trajectory on the fine grid ``s`` (spacing ``grid_dt / 2``)."""

    s: np.ndarray
    vbar: np.ndarray
    gating: np.ndarray          # (len(s), 3)
    hdot: np.ndarray
    J: np.ndarray
    eps: float
    t0: float
    grid_dt: float
    x0: State5
    spec: SignalSpec = field(repr=False)

    @property
    def nbar(self):
        return self.gating[:, 0]

    @property
    def mbar(self):
        return self.gating[:, 1]

    @property
    def hbar(self):
        return self.gating[:, 2]

    def coarse(self):
        """Rows (s, vbar, nbar, mbar, hbar, hdot, J) on the grid_dt grid."""
        sl = slice(None, None, 2)
        return np.column_stack([self.s[sl], self.vbar[sl], self.gating[sl],
                                self.hdot[sl], self.J[sl]])

    def energy(self) -> float:
        """int hdot^2 ds by Simpson's rule on the fine grid."""
        f = self.hdot**2
        d = self.s[1] - self.s[0]
        return float(d / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum()))

    def to_csv(self, path) -> None:
        from .sde import write_rows
        write_rows(path, ("s", "vbar", "nbar", "mbar", "hbar", "hdot", "J"), self.coarse())


def _cumulative(f: np.ndarray, d: float) -> np.ndarray:
    """int_0^{s_i} f on a uniform grid with an even number of intervals.

    Simpson at even nodes, a third-order one-interval rule at odd nodes.
    """
    out = np.zeros_like(f)
    pairs = d / 3.0 * (f[:-2:2] + 4.0 * f[1::2] + f[2::2])
    out[2::2] = np.cumsum(pairs)
    out[1::2] = out[:-2:2] + d / 12.0 * (5.0 * f[:-2:2] + 8.0 * f[1::2] - f[2::2])
    return out


def synthesize_control(x0, t_end: float | None, spec: SignalSpec, *,
                       grid_dt: float = DEFAULT_GRID_DT, eps: float = 0.05) -> ControlPath:
    """Build the control steering ``x0`` into the eps-ball around y*.

    ``t_end=None`` picks the required horizon rounded up to the grid.
    """
    x = x0 if isinstance(x0, State5) else State5.from_array(x0)
    t0 = required_horizon(x, eps, grid_dt)
    if t_end is None:
        t_end = grid_dt * math.ceil(t0 / grid_dt - 1e-9)
    if t_end < t0 - 1e-12:
        raise HorizonError(f"horizon {t_end} too short for radius {eps}; need t >= {t0:.6g}",
                           required=t0)
    if spec.gamma <= 0:
        raise ValueError("the control enters through gamma * sqrt(tau); gamma must be > 0")
    d = 0.5 * grid_dt
    s = _grid(t_end, grid_dt)
    s = d * np.arange(2 * (len(s) - 1) + 1)
    vbar = bump(s) * x.v
    gat = _bridge_on(s, x.v, (x.n, x.m, x.h))
    F = model.ionic_current(vbar, gat[:, 0], gat[:, 1], gat[:, 2])
    J = x.zeta + vbar - x.v + _cumulative(F, d)
    S = model.signal_eval(spec, s)
    hdot = (bump_dot(s) * x.v + F + (J - S) * spec.tau) / (spec.gamma * math.sqrt(spec.tau))
    return ControlPath(s, vbar, gat, hdot, J, float(eps), float(t0), float(grid_dt), x, spec)


@dataclass
class ReplayResult:
    terminal: State5
    distance: float           # |(v, n, m, h) - y*| at the end
    gating_distance: float    # |(n, m, h) - gating equilibrium| at the end
    max_deviation: float      # sup over the grid of |(v,n,m,h) - designed|
    zeta_deviation: float     # sup over the grid of |zeta - J|
    states: np.ndarray


def _rhs(t, x, hd, spec, sig, tau):
    v, n, m, h, z = x
    inp = (model.signal_eval(spec, t) - z) * tau
    an, bn = float(model.alpha_n(v)), 0.125 * math.exp(-v / 80.0)
    am, bm = float(model.alpha_m(v)), 4.0 * math.exp(-v / 18.0)
    ah, bh = 0.07 * math.exp(-v / 20.0), 1.0 / (math.exp(3.0 - 0.1 * v) + 1.0)
    F = 36.0 * n**4 * (v + 12.0) + 120.0 * m**3 * h * (v - 120.0) + 0.3 * (v - 10.6)
    u = sig * hd
    return np.array([inp - F + u, an * (1 - n) - bn * n, am * (1 - m) - bm * m,
                     ah * (1 - h) - bh * h, inp + u])


def replay_control(x0, path: ControlPath, spec: SignalSpec | None = None) -> ReplayResult:
    """Integrate the controlled system with RK4 at step ``grid_dt``."""
    spec = path.spec if spec is None else spec
    x = (x0 if isinstance(x0, State5) else State5.from_array(x0)).as_array()
    sig = spec.gamma * math.sqrt(spec.tau)
    tau = spec.tau
    dt = path.grid_dt
    nsteps = (len(path.s) - 1) // 2
    states = np.empty((nsteps + 1, 5))
    states[0] = x
    for k in range(nsteps):
        t = path.s[2 * k]
        h0, h1, h2 = path.hdot[2 * k], path.hdot[2 * k + 1], path.hdot[2 * k + 2]
        k1 = _rhs(t, x, h0, spec, sig, tau)
        k2 = _rhs(t + 0.5 * dt, x + 0.5 * dt * k1, h1, spec, sig, tau)
        k3 = _rhs(t + 0.5 * dt, x + 0.5 * dt * k2, h1, spec, sig, tau)
        k4 = _rhs(t + dt, x + dt * k3, h2, spec, sig, tau)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = x
    designed = np.column_stack([path.vbar, path.gating])[::2]
    dev = float(np.max(np.abs(states[:, :4] - designed)))
    zdev = float(np.max(np.abs(states[:, 4] - path.J[::2])))
    ystar = np.array([0.0, *model.gating_equilibrium(0.0)], dtype=float)
    end = states[-1]
    end_state = State5(end[0], *np.clip(end[1:4], 0.0, 1.0), end[4])
    return ReplayResult(end_state, float(np.linalg.norm(end[:4] - ystar)),
                        float(np.linalg.norm(end[1:4] - ystar[1:])), dev, zdev, states)


def measured_decay_rates(path: ControlPath, floor: float = 1e-10):
    """Slopes of -log|g(t) - g_inf(0)| for t >= 1 on the designed bridge.

    Samples where the deviation has fallen below ``floor`` are dropped.
    """
    ginf = np.array(model.gating_equilibrium(0.0), dtype=float)
    sel = path.s >= 1.0
    out = []
    for c in range(3):
        dev = np.abs(path.gating[sel, c] - ginf[c])
        ok = dev > floor
        if ok.sum() < 3:
            out.append(math.nan)
            continue
        slope = np.polyfit(path.s[sel][ok], np.log(dev[ok]), 1)[0]
        out.append(-float(slope))
    return tuple(out)


@dataclass
class Attainability:
    ok: bool
    t0: float
    eps: float
    distance: float
    replay: ReplayResult
    path: ControlPath


def attainability_check(x0, eps: float, spec: SignalSpec, *,
                        grid_dt: float = DEFAULT_GRID_DT, t_end: float | None = None) -> Attainability:
    """Steer ``x0`` and report whether (v, n, m, h) lands in the eps-ball
    around y*."""
    path = synthesize_control(x0, t_end, spec, grid_dt=grid_dt, eps=eps)
    rep = replay_control(x0, path, spec)
    return Attainability(rep.distance < eps, path.t0, float(eps), rep.distance, rep, path)
