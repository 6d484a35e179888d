"""Hodgkin-Huxley coefficients and the drift/diffusion fields of the
OU-driven five-dimensional system.

State coordinates are ``(v, n, m, h, zeta)``: membrane potential (mV), the
three gating fractions, and the dendritic input level (mV).  Time is in ms.
All functions accept scalars or numpy arrays unless stated otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

G_K = 36.0
G_NA = 120.0
G_L = 0.3
E_K = -12.0
E_NA = 120.0
E_L = 10.6

GATING_CLIP = 1e-12
# |u| below this switches u/(e^u - 1) to its Bernoulli series
SINGULARITY_WINDOW = 1e-3

V_SEARCH_LO = -100.0
V_SEARCH_HI = 200.0


class ModelDomainError(ValueError):
    """Raised for non-finite potentials or out-of-range states."""


class InputRangeError(ValueError):
    """Raised when an input level has no equilibrium in the search interval."""


@dataclass(frozen=True)
class HHConstants:
    g_K: float = G_K
    g_Na: float = G_NA
    g_L: float = G_L
    E_K: float = E_K
    E_Na: float = E_NA
    E_L: float = E_L


CONSTANTS = HHConstants()


@dataclass(frozen=True)
class State5:
    """One point ``(v, n, m, h, zeta)`` of the state space R x [0,1]^3 x R.

    Gating values within ``GATING_CLIP`` of the unit interval are clamped;
    anything further out is rejected.
    """

    v: float
    n: float
    m: float
    h: float
    zeta: float

    def __post_init__(self):
        for name in ("v", "zeta"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ModelDomainError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)
        for name in ("n", "m", "h"):
            val = float(getattr(self, name))
            if not (-GATING_CLIP <= val <= 1.0 + GATING_CLIP):
                raise ModelDomainError(f"gating {name}={val} outside [0, 1]")
            object.__setattr__(self, name, min(max(val, 0.0), 1.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.n, self.m, self.h, self.zeta])

    @classmethod
    def from_array(cls, x) -> "State5":
        x = np.asarray(x, dtype=float)
        return cls(*(float(c) for c in x[:5]))

    def replace(self, **kw) -> "State5":
        d = dict(v=self.v, n=self.n, m=self.m, h=self.h, zeta=self.zeta)
        d.update(kw)
        return State5(**d)


@dataclass(frozen=True)
class SignalSpec:
    """T-periodic input ``S(t) = c0 + sum_j a_j cos(2 pi j t/T) + b_j sin(2 pi j t/T)``
    together with the OU speed ``tau`` and spread ``gamma``.

    ``cos_coeffs[j-1]`` and ``sin_coeffs[j-1]`` hold the coefficients of
    harmonic ``j``.
    """

    period: float = 10.0
    c0: float = 0.0
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()
    tau: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        for name in ("period", "c0", "tau", "gamma"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError("period must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        object.__setattr__(self, "cos_coeffs", tuple(float(a) for a in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(b) for b in self.sin_coeffs))

    @property
    def n_harmonics(self) -> int:
        return max(len(self.cos_coeffs), len(self.sin_coeffs))

    def harmonics(self):
        """Yield ``(j, a_j, b_j)`` for j = 1..n_harmonics."""
        k = self.n_harmonics
        a = self.cos_coeffs + (0.0,) * (k - len(self.cos_coeffs))
        b = self.sin_coeffs + (0.0,) * (k - len(self.sin_coeffs))
        for j in range(1, k + 1):
            yield j, a[j - 1], b[j - 1]

    @property
    def is_constant(self) -> bool:
        return not any(self.cos_coeffs) and not any(self.sin_coeffs)

    def with_(self, **kw) -> "SignalSpec":
        d = dict(period=self.period, c0=self.c0, cos_coeffs=self.cos_coeffs,
                 sin_coeffs=self.sin_coeffs, tau=self.tau, gamma=self.gamma)
        d.update(kw)
        return SignalSpec(**d)

    @classmethod
    def constant(cls, c: float, *, period: float = 10.0, tau: float = 0.5,
                 gamma: float = 2.0) -> "SignalSpec":
        return cls(period=period, c0=c, tau=tau, gamma=gamma)


def signal_eval(spec: SignalSpec, t):
    """Evaluate S(t).  The phase is reduced modulo T first so the result is
    periodic up to rounding of the argument."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, spec.c0)
    if spec.n_harmonics:
        phase = 2.0 * np.pi * np.mod(t, spec.period) / spec.period
        for j, a, b in spec.harmonics():
            if a:
                out = out + a * np.cos(j * phase)
            if b:
                out = out + b * np.sin(j * phase)
    return out if out.ndim else float(out)


def signal_derivative(spec: SignalSpec, t):
    """dS/dt."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    w = 2.0 * np.pi / spec.period
    phase = w * np.mod(t, spec.period)
    for j, a, b in spec.harmonics():
        out = out + j * w * (-a * np.sin(j * phase) + b * np.cos(j * phase))
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# rate functions

def expm1_ratio(u):
    """u / (e^u - 1), analytic through u = 0."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < SINGULARITY_WINDOW
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = u / np.expm1(u)
    u2 = u * u
    series = 1.0 - 0.5 * u + u2 / 12.0 - u2 * u2 / 720.0 + u2 * u2 * u2 / 30240.0
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def _check_finite(v):
    if not np.all(np.isfinite(v)):
        raise ModelDomainError("membrane potential must be finite")


def alpha_n(v):
    return 0.1 * expm1_ratio(1.0 - 0.1 * np.asarray(v, dtype=float))


def beta_n(v):
    return 0.125 * np.exp(-np.asarray(v, dtype=float) / 80.0)


def alpha_m(v):
    return expm1_ratio(2.5 - 0.1 * np.asarray(v, dtype=float))


def beta_m(v):
    return 4.0 * np.exp(-np.asarray(v, dtype=float) / 18.0)


def alpha_h(v):
    return 0.07 * np.exp(-np.asarray(v, dtype=float) / 20.0)


def beta_h(v):
    with np.errstate(over="ignore"):
        return 1.0 / (np.exp(3.0 - 0.1 * np.asarray(v, dtype=float)) + 1.0)


class GatingRates(NamedTuple):
    alpha_n: float
    beta_n: float
    alpha_m: float
    beta_m: float
    alpha_h: float
    beta_h: float


def rates(v) -> GatingRates:
    """All six opening/closing rates at potential ``v``."""
    _check_finite(v)
    with np.errstate(over="ignore"):
        return GatingRates(alpha_n(v), beta_n(v), alpha_m(v), beta_m(v),
                           alpha_h(v), beta_h(v))


def gating_equilibrium(v):
    """(n_inf, m_inf, h_inf) at potential ``v``."""
    r = rates(v)
    return (r.alpha_n / (r.alpha_n + r.beta_n),
            r.alpha_m / (r.alpha_m + r.beta_m),
            r.alpha_h / (r.alpha_h + r.beta_h))


def ionic_current(v, n, m, h):
    """F(v, n, m, h): potassium, sodium and leak currents."""
    v = np.asarray(v, dtype=float)
    return (G_K * n**4 * (v - E_K) + G_NA * m**3 * h * (v - E_NA)
            + G_L * (v - E_L))


def ionic_current_dv(n, m, h):
    """dF/dv, which does not depend on v."""
    return G_K * np.asarray(n)**4 + G_NA * np.asarray(m)**3 * h + G_L


def f_infinity(v):
    """F evaluated on the gating-equilibrium curve."""
    n, m, h = gating_equilibrium(v)
    return ionic_current(v, n, m, h)


def equilibrium_for_input(c: float, *, tol: float = 1e-10,
                          lo: float = V_SEARCH_LO, hi: float = V_SEARCH_HI) -> float:
    """Potential v with f_infinity(v) = c, by bisection on [lo, hi]."""
    if not math.isfinite(c):
        raise InputRangeError("input level must be finite")
    f_lo = float(f_infinity(lo)) - c
    f_hi = float(f_infinity(hi)) - c
    if f_lo > 0 or f_hi < 0:
        raise InputRangeError(
            f"input {c} outside [{f_lo + c:.6g}, {f_hi + c:.6g}] covered by "
            f"v in [{lo}, {hi}]")
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if float(f_infinity(mid)) - c > 0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def rest_state(v: float = 0.0, zeta: float = 0.0) -> State5:
    """State with gating at equilibrium for potential ``v``."""
    n, m, h = gating_equilibrium(v)
    return State5(v, float(n), float(m), float(h), zeta)


# --------------------------------------------------------------------------
# fields of the five-dimensional system

def drift(t, x, spec: SignalSpec):
    """Drift (b1..b5) at time ``t`` and state ``x`` (State5 or array (..., 5))."""
    if isinstance(x, State5):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    v, n, m, h, z = (x[..., i] for i in range(5))
    s = signal_eval(spec, t)
    inp = (s - z) * spec.tau
    r = rates(v)
    out = np.empty(np.broadcast(v, np.asarray(s)).shape + (5,))
    out[..., 0] = inp - ionic_current(v, n, m, h)
    out[..., 1] = r.alpha_n * (1.0 - n) - r.beta_n * n
    out[..., 2] = r.alpha_m * (1.0 - m) - r.beta_m * m
    out[..., 3] = r.alpha_h * (1.0 - h) - r.beta_h * h
    out[..., 4] = inp
    return out


def diffusion(spec: SignalSpec) -> np.ndarray:
    """Constant diffusion column gamma*sqrt(tau)*(1, 0, 0, 0, 1)."""
    s = spec.gamma * math.sqrt(spec.tau)
    return np.array([s, 0.0, 0.0, 0.0, s])


def as_states(xs: Sequence) -> np.ndarray:
    """Stack State5 objects or rows into an (N, 5) float array."""
    rows = [x.as_array() if isinstance(x, State5) else np.asarray(x, float) for x in xs]
    return np.array(rows, dtype=float).reshape(-1, 5)
