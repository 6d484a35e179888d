"""Euler-Maruyama simulation of the OU-driven HH system, T-skeletons and the
exact Ornstein-Uhlenbeck transition used for validation.

Noise for global step ``j`` of trajectory ``stream`` always comes from
Philox block ``j`` of that stream (see :mod:`hhlab.noise`), so simulating
``[0, a]`` then ``[a, b]`` with the right ``step_offset`` reproduces one
simulation of ``[0, b]`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import kernels, model
from .model import SignalSpec, State5
from .noise import CH_PATH, NoiseStream, normal_matrix

SYSTEMS = ("xihh", "hh")
SCHEMES = ("euler",)
GATING_POLICIES = ("clamp",)

# bound on |F|: |F| <= C1 |v| + C2 with every gating fraction at its max 1
ENVELOPE_C1 = 36.0 + 120.0 + 0.3
ENVELOPE_C2 = 36.0 * 12.0 + 120.0 * 120.0 + 0.3 * 10.6

SPIKE_THRESHOLD = 40.0
SPIKE_DEBOUNCE = 2.0

_CHUNK_CELLS = 1 << 22


class ConfigError(ValueError):
    """Invalid simulation settings."""


class SimulationError(RuntimeError):
    """A path left the finite range.  ``t`` and ``x`` are the last finite
    time and state before the blow-up."""

    def __init__(self, msg, t=None, x=None, stream=None):
        super().__init__(msg)
        self.t = t
        self.x = x
        self.stream = stream


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings.

    ``system`` selects the OU-driven five-dimensional system (``"xihh"``) or
    the classical HH equations with ``S(t)`` injected directly as current
    (``"hh"``; zeta is carried along unchanged).
    """

    dt: float = 0.005
    t_end: float = 100.0
    seed: int = 0
    scheme: str = "euler"
    gating_policy: str = "clamp"
    system: str = "xihh"

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ConfigError("t_end must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.gating_policy not in GATING_POLICIES:
            raise ConfigError(f"gating_policy must be one of {GATING_POLICIES}")
        if self.system not in SYSTEMS:
            raise ConfigError(f"system must be one of {SYSTEMS}")

    def n_steps(self, horizon: float | None = None) -> int:
        """Number of steps covering ``horizon`` (default ``t_end``) exactly."""
        return steps_for(self.t_end if horizon is None else horizon, self.dt)

    def with_(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)

    @property
    def mode(self) -> int:
        return SYSTEMS.index(self.system)


def steps_for(horizon: float, dt: float) -> int:
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ConfigError(f"horizon {horizon} is not an integer multiple of dt={dt}")
    return n


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (len(times), 5)
    seed: int
    stream: int
    config: SimConfig
    spec: SignalSpec = field(repr=False, default=None)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> State5:
        return State5.from_array(self.states[i])

    @property
    def last(self) -> State5:
        return self.state(-1)

    def to_csv(self, path) -> None:
        write_rows(path, ("t", "v", "n", "m", "h", "zeta"),
                   np.column_stack([self.times, self.states]))


def write_rows(path, header, rows) -> None:
    """CSV with ``repr``-exact floats, so reruns are byte-identical."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        arr = np.asarray(rows, dtype=float)
        if arr.size == 0:
            return
        for row in arr.reshape(len(arr), -1):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


# --------------------------------------------------------------------------
# single steps

def step_euler(t: float, x, dt: float, dW: float, spec: SignalSpec, *,
               system: str = "xihh") -> State5:
    """One Euler-Maruyama step with Brownian increment ``dW`` (variance dt).

    The same increment drives v and zeta.  Gating fractions are clamped to
    [0, 1] afterwards.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    xa = x.as_array() if isinstance(x, State5) else np.asarray(x, dtype=float)
    b = model.drift(t, xa, spec)
    sig = spec.gamma * math.sqrt(spec.tau)
    new = xa + b * dt
    if system == "hh":
        new[0] = xa[0] + (model.signal_eval(spec, t) - model.ionic_current(*xa[:4])) * dt
        new[4] = xa[4]
        new[0] += sig * dW
    else:
        new[0] += sig * dW
        new[4] += sig * dW
    if not np.all(np.isfinite(new)):
        raise SimulationError(f"non-finite state after step at t={t}", t=t, x=xa.copy())
    new[1:4] = np.clip(new[1:4], 0.0, 1.0)
    return State5.from_array(new)


# --------------------------------------------------------------------------
# batch engine

def advance(x, spec: SignalSpec, cfg: SimConfig, streams, step0: int, nsteps: int, *,
            record_every: int = 0, record_first: bool = False):
    """Advance paths ``x`` (N, 5) from global step ``step0`` by ``nsteps``.

    Path ``i`` uses noise stream ``streams[i]``.  Returns the final states and,
    when ``record_every > 0``, the states after every ``record_every`` steps
    as an array (N, K, 5) (with the initial state prepended if
    ``record_first``).
    """
    x = np.array(x, dtype=float, order="C").reshape(-1, 5)
    streams = np.asarray(streams, dtype=np.int64).ravel()
    if len(streams) != len(x):
        raise ValueError("one stream id per path")
    N = len(x)
    sig = spec.gamma * math.sqrt(spec.tau)
    rec = None
    if record_every:
        if nsteps % record_every:
            raise ConfigError("record_every must divide the number of steps")
        n_rec = nsteps // record_every
        rec = np.empty((N, n_rec + int(record_first), 5))
        if record_first:
            rec[:, 0] = x
    chunk = max(record_every or 1, min(nsteps, _CHUNK_CELLS // max(N, 1)))
    if record_every:
        chunk -= chunk % record_every
    done = 0
    k = int(record_first)
    while done < nsteps:
        n = min(chunk, nsteps - done)
        g0 = step0 + done
        s_vals = np.ascontiguousarray(model.signal_eval(spec, (g0 + np.arange(n)) * cfg.dt),
                                      dtype=float).reshape(n)
        z = normal_matrix(cfg.seed, streams, g0, n, CH_PATH) if sig else np.zeros((N, n))
        out = None
        if rec is not None:
            out = np.empty((N, n // record_every, 5))
        start = x.copy()
        bad = kernels.em_advance(x, s_vals, z, cfg.dt, spec.tau, sig, cfg.mode,
                                 out, record_every or 1)
        if bad >= 0:
            _raise_blowup(start[bad], s_vals, z[bad], g0, cfg, spec, sig, int(streams[bad]))
        if out is not None:
            rec[:, k:k + out.shape[1]] = out
            k += out.shape[1]
        done += n
    return (x, rec) if record_every else x


def _raise_blowup(x0, s_vals, z, g0, cfg, spec, sig, stream):
    x = x0.reshape(1, 5).copy()
    out = np.empty((1, len(s_vals), 5))
    kernels.python_em_advance(x, s_vals, z.reshape(1, -1), cfg.dt, spec.tau, sig,
                              cfg.mode, out, 1)
    path = np.vstack([x0.reshape(1, 5), out[0]])
    ok = np.all(np.isfinite(path), axis=1)
    j = int(np.argmin(ok)) - 1 if not ok.all() else len(path) - 1
    raise SimulationError(
        f"path {stream} became non-finite after t={(g0 + j) * cfg.dt:.6g}",
        t=(g0 + j) * cfg.dt, x=path[j].copy(), stream=stream)


def simulate(x0, cfg: SimConfig, spec: SignalSpec, *, stream: int = 0,
             step_offset: int = 0, record_every: int = 1) -> Trajectory:
    """One path on ``[t0, t0 + t_end]`` with ``t0 = step_offset * dt``."""
    xa = x0.as_array() if isinstance(x0, State5) else np.asarray(x0, dtype=float)
    State5.from_array(xa)
    n = cfg.n_steps()
    if n % record_every:
        raise ConfigError("record_every must divide the number of steps")
    _, rec = advance(xa[None], spec, cfg, [stream], step_offset, n,
                     record_every=record_every, record_first=True) if n else (None, xa[None, None])
    times = (step_offset + record_every * np.arange(rec.shape[1])) * cfg.dt
    return Trajectory(times, rec[0], int(cfg.seed), int(stream), cfg, spec)


def simulate_batch(x0s, cfg: SimConfig, spec: SignalSpec, *, streams=None,
                   step_offset: int = 0, record_every: int = 0):
    """Many paths at once; ``streams`` defaults to ``0..N-1``."""
    x0s = np.asarray(x0s, dtype=float).reshape(-1, 5)
    if streams is None:
        streams = np.arange(len(x0s))
    return advance(x0s, spec, cfg, streams, step_offset, cfg.n_steps(),
                   record_every=record_every, record_first=bool(record_every))


def steps_per_period(cfg: SimConfig, spec: SignalSpec) -> int:
    return steps_for(spec.period, cfg.dt)


def skeleton(x0, k_max: int, cfg: SimConfig, spec: SignalSpec, *, stream: int = 0,
             step_offset: int = 0) -> np.ndarray:
    """States at ``t0 + kT`` for k = 0..k_max, shape (k_max + 1, 5)."""
    xa = x0.as_array() if isinstance(x0, State5) else np.asarray(x0, dtype=float)
    return skeleton_batch(xa[None], k_max, cfg, spec, streams=[stream],
                          step_offset=step_offset)[0]


def skeleton_batch(x0s, k_max: int, cfg: SimConfig, spec: SignalSpec, *, streams=None,
                   step_offset: int = 0) -> np.ndarray:
    """T-skeletons of many paths, shape (N, k_max + 1, 5)."""
    if k_max < 0:
        raise ConfigError("k_max must be non-negative")
    per = steps_per_period(cfg, spec)
    x0s = np.asarray(x0s, dtype=float).reshape(-1, 5)
    if streams is None:
        streams = np.arange(len(x0s))
    if k_max == 0:
        return x0s[:, None, :].copy()
    _, rec = advance(x0s, spec, cfg, streams, step_offset, per * k_max,
                     record_every=per, record_first=True)
    return rec


def period_map(x0s, cfg: SimConfig, spec: SignalSpec, *, streams, phase_steps: int = 0,
               n_periods: int = 1) -> np.ndarray:
    """X_{s + n T} from X_s = x0s, with s = phase_steps * dt."""
    per = steps_per_period(cfg, spec)
    return advance(np.asarray(x0s, dtype=float), spec, cfg, streams, phase_steps,
                   per * n_periods)


# --------------------------------------------------------------------------
# envelope and spikes

def envelope_margin(traj: Trajectory) -> float:
    """Smallest slack of the a-priori bound

    ``|v_t| <= |v_0 - zeta_0 + zeta_t| + C1 * sum |v_k| dt + C2 * t``

    along a recorded path (every step recorded).  Negative means violated.
    Since ``v - zeta`` changes by exactly ``-F dt`` per Euler step of the
    OU-driven system and ``|F| <= C1 |v| + C2`` on the gating box, the bound
    holds for the discrete path too.
    """
    v = traj.states[:, 0]
    z = traj.states[:, 4]
    dt = traj.config.dt
    t = traj.times - traj.times[0]
    integ = np.concatenate([[0.0], np.cumsum(np.abs(v[:-1])) * dt])
    rhs = np.abs(v[0] - z[0] + z) + ENVELOPE_C1 * integ + ENVELOPE_C2 * t
    return float(np.min(rhs - np.abs(v)))


def spike_times(times, v, *, threshold: float = SPIKE_THRESHOLD,
                debounce: float = SPIKE_DEBOUNCE) -> np.ndarray:
    """Upward crossings of ``threshold``; crossings within ``debounce`` ms of
    the previous counted spike are ignored."""
    v = np.asarray(v, dtype=float)
    times = np.asarray(times, dtype=float)
    idx = np.flatnonzero((v[:-1] < threshold) & (v[1:] >= threshold)) + 1
    out = []
    for i in idx:
        if not out or times[i] - out[-1] >= debounce:
            out.append(times[i])
    return np.array(out)


# --------------------------------------------------------------------------
# exact OU machinery

@lru_cache(maxsize=4096)
def _ou_shift_quad(spec: SignalSpec, s: float, t: float) -> float:
    tau = spec.tau
    if spec.is_constant:
        return spec.c0 * (-math.expm1(-tau * (t - s)))
    f = lambda u: math.exp(-tau * (t - u)) * model.signal_eval(spec, u)
    limit = max(50, int(4 * (t - s) / spec.period) + 50)
    val, _ = integrate.quad(f, s, t, epsabs=1e-13, epsrel=1e-12, limit=limit)
    return tau * val


def ou_transition(s: float, t: float, spec: SignalSpec):
    """(decay, shift, sd) with xi_t = decay * xi_s + shift + sd * Z."""
    if not t > s:
        raise ValueError("need t > s")
    d = t - s
    decay = math.exp(-spec.tau * d)
    shift = _ou_shift_quad(spec, float(s), float(t))
    sd = spec.gamma * math.sqrt(-math.expm1(-2.0 * spec.tau * d) / 2.0)
    return decay, shift, sd


def ou_exact_step(xi, s: float, t: float, spec: SignalSpec, z):
    """Exact OU transition from time ``s`` to ``t`` driven by normals ``z``."""
    decay, shift, sd = ou_transition(s, t, spec)
    out = decay * np.asarray(xi, dtype=float) + shift + sd * np.asarray(z, dtype=float)
    return out if out.ndim else float(out)


def ou_skeleton(xi0, k_max: int, spec: SignalSpec, seed: int, *, streams=None,
                phase: float = 0.0) -> np.ndarray:
    """Exact T-skeleton of the OU input alone, shape (N, k_max + 1)."""
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    if streams is None:
        streams = np.arange(len(xi0))
    decay, shift, sd = ou_transition(phase, phase + spec.period, spec)
    z = normal_matrix(seed, streams, 0, k_max)
    out = np.empty((len(xi0), k_max + 1))
    out[:, 0] = xi0
    for k in range(k_max):
        out[:, k + 1] = decay * out[:, k] + shift + sd * z[:, k]
    return out


def m_moving_average(spec: SignalSpec, s, *, method: str = "quad"):
    """M(s) = int_0^inf S(s - r/tau) e^{-r} dr.

    ``method="quad"`` integrates over r in [0, 40]; ``"closed"`` uses the
    closed form for trigonometric signals.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if method == "closed":
        w = 2.0 * np.pi / spec.period
        out = np.full(s_arr.shape, spec.c0)
        for j, a, b in spec.harmonics():
            kap = j * w / spec.tau
            ph = j * w * s_arr
            out += (a * (np.cos(ph) + kap * np.sin(ph))
                    + b * (np.sin(ph) - kap * np.cos(ph))) / (1.0 + kap * kap)
    elif method == "quad":
        out = np.empty(s_arr.shape)
        for i, si in enumerate(s_arr.ravel()):
            f = lambda r: model.signal_eval(spec, si - r / spec.tau) * math.exp(-r)
            out.flat[i] = integrate.quad(f, 0.0, 40.0, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    else:
        raise ValueError("method must be 'quad' or 'closed'")
    return out if np.ndim(s) else float(out[0])


def ou_stationary_sample(spec: SignalSpec, n: int, seed: int, *, phase: float = 0.0,
                         channel: int = 1) -> np.ndarray:
    """Draws from N(M(phase), gamma^2 / 2), the stationary law of xi at
    phases ``phase + kT``."""
    z = NoiseStream(seed, 0, channel).normals(0, n)
    return m_moving_average(spec, phase) + spec.gamma / math.sqrt(2.0) * z


@dataclass
class OUStationarity:
    k: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    variance: np.ndarray
    stationary_mean: float
    stationary_variance: float

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.mean - self.stationary_mean) / self.se))

    @property
    def max_rel_var_error(self) -> float:
        return float(np.max(np.abs(self.variance - self.stationary_variance))
                     / self.stationary_variance)

    def passes(self, z_max: float = 3.0, var_tol: float = 0.05) -> bool:
        return self.max_abs_z <= z_max and self.max_rel_var_error <= var_tol


def ou_stationarity_check(spec: SignalSpec, n_paths: int, k_max: int, seed: int, *,
                          start_mean: float, start_var: float) -> OUStationarity:
    """Exact OU skeleton from N(start_mean, start_var): per-k sample mean,
    its standard error and the sample variance, against N(M(0), gamma^2/2)."""
    xi0 = start_mean + math.sqrt(start_var) * normal_matrix(seed, [0], 0, n_paths, channel=1)[0]
    sk = ou_skeleton(xi0, k_max, spec, seed)
    mean = sk.mean(axis=0)
    var = sk.var(axis=0, ddof=1)
    return OUStationarity(np.arange(k_max + 1), mean, np.sqrt(var / n_paths), var,
                          m_moving_average(spec, 0.0), spec.gamma**2 / 2.0)
