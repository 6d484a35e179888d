"""Ergodicity diagnostics for the T-skeleton chain.

* a smoothed Lyapunov function ``Phi = |v| + zeta^2`` with its generator and
  a Monte Carlo check of the one-period drift ``P_{0,T} Phi - Phi``;
* minorization balls ``P(x, dy) >= beta 1_B(x)(x) nu(dy)`` from a conditional
  kernel density estimate of the skeleton transition;
* split chains that restart from ``nu`` at regeneration times, and the
  cycle-average estimator of the invariant law built on them;
* multi-start and periodic-invariance comparisons of empirical laws.

Balls live in whitened coordinates ``z = W (x - mean)``: a ball of radius eps
is the ellipsoid ``|W (x - c)| <= eps`` in state space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist
from scipy.special import gammaln

from . import model, sde
from .model import SignalSpec, State5
from .noise import CH_BOOT, CH_INIT, CH_RESTART, CH_UNIFORM, NoiseStream, _key, normal_matrix
from .sde import SimConfig


class InsufficientDataError(RuntimeError):
    """Too few regeneration cycles, ball visits or samples."""


class NoBallError(InsufficientDataError):
    """No minorization ball passed the density lower bound."""


# --------------------------------------------------------------------------
# Lyapunov function

@dataclass(frozen=True)
class LyapunovConfig:
    """``Phi(x) = q(v) + zeta^2 + offset`` with q = |v| for |v| >= smoothing.

    On ``|v| < smoothing`` q is the even quartic matching |v| to second order
    at the joins.  ``offset`` lifts the minimum to 1.
    """

    smoothing: float = 2.0
    mc: int = 5000
    points: tuple = ()

    def __post_init__(self):
        if not self.smoothing > 0:
            raise ValueError("smoothing radius must be positive")

    @property
    def offset(self) -> float:
        return max(0.0, 1.0 - 3.0 * self.smoothing / 8.0)


def _q(v, r):
    a = np.abs(v)
    inner = 3.0 * r / 8.0 + 3.0 / (4.0 * r) * v * v - v**4 / (8.0 * r**3)
    return np.where(a >= r, a, inner)


def _dq(v, r):
    return np.where(np.abs(v) >= r, np.sign(v), 3.0 / (2.0 * r) * v - v**3 / (2.0 * r**3))


def _d2q(v, r):
    return np.where(np.abs(v) >= r, 0.0, 3.0 / (2.0 * r) - 3.0 * v * v / (2.0 * r**3))


def _arr(x):
    if isinstance(x, State5):
        return x.as_array()
    return np.asarray(x, dtype=float)


def lyapunov_phi(x, cfg: LyapunovConfig = LyapunovConfig()):
    """Phi at states ``x`` (State5 or array (..., 5))."""
    x = _arr(x)
    out = _q(x[..., 0], cfg.smoothing) + x[..., 4] ** 2 + cfg.offset
    return out if np.ndim(out) else float(out)


def generator_phi(t, x, spec: SignalSpec, cfg: LyapunovConfig = LyapunovConfig()):
    """L_t Phi = q'(v) b1 + 2 zeta b5 + gamma^2 tau (q''(v) + 2) / 2.

    The mixed v-zeta second derivative of Phi vanishes and Phi does not
    depend on the gating variables.
    """
    x = _arr(x)
    b = model.drift(t, x, spec)
    v, z = x[..., 0], x[..., 4]
    r = cfg.smoothing
    out = (_dq(v, r) * b[..., 0] + 2.0 * z * b[..., 4]
           + 0.5 * spec.gamma**2 * spec.tau * (_d2q(v, r) + 2.0))
    return out if np.ndim(out) else float(out)


@dataclass
class GeneratorFit:
    c1: float
    c2: float
    worst_outer_ratio: float
    validation_max: float      # max of L + c1 Phi - c2 on fresh outer points (<= 0 is good)
    n_outer: int
    n_total: int


def fit_generator_constants(spec: SignalSpec, cfg: LyapunovConfig = LyapunovConfig(), *,
                            outer=(50.0, 200.0), n_side: int = 16, seed: int = 0) -> GeneratorFit:
    """Fit ``L_t Phi <= -c1 Phi + c2`` on a grid.

    c1 is half the smallest ``-L Phi / Phi`` on the outermost shell
    ``max(|v|, |zeta|) = outer[1]``; c2 is the largest positive part of
    ``L Phi + c1 Phi`` over the grid points with |v| or |zeta| in ``outer``.
    Sodium-open states with v below E_Na make ``L Phi`` large and positive on
    a bounded v-range, so c2 is what absorbs them.  The fit is then checked
    on fresh random outer points.
    """
    lo, hi = outer
    mag = np.linspace(lo, hi, n_side)
    inner = np.linspace(-hi, hi, 2 * n_side + 1)
    v_vals = np.concatenate([-mag[::-1], inner, mag])
    z_vals = v_vals
    gates = np.array([0.0, 0.5, 1.0])
    times = spec.period * np.arange(4) / 4.0
    V, Z, N, M, H, Tt = np.meshgrid(v_vals, z_vals, gates, gates, gates, times, indexing="ij")
    X = np.stack([V, N, M, H, Z], axis=-1).reshape(-1, 5)
    T = Tt.ravel()
    L = generator_phi(T, X, spec, cfg)
    phi = lyapunov_phi(X, cfg)
    out_mask = (np.abs(X[:, 0]) >= lo) | (np.abs(X[:, 4]) >= lo)
    shell = np.maximum(np.abs(X[:, 0]), np.abs(X[:, 4])) >= hi
    ratio = float(np.min(-L[shell] / phi[shell]))
    if ratio <= 0:
        raise InsufficientDataError(f"generator not dominated on the outer shell (ratio {ratio:.3g})")
    c1 = 0.5 * ratio
    c2 = float(max(0.0, np.max((L + c1 * phi)[out_mask])))
    rng = np.random.Generator(np.random.Philox(key=seed))
    n_val = 20000
    side = rng.integers(0, 2, n_val)
    big = rng.uniform(lo, hi, n_val) * rng.choice([-1.0, 1.0], n_val)
    other = rng.uniform(-hi, hi, n_val)
    Xv = np.column_stack([np.where(side == 0, big, other), rng.uniform(0, 1, (n_val, 3)),
                          np.where(side == 1, big, other)])
    Tv = rng.uniform(0, spec.period, n_val)
    resid = generator_phi(Tv, Xv, spec, cfg) + c1 * lyapunov_phi(Xv, cfg) - c2
    return GeneratorFit(c1, c2, ratio, float(np.max(resid)), int(out_mask.sum()), len(X))


@dataclass
class DriftPoint:
    x: np.ndarray
    estimate: float
    se: float

    @property
    def negative(self) -> bool:
        """estimate + 3 SE < 0."""
        return self.estimate + 3.0 * self.se < 0.0


def skeleton_drift_check(points, mc: int, cfg: LyapunovConfig, spec: SignalSpec, seed: int, *,
                         sim: SimConfig | None = None, stream_base: int = 0) -> list:
    """Monte Carlo estimate of ``P_{0,T} Phi(x) - Phi(x)`` at each point.

    Point i uses noise streams ``stream_base + i*mc + j`` for its ``mc`` paths.
    """
    if mc < 1000:
        raise ValueError("mc must be at least 1000")
    sim = SimConfig(seed=seed) if sim is None else sim.with_(seed=seed)
    out = []
    for i, p in enumerate(points):
        x = _arr(p)
        streams = stream_base + i * mc + np.arange(mc)
        end = sde.period_map(np.tile(x, (mc, 1)), sim, spec, streams=streams)
        d = lyapunov_phi(end, cfg) - lyapunov_phi(x, cfg)
        out.append(DriftPoint(x.copy(), float(d.mean()), float(d.std(ddof=1) / math.sqrt(mc))))
    return out


def ring_points(r: float, gating=None) -> np.ndarray:
    """Eight points with max(|v|, |zeta|) = r, gating at rest values."""
    g = np.array(model.gating_equilibrium(0.0), dtype=float) if gating is None else gating
    vz = [(r, 0), (-r, 0), (0, r), (0, -r), (r, r), (-r, -r), (r, -r), (-r, r)]
    return np.array([[v, *g, z] for v, z in vz], dtype=float)


@dataclass
class CompactScan:
    C2: float
    radii: tuple
    results: dict              # radius -> list of DriftPoint


def find_compact(spec: SignalSpec, cfg: LyapunovConfig, seed: int, *,
                 radii=(5.0, 10.0, 20.0, 40.0, 60.0, 100.0, 200.0), mc: int = 2000,
                 sim: SimConfig | None = None) -> CompactScan:
    """Scan rings of growing radius; C2 is the largest radius at which some
    ring point failed the drift test (0 if none did)."""
    results = {}
    C2 = 0.0
    for j, r in enumerate(radii):
        pts = ring_points(r)
        res = skeleton_drift_check(pts, mc, cfg, spec, seed, sim=sim,
                                   stream_base=j * len(pts) * mc)
        results[float(r)] = res
        if not all(p.negative for p in res):
            C2 = float(r)
    return CompactScan(C2, tuple(float(r) for r in radii), results)


def outside_compact(x, C2: float) -> bool:
    x = _arr(x)
    return bool(abs(x[0]) > C2 or abs(x[4]) > C2)


# --------------------------------------------------------------------------
# minorization

def _unit_ball_volume(d: int) -> float:
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0))


@dataclass
class Whitening:
    mean: np.ndarray
    W: np.ndarray          # z = W (x - mean)
    L: np.ndarray          # x = mean + L z

    @classmethod
    def fit(cls, X) -> "Whitening":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        cov = np.atleast_2d(np.cov(X, rowvar=False))
        cov = cov + 1e-12 * np.trace(cov) / len(cov) * np.eye(len(cov))
        L = np.linalg.cholesky(cov)
        return cls(mean, np.linalg.inv(L), L)

    @classmethod
    def identity(cls, d: int) -> "Whitening":
        return cls(np.zeros(d), np.eye(d), np.eye(d))

    def __call__(self, X):
        return (np.asarray(X, dtype=float) - self.mean) @ self.W.T

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) @ self.L.T + self.mean

    @property
    def log_det_L(self) -> float:
        return float(np.sum(np.log(np.abs(np.diag(self.L)))))


@dataclass
class MinorizationBall:
    """``P(x, dy) >= beta 1_{B(x_center)}(x) nu(dy)`` with nu uniform on
    ``B(y_center)``; both balls have whitened radius ``eps``."""

    x_center: np.ndarray
    y_center: np.ndarray
    eps: float
    beta: float
    whitening: Whitening = field(repr=False)
    density_lb: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not self.eps > 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.x_center)

    def _dist(self, X, c):
        return np.linalg.norm((np.asarray(X, dtype=float) - c) @ self.whitening.W.T, axis=-1)

    def contains_x(self, X):
        return self._dist(X, self.x_center) <= self.eps

    def contains_y(self, X):
        return self._dist(X, self.y_center) <= self.eps

    @property
    def volume(self) -> float:
        """Lebesgue measure of B(y_center) in state coordinates."""
        return _unit_ball_volume(self.dim) * self.eps**self.dim * math.exp(self.whitening.log_det_L)

    def sample_nu(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        d = self.dim
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.eps * rng.uniform(size=(n, 1)) ** (1.0 / d)
        return self.y_center + (r * g) @ self.whitening.L.T


class ConditionalDensity:
    """Kernel estimate of the transition density in whitened coordinates.

    ``p(y | x) = sum_i K_hx(x - X_i) K_hy(y - Y_i) / sum_i K_hx(x - X_i)`` with
    Gaussian product kernels.  Values are densities with respect to whitened
    Lebesgue measure.
    """

    def __init__(self, X, Y, *, bandwidth=None, whitening: Whitening | None = None,
                 min_weight: float = 20.0):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim == 1:
            X, Y = X[:, None], Y[:, None]
        if len(X) != len(Y) or len(X) < 10:
            raise InsufficientDataError("need at least 10 transition pairs")
        self.whitening = Whitening.fit(X) if whitening is None else whitening
        self.Zx = self.whitening(X)
        self.Zy = self.whitening(Y)
        n, d = self.Zx.shape
        self.dim = d
        self.h = float(bandwidth) if bandwidth else n ** (-1.0 / (2 * d + 4))
        self.min_weight = min_weight

    def _kern(self, P, Z):
        d2 = cdist(P, Z, "sqeuclidean")
        return np.exp(-0.5 * d2 / self.h**2) / (2.0 * math.pi * self.h**2) ** (self.dim / 2)

    def matrix(self, Px, Py):
        """p(y | x) for all whitened probe pairs, shape (len(Px), len(Py)).

        Rows whose kernel weight (effective neighbour count) falls below
        ``min_weight`` are set to 0: the estimate there is not trusted.
        """
        Kx = np.exp(-0.5 * cdist(Px, self.Zx, "sqeuclidean") / self.h**2)
        Ky = self._kern(Py, self.Zy)
        wsum = Kx.sum(axis=1)
        out = (Kx @ Ky.T) / np.where(wsum > 0, wsum, 1.0)[:, None]
        out[wsum < self.min_weight] = 0.0
        return out

    def marginal_density(self, Pz, Z=None):
        Z = self.Zx if Z is None else Z
        return self._kern(Pz, Z).mean(axis=1)


def probe_points(center_z, eps: float, floor: float) -> np.ndarray:
    """Centre plus points at +-r along each whitened axis for the radii
    ``r = eps * 2^-j`` that are at least ``floor``.

    With a shared floor the probe set of B(c, eps / 2) is a subset of that of
    B(c, eps), so the density lower bound can only grow when a ball shrinks.
    """
    c = np.asarray(center_z, dtype=float)
    d = len(c)
    pts = [c]
    r = eps
    while r >= floor * (1 - 1e-12):
        for a in range(d):
            e = np.zeros(d)
            e[a] = r
            pts.append(c + e)
            pts.append(c - e)
        r *= 0.5
    return np.array(pts)


def ball_beta(density: ConditionalDensity, x_center, y_center, eps: float, *,
              floor: float | None = None, discount: float = 0.5):
    """(beta, density lower bound) for the ball pair at whitened radius eps.

    ``floor`` is the smallest probe radius (default eps / 8).
    """
    floor = eps / 8.0 if floor is None else floor
    w = density.whitening
    px = probe_points(w(np.atleast_2d(x_center))[0], eps, floor)
    py = probe_points(w(np.atleast_2d(y_center))[0], eps, floor)
    lb = float(np.min(density.matrix(px, py)))
    vol = _unit_ball_volume(density.dim) * eps**density.dim
    return min(1.0, discount * vol * lb), lb


def mean_shift(Z, start, h: float, iters: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Gaussian-kernel mean shift from ``start``; converges to a local mode."""
    z = np.asarray(start, dtype=float).copy()
    for _ in range(iters):
        w = np.exp(-0.5 * np.sum((Z - z) ** 2, axis=1) / h**2)
        if w.sum() <= 0:
            break
        nz = w @ Z / w.sum()
        if np.linalg.norm(nz - z) < tol:
            z = nz
            break
        z = nz
    return z


def trimmed_whitening(Z, keep: float = 0.9, iters: int = 3) -> Whitening:
    """Mean and covariance of the ``keep`` fraction of rows closest to the
    centre, refined a few times; robust to rare large excursions."""
    Z = np.asarray(Z, dtype=float)
    w = Whitening.fit(Z)
    for _ in range(iters):
        d2 = np.sum(w(Z) ** 2, axis=1)
        w = Whitening.fit(Z[d2 <= np.quantile(d2, keep)])
    return w


def _box_radius(y_center, whitening: Whitening, box: dict, eps: float) -> float:
    # largest radius <= eps keeping the ellipsoid around y inside the box
    ext = np.linalg.norm(whitening.L, axis=1)
    r = eps
    for i, (lo, hi) in box.items():
        if i < len(y_center) and ext[i] > 0:
            r = min(r, (y_center[i] - lo) / ext[i], (hi - y_center[i]) / ext[i])
    return max(r, 0.0)


GATING_BOX = {1: (0.0, 1.0), 2: (0.0, 1.0), 3: (0.0, 1.0)}


def compact_starts(n: int, C2: float, seed: int, *, stream: int = 0) -> np.ndarray:
    """Uniform draws on K = {|v| <= C2, |zeta| <= C2} x [0, 1]^3."""
    rng = np.random.Generator(np.random.Philox(key=_key(seed, stream, CH_INIT)))
    u = rng.uniform(size=(n, 5))
    out = u.copy()
    out[:, 0] = C2 * (2.0 * u[:, 0] - 1.0)
    out[:, 4] = C2 * (2.0 * u[:, 4] - 1.0)
    return out


def transition_pairs(spec: SignalSpec, sim: SimConfig, n_chains: int, n_steps: int, C2: float,
                     *, burn_in: int = 5):
    """Skeleton transitions ``(X_k, X_{k+1})`` from chains started uniformly
    on the compact K, after ``burn_in`` periods.  Returns (X, Y, final states)."""
    if n_steps < 1:
        raise ValueError("need at least one transition per chain")
    x0 = compact_starts(n_chains, C2, sim.seed)
    sk = sde.skeleton_batch(x0, burn_in + n_steps, sim, spec)
    X = sk[:, burn_in:-1].reshape(-1, 5)
    Y = sk[:, burn_in + 1:].reshape(-1, 5)
    return X, Y, sk[:, -1].copy()


@dataclass
class MinorizationResult:
    balls: list
    densities: list = field(repr=False)     # one ConditionalDensity per ball
    candidates_tried: int = 0


def find_minorization(X, Y, n_balls: int = 1, bandwidth=None, *,
                      radii=(1.0, 1.5, 2.0, 2.5, 3.0), discount: float = 0.5,
                      min_beta: float = 1e-4, box=None, local: int = 2000,
                      max_candidates: int = 20, subsample: int = 4000,
                      shift_width: float = 0.75) -> MinorizationResult:
    """Search minorization balls from transition pairs ``X -> Y``.

    Candidate centres x_k are sample states of highest estimated density.
    The ``local`` nearest sample states of a candidate define its metric (the
    trimmed covariance of their next states).  In that metric x_k and the
    partner y_k are moved to the nearest modes of the state and next-state
    densities by mean shift (kernel width ``shift_width``).  For each radius in ``radii`` (shrunk if needed to keep
    both balls inside ``box``) beta is ``discount`` times the ball volume
    times the smallest conditional density over probe points of
    B(x_k) x B(y_k), capped at 1; the radius maximising beta times the
    fraction of states in B(x_k) is kept.  Candidates with beta below
    ``min_beta`` or too close to an accepted ball are dropped.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    if box is None:
        box = GATING_BOX if X.shape[1] == 5 else {}
    glob = ConditionalDensity(X, Y, bandwidth=bandwidth)
    n = len(X)
    local = min(local, n - 1)
    sub = np.arange(0, n, max(1, n // subsample))
    rho = glob.marginal_density(glob.Zx[sub], glob.Zx[sub])
    order = sub[np.argsort(-rho, kind="stable")]
    balls, dens_list = [], []
    tried = 0
    for idx in order:
        if len(balls) >= n_balls or tried >= max_candidates:
            break
        if any(b.contains_x(X[idx]) for b in balls):
            continue
        tried += 1
        near = np.argpartition(np.linalg.norm(glob.Zx - glob.Zx[idx], axis=1), local)[:local]
        metric = trimmed_whitening(Y[near])
        dens = ConditionalDensity(X, Y, bandwidth=bandwidth, whitening=metric)
        zx = mean_shift(dens.Zx, dens.Zx[idx], shift_width)
        zy = mean_shift(dens.Zy, np.zeros(X.shape[1]), shift_width)
        x_c = metric.inverse(zx[None])[0]
        y_c = metric.inverse(zy[None])[0]
        best = None
        for eps in radii:
            r = min(eps, _box_radius(y_c, metric, box, eps), _box_radius(x_c, metric, box, eps))
            if r <= 0:
                continue
            beta, lb = ball_beta(dens, x_c, y_c, r, discount=discount)
            if beta < min_beta:
                continue
            score = beta * np.mean(np.linalg.norm(dens.Zx - zx, axis=1) <= r)
            if best is None or score > best[0]:
                best = (score, r, beta, lb)
        if best is None:
            continue
        _, r, beta, lb = best
        if any(b._dist(x_c, b.x_center) < b.eps + r for b in balls):
            continue
        balls.append(MinorizationBall(x_c, y_c, float(r), float(beta), metric, lb))
        dens_list.append(dens)
    if not balls:
        raise NoBallError(
            f"no minorization ball with beta >= {min_beta} among {tried} candidates; "
            "use more transitions or a larger bandwidth")
    return MinorizationResult(balls, dens_list, tried)


# --------------------------------------------------------------------------
# regeneration

@dataclass
class RegenerationRecord:
    path_id: int
    ball: int
    indices: np.ndarray        # R_0 = 0 followed by the regeneration indices
    uniforms: np.ndarray = field(repr=False, default=None)
    origin: bool = False       # True when X_1 was already drawn from nu

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if len(idx) == 0 or idx[0] != 0 or np.any(np.diff(idx) <= 0):
            raise ValueError("indices must start at 0 and increase strictly")
        self.indices = idx

    @property
    def times(self) -> np.ndarray:
        return self.indices[1:]

    @property
    def cycle_starts(self) -> np.ndarray:
        """Indices R_n after which a fresh cycle begins."""
        return self.indices if self.origin else self.indices[1:]


def path_uniforms(seed: int, path_id: int, n: int) -> np.ndarray:
    return NoiseStream(seed, path_id, CH_UNIFORM).uniforms(0, n)


def regeneration_times(path, balls: Sequence[MinorizationBall], seed: int, *,
                       path_id: int = 0, uniforms=None) -> list:
    """Apply ``R_{n+1} = inf{l > R_n : X_l in B(x_k), U_l <= beta_k}`` per ball.

    ``uniforms`` defaults to the fresh substream ``(seed, path_id)`` on the
    uniform channel; one uniform per skeleton index, shared by all balls.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    U = path_uniforms(seed, path_id, len(path)) if uniforms is None else np.asarray(uniforms)
    out = []
    for k, b in enumerate(balls):
        hit = b.contains_x(path) & (U <= b.beta)
        hit[0] = False
        out.append(RegenerationRecord(path_id, k, np.concatenate([[0], np.flatnonzero(hit)]), U))
    return out


StepFn = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


@dataclass
class SplitChainRun:
    paths: np.ndarray          # (C, L + 1, d); NaN after a chain has stopped
    events: np.ndarray         # (C, L + 1) ball index regenerating at l, or -1
    balls: list
    seed: int
    origin: bool
    stopped: np.ndarray        # (C,) last index of each chain

    def records(self) -> list:
        out = []
        for c in range(len(self.paths)):
            for k in range(len(self.balls)):
                idx = np.flatnonzero(self.events[c, 1:] == k) + 1
                out.append(RegenerationRecord(c, k, np.concatenate([[0], idx]),
                                              origin=self.origin and k == 0))
        return out

    @property
    def n_regenerations(self) -> int:
        return int(np.sum(self.events[:, 1:] >= 0))


def run_split_chains(x0s, balls: Sequence[MinorizationBall], n_steps: int, step_fn: StepFn,
                     seed: int, *, start_regenerated: bool = False,
                     cycles_per_chain: int | None = None) -> SplitChainRun:
    """Skeleton chains that restart from ``nu_k`` after each regeneration.

    At index l >= 1, chain c regenerates on the first ball k with X_l in
    B(x_k) and U_l <= beta_k; then X_{l+1} is drawn uniformly from B(y_k)
    instead of from the transition kernel.  With ``start_regenerated`` index
    0 counts as a regeneration on ball 0, so X_1 is a draw from nu_0 and the
    first cycle is already complete-able.  With ``cycles_per_chain`` a chain
    stops at its n-th regeneration after the origin, a stopping time, so
    the collected cycles carry no length bias; ``n_steps`` is then a cap.
    ``step_fn(states, l, chain_ids)`` maps states at index l to index l + 1.
    """
    x = np.array(x0s, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    C, d = x.shape
    ids = np.arange(C)
    U = np.stack([path_uniforms(seed, c, n_steps + 1) for c in ids])
    paths = np.full((C, n_steps + 1, d), np.nan)
    events = np.full((C, n_steps + 1), -1, dtype=np.int64)
    paths[:, 0] = x
    betas = np.array([b.beta for b in balls])
    active = np.ones(C, dtype=bool)
    stopped = np.full(C, n_steps, dtype=np.int64)
    count = np.zeros(C, dtype=np.int64)
    for l in range(n_steps + 1):
        cur = paths[:, l]
        if l == 0:
            if start_regenerated:
                events[:, 0] = 0
        else:
            ev = np.full(C, -1)
            for k in range(len(balls) - 1, -1, -1):
                ok = active & balls[k].contains_x(cur) & (U[:, l] <= betas[k])
                ev[ok] = k
            events[:, l] = ev
            count += ev >= 0
            if cycles_per_chain is not None:
                done = active & (count >= cycles_per_chain)
                stopped[done] = l
                active &= ~done
        if l == n_steps or not active.any():
            break
        regen = active & (events[:, l] >= 0)
        move = np.flatnonzero(active & ~regen)
        if len(move):
            paths[move, l + 1] = step_fn(cur[move], l, ids[move])
        for c in np.flatnonzero(regen):
            rng = np.random.Generator(np.random.Philox(
                key=_key(seed, int(c), CH_RESTART), counter=l))
            paths[c, l + 1] = balls[events[c, l]].sample_nu(rng, 1)[0]
    return SplitChainRun(paths, events, list(balls), int(seed), bool(start_regenerated), stopped)


def hh_step(spec: SignalSpec, sim: SimConfig) -> StepFn:
    """One-period map of the full system; index l uses global steps
    ``[l * per, (l + 1) * per)`` of each chain's noise stream."""
    per = sde.steps_per_period(sim, spec)

    def step(states, l, ids):
        return sde.advance(states, spec, sim, ids, l * per, per)

    return step


def ou_step(spec: SignalSpec, seed: int, n_chains: int, n_steps: int) -> StepFn:
    """Exact one-period OU map at phase 0 with pre-drawn normals."""
    decay, shift, sd = sde.ou_transition(0.0, spec.period, spec)
    Z = normal_matrix(seed, np.arange(n_chains), 0, n_steps)

    def step(states, l, ids):
        return decay * states + shift + sd * Z[ids, l][:, None]

    return step


@dataclass
class EmpiricalMeasure:
    samples: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        self.weights = w / w.sum()
        self.samples = np.asarray(self.samples, dtype=float)

    def expect(self, f) -> float:
        return float(np.sum(self.weights * f(self.samples)))

    def resample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=_key(seed, 0, CH_BOOT)))
        idx = rng.choice(len(self.samples), size=n, replace=True, p=self.weights)
        return self.samples[idx]


@dataclass
class InvariantEstimate:
    value: float
    ci: tuple
    n_cycles: int
    mean_cycle_length: float
    measure: EmpiricalMeasure = field(repr=False)

    def covers(self, x: float) -> bool:
        return self.ci[0] <= x <= self.ci[1]


def collect_cycles(paths, records) -> list:
    """Complete cycles ``X_{R_n + 1} .. X_{R_{n+1}}`` per path, all balls merged."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim == 2:
        paths = paths[..., None]
    by_path = {}
    for rec in records:
        by_path.setdefault(rec.path_id, []).append(rec.cycle_starts)
    cycles = []
    for pid in sorted(by_path):
        times = np.unique(np.concatenate(by_path[pid]))
        for a, b in zip(times[:-1], times[1:]):
            cycles.append(paths[pid, a + 1:b + 1])
    return cycles


def regeneration_invariant_estimate(paths, records, f, *, seed: int = 0, n_boot: int = 2000,
                                    level: float = 0.95, min_cycles: int = 30) -> InvariantEstimate:
    """Ratio of cycle sums of f to cycle lengths, with a cycle bootstrap CI."""
    cycles = collect_cycles(paths, records)
    if len(cycles) < min_cycles:
        raise InsufficientDataError(
            f"only {len(cycles)} complete regeneration cycles (need {min_cycles}); "
            "run longer or more chains")
    sums = np.array([float(np.sum(f(c))) for c in cycles])
    lens = np.array([len(c) for c in cycles], dtype=float)
    value = float(sums.sum() / lens.sum())
    rng = np.random.Generator(np.random.Philox(key=_key(seed, 1, CH_BOOT)))
    n = len(cycles)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        w = np.bincount(rng.integers(0, n, n), minlength=n)
        boot[b] = (w @ sums) / (w @ lens)
    alpha = 0.5 * (1.0 - level)
    ci = (float(np.quantile(boot, alpha)), float(np.quantile(boot, 1.0 - alpha)))
    samples = np.concatenate(cycles)
    meas = EmpiricalMeasure(samples, np.ones(len(samples)))
    return InvariantEstimate(value, ci, n, float(lens.mean()), meas)


# --------------------------------------------------------------------------
# law comparisons

def energy_distance(A, B, *, scale=None) -> float:
    """Energy distance between the empirical laws of two samples (rows),
    optionally after dividing every coordinate by ``scale``.

    The V-statistic form is used, so the value is the exact (non-negative)
    distance between the two empirical measures.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 1 and A.shape[1] > 1 and B.shape[1] == 1:
        A, B = A.T, B.T
    if scale is not None:
        A = A / scale
        B = B / scale
    val = 2.0 * cdist(A, B).mean() - cdist(A, A).mean() - cdist(B, B).mean()
    return float(max(val, 0.0))


def _thin(X, cap):
    return X[:: max(1, math.ceil(len(X) / cap))]


@dataclass
class MultiStartReport:
    d_vzeta: np.ndarray
    d_gating: np.ndarray
    noise_floor: float
    threshold: float
    clusters: np.ndarray


def multi_start_diagnostic(starts, k_max: int, cfg: SimConfig, spec: SignalSpec, *,
                           n_paths: int = 100, burn_in: int | None = None,
                           common_noise: bool = True, floor_factor: float = 2.0,
                           cap: int = 2000) -> MultiStartReport:
    """Compare empirical skeleton laws from several starts.

    Each start runs ``n_paths`` paths; states after ``burn_in`` (default
    k_max // 4) are pooled.  The noise floor is the (v, zeta) distance between
    two independent runs of the first start (seed + 1 vs seed + 2); starts
    closer than ``floor_factor`` times the floor are clustered together.
    """
    starts = [_arr(s) for s in starts]
    if len(starts) < 2:
        raise ValueError("need at least two starts")
    burn = k_max // 4 if burn_in is None else burn_in
    if k_max <= burn:
        raise InsufficientDataError("k_max must exceed the burn-in")

    def law(x0, seed, offset):
        streams = offset + np.arange(n_paths)
        sk = sde.skeleton_batch(np.tile(x0, (n_paths, 1)), k_max, cfg.with_(seed=seed), spec,
                                streams=streams)
        return _thin(sk[:, burn + 1:].reshape(-1, 5), cap)

    laws = [law(x, cfg.seed, 0 if common_noise else i * n_paths) for i, x in enumerate(starts)]
    pooled = np.concatenate(laws)
    sc = pooled.std(axis=0)
    sc[sc == 0] = 1.0
    k = len(starts)
    dvz = np.zeros((k, k))
    dg = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dvz[i, j] = dvz[j, i] = energy_distance(laws[i][:, [0, 4]], laws[j][:, [0, 4]],
                                                   scale=sc[[0, 4]])
            dg[i, j] = dg[j, i] = energy_distance(laws[i][:, 1:4], laws[j][:, 1:4],
                                                 scale=sc[1:4])
    a = law(starts[0], cfg.seed + 1, 0)
    b = law(starts[0], cfg.seed + 2, 0)
    floor = energy_distance(a[:, [0, 4]], b[:, [0, 4]], scale=sc[[0, 4]])
    thr = floor_factor * max(floor, 1e-12)
    adj = dvz <= thr
    _, labels = connected_components(adj, directed=False)
    return MultiStartReport(dvz, dg, float(floor), float(thr), labels)


@dataclass
class InvarianceCheck:
    phase: float
    residual: float
    noise_floor: float
    residuals: tuple
    null_distances: tuple

    @property
    def ratio(self) -> float:
        return self.residual / self.noise_floor if self.noise_floor > 0 else math.inf

    def passes(self, factor: float = 2.0) -> bool:
        return self.residual <= factor * self.noise_floor


def periodic_invariance_check(mu, s: float, cfg: SimConfig, spec: SignalSpec, *,
                              n_rep: int = 8, sample_size: int = 2000,
                              stream_base: int = 0) -> InvarianceCheck:
    """Compare ``A = mu P_{0,s}`` with ``B = A P_{s,s+T}`` by energy distance.

    For each seed replicate r (seeds ``cfg.seed + r``) the residual is
    D(A_r, B_r) and the null is D(B_r, B'_r), where B'_r pushes the same A_r
    over [s, s+T] with an independent seed: two samples of one law with the
    same dependence on A_r.  Residual and noise floor are the replicate means.

    ``mu`` is either a fixed sample (rows) or an EmpiricalMeasure, from which
    each replicate draws its own sample of ``sample_size`` states.
    """
    if isinstance(mu, EmpiricalMeasure):
        draw = lambda r: mu.resample(sample_size, cfg.seed + r)
        n = sample_size
    else:
        fixed = np.asarray(mu, dtype=float)
        draw = lambda r: fixed
        n = len(fixed)
    s_steps = sde.steps_for(s, cfg.dt) if s > 0 else 0
    per = sde.steps_per_period(cfg, spec)
    ids = stream_base + np.arange(n)

    def push(seed, start, steps, x):
        if steps == 0:
            return x.copy()
        return sde.advance(x, spec, cfg.with_(seed=seed), ids, start, steps)

    sc = None
    res, nulls = [], []
    for r in range(n_rep):
        seed = cfg.seed + r
        A = push(seed, 0, s_steps, draw(r))
        B = push(seed, s_steps, per, A)
        B2 = push(seed + n_rep, s_steps, per, A)
        if sc is None:
            sc = A.std(axis=0)
            sc[sc == 0] = 1.0
        res.append(energy_distance(A, B, scale=sc))
        nulls.append(energy_distance(B, B2, scale=sc))
    return InvarianceCheck(float(s), float(np.mean(res)), float(np.mean(nulls)),
                           tuple(res), tuple(nulls))
