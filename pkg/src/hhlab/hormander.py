"""Hormander-type non-degeneracy checks.

Two independent routes are provided:

* :func:`determinant_D` - the 3x3 determinant of second to fourth
  v-derivatives of the gating drifts, computed exactly with jets;
* :func:`bracket_basis` - the iterated Lie brackets of the space-time drift
  and diffusion fields.  Because the diffusion field is constant, the k-fold
  bracket with it is a k-th directional derivative of the drift, taken
  from a Taylor jet along the noise direction.  A general finite-difference
  bracket (:func:`lie_bracket`) is kept as a cross-check.

Vector fields on space-time act on points ``p = (t, v, n, m, h, zeta)`` and
are plain callables mapping an array of shape ``(..., 6)`` to ``(..., 6)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import model
from .calculus import TaylorJet, gating_drift_derivatives, jet_of_rate, rate_jet
from .model import SignalSpec

VectorField6 = Callable[[np.ndarray], np.ndarray]

RANK_RTOL = 1e-8
ROOT_TOL = 1e-6

_STENCILS = {
    2: (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    4: (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1 / 12, -2 / 3, 2 / 3, -1 / 12])),
    6: (np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]),
        np.array([-1 / 60, 3 / 20, -3 / 4, 3 / 4, -3 / 20, 1 / 60])),
}


# --------------------------------------------------------------------------
# determinant route

def _gating_matrix(v, n, m, h, opening_weighted: bool):
    if opening_weighted:
        return gating_drift_derivatives(v, n, m, h, K=4)[:, 1:]
    # alternative entries d^k alpha - g d^k beta (opening rate not weighted by 1-g)
    rows = []
    for (a_id, b_id), g in ((("alpha_n", "beta_n"), n), (("alpha_m", "beta_m"), m),
                            (("alpha_h", "beta_h"), h)):
        da = jet_of_rate(a_id, v, 4).derivatives()[2:]
        db = jet_of_rate(b_id, v, 4).derivatives()[2:]
        rows.append(da - db * np.asarray(g, dtype=float))
    return np.stack(rows)


def determinant_D(v, n, m, h, *, opening_weighted: bool = True):
    """det of [d^k_v b^i] for i in (n, m, h) rows and k = 2, 3, 4 columns.

    Vectorised over broadcastable inputs.  ``opening_weighted=False`` drops
    the ``(1 - g)`` factor on the opening rate in every entry; that variant
    does not correspond to the bracket structure and exists only to compare
    against externally tabulated roots.
    """
    v, n, m, h = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (v, n, m, h)))
    mat = _gating_matrix(v, n, m, h, opening_weighted)
    mat = np.moveaxis(mat.reshape(3, 3, -1), -1, 0)
    d = np.linalg.det(mat).reshape(v.shape)
    return d if d.ndim else float(d)


def determinant_on_curve(v, *, opening_weighted: bool = True):
    """v -> D(v, n_inf(v), m_inf(v), h_inf(v))."""
    n, m, h = model.gating_equilibrium(v)
    return determinant_D(v, n, m, h, opening_weighted=opening_weighted)


@dataclass
class CurveScan:
    v: np.ndarray
    D: np.ndarray
    roots: list = field(default_factory=list)
    brackets: list = field(default_factory=list)


def scan_equilibrium_curve(v_lo: float, v_hi: float, step: float, *,
                           opening_weighted: bool = True,
                           root_tol: float = ROOT_TOL) -> CurveScan:
    """Sample D along the equilibrium curve on ``[v_lo, v_hi]`` and refine every
    sign change by bisection to ``root_tol``."""
    if not step > 0:
        raise ValueError("step must be positive")
    if not v_hi > v_lo:
        return CurveScan(np.empty(0), np.empty(0))
    n_pts = int(math.floor((v_hi - v_lo) / step + 1e-9)) + 1
    v = v_lo + step * np.arange(n_pts)
    d = np.asarray(determinant_on_curve(v, opening_weighted=opening_weighted))

    def f(x):
        return float(determinant_on_curve(x, opening_weighted=opening_weighted))

    roots, brackets = [], []
    sgn = np.sign(d)
    for i in range(n_pts - 1):
        if sgn[i] == 0:
            roots.append(float(v[i]))
            brackets.append((float(v[i]), float(v[i])))
            continue
        if sgn[i] * sgn[i + 1] < 0:
            a, b, fa = float(v[i]), float(v[i + 1]), d[i]
            while b - a > root_tol:
                mid = 0.5 * (a + b)
                fm = f(mid)
                if fm == 0:
                    a = b = mid
                    break
                if np.sign(fm) == np.sign(fa):
                    a, fa = mid, fm
                else:
                    b = mid
            roots.append(0.5 * (a + b))
            brackets.append((float(v[i]), float(v[i + 1])))
    if n_pts and sgn[-1] == 0:
        roots.append(float(v[-1]))
        brackets.append((float(v[-1]), float(v[-1])))
    return CurveScan(v, d, roots, brackets)


# --------------------------------------------------------------------------
# vector fields and brackets

def drift_field(spec: SignalSpec) -> VectorField6:
    """Space-time drift (1, b1, ..., b5)."""

    def bbar(p):
        p = np.asarray(p, dtype=float)
        out = np.empty(p.shape)
        out[..., 0] = 1.0
        out[..., 1:] = model.drift(p[..., 0], p[..., 1:], spec)
        return out

    return bbar


def diffusion_field(spec: SignalSpec) -> VectorField6:
    """Space-time diffusion gamma*sqrt(tau)*(0, 1, 0, 0, 0, 1)."""
    col = np.concatenate([[0.0], model.diffusion(spec)])

    def sbar(p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(col, p.shape).copy()

    return sbar


def _jvp(g: VectorField6, p: np.ndarray, w: np.ndarray, step: float, order: int,
         scale=None):
    """Central-difference approximation of Dg(p) w, batched over leading axes."""
    offs, coef = _STENCILS[order]
    if scale is None:
        scale = np.maximum(1.0, np.abs(p))
    wmax = np.max(np.abs(w) / scale, axis=-1)
    zero = wmax == 0
    hstep = step / np.where(zero, 1.0, wmax)
    disp = hstep[..., None] * w
    pts = p[..., None, :] + offs[:, None] * disp[..., None, :]
    vals = g(pts.reshape(-1, p.shape[-1])).reshape(pts.shape)
    d = np.tensordot(coef, np.moveaxis(vals, -2, 0), axes=(0, 0)) / hstep[..., None]
    return np.where(zero[..., None], 0.0, d)


def lie_bracket(f: VectorField6, g: VectorField6, p, *, step: float = 1e-5,
                order: int = 2, scale=None) -> np.ndarray:
    """[f, g]^i = sum_j f^j dg^i/dx^j - g^j df^i/dx^j over all six coordinates.

    The two Jacobian-vector products are taken by central differences along
    ``f(p)`` and ``g(p)``; the displacement is scaled so that its largest
    component relative to ``max(1, |p_j|)`` equals ``step``.  A fixed
    per-coordinate length ``scale`` may be given instead.
    """
    if order not in _STENCILS:
        raise ValueError(f"stencil order must be one of {sorted(_STENCILS)}")
    p = np.asarray(p, dtype=float)
    flat = p.reshape(-1, p.shape[-1])
    fv, gv = f(flat), g(flat)
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
    out = (_jvp(g, flat, fv, step, order, scale)
           - _jvp(f, flat, gv, step, order, scale))
    return out.reshape(p.shape)


def bracket_field(f: VectorField6, g: VectorField6, *, step: float = 1e-5,
                  order: int = 2, scale=None) -> VectorField6:
    """The vector field p -> [f, g](p)."""
    return lambda p: lie_bracket(f, g, p, step=step, order=order, scale=scale)


# Difference route: nested columns differentiate the previous finite-difference
# result again, so round-off grows like eps |b| / h^depth.  The fields are
# analytic with complex singularities at least ~30 mV away in v, so a wide
# sixth-order stencil on fixed length scales (t, v, n, m, h, zeta) balances
# truncation and round-off for |v| up to about 100.
NESTED_SCALE = (1.0, 10.0, 1.0, 1.0, 1.0, 10.0)
NESTED_STEP = 0.1
NESTED_ORDER = 6


def noise_direction_jets(spec: SignalSpec, points, K: int = 4) -> np.ndarray:
    """Taylor coefficients of the drift along the noise direction.

    Returns ``c`` of shape ``(K + 1, ..., 6)`` with
    ``bbar(p + s * sbar) = sum_k c[k] s^k``.  Along ``sbar`` only v and zeta
    move, both by the same amount, so one jet in ``u = v - v0`` covers both.
    """
    p = np.asarray(points, dtype=float)
    t, v, n, m, h, z = (p[..., i] for i in range(6))
    g = spec.gamma * math.sqrt(spec.tau)
    x = TaylorJet.variable(v, K)
    zeta = x + (z - v)
    inp = (-zeta + model.signal_eval(spec, t)) * spec.tau
    F = ((x - model.E_K) * (model.G_K * n**4) + (x - model.E_NA) * (model.G_NA * m**3 * h)
         + (x - model.E_L) * model.G_L)
    comps = [TaylorJet.constant(1.0, K, like=x), inp - F]
    for (a_id, b_id), y in ((("alpha_n", "beta_n"), n), (("alpha_m", "beta_m"), m),
                            (("alpha_h", "beta_h"), h)):
        comps.append(rate_jet(a_id, x) * (1.0 - y) - rate_jet(b_id, x) * y)
    comps.append(inp)
    c = np.stack([np.broadcast_to(j.coeffs, (K + 1,) + p.shape[:-1]) for j in comps], axis=-1)
    return c * (g ** np.arange(K + 1)).reshape((-1,) + (1,) * p.ndim)


def bracket_fields(spec: SignalSpec, *, method: str = "jet", step: float = NESTED_STEP,
                   order: int = NESTED_ORDER, scale=NESTED_SCALE) -> list:
    """sigma, [b, sigma], [sigma, [b, sigma]], ... up to three sigma-iterations.

    ``method="jet"`` uses that sigma is constant, so the k-th field equals
    ``-k! * c[k]`` with ``c`` from :func:`noise_direction_jets`; this is exact
    to rounding for any |v|.  ``method="difference"`` nests
    :func:`lie_bracket`, whose round-off grows like eps |b| / h^k and
    limits it to moderate |v|.
    """
    s = diffusion_field(spec)
    if method == "jet":
        def column(k):
            return lambda p: -math.factorial(k) * noise_direction_jets(spec, p, k)[k]
        return [s] + [column(k) for k in range(1, 5)]
    if method != "difference":
        raise ValueError("method must be 'jet' or 'difference'")
    b = drift_field(spec)
    kw = dict(step=step, order=order, scale=scale)
    fields = [s, bracket_field(b, s, **kw)]
    for _ in range(3):
        fields.append(bracket_field(s, fields[-1], **kw))
    return fields


def _as_point(t, x):
    if isinstance(x, model.State5):
        x = x.as_array()
    return np.concatenate([[float(t)], np.asarray(x, dtype=float)])


def numeric_rank(mat, rtol: float = RANK_RTOL) -> int:
    """Rank after row/column equilibration; singular values below
    ``rtol * s_max`` count as zero."""
    a = np.asarray(mat, dtype=float)
    a = _equilibrate(a)
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _equilibrate(a, sweeps: int = 3):
    a = a.copy()
    for _ in range(sweeps):
        r = np.linalg.norm(a, axis=-1, keepdims=True)
        a = a / np.where(r == 0, 1.0, r)
        c = np.linalg.norm(a, axis=-2, keepdims=True)
        a = a / np.where(c == 0, 1.0, c)
    return a


@dataclass
class BracketBasis:
    t: float
    x: np.ndarray
    columns: np.ndarray       # (5, 5): column j is the space part of bracket j
    time_components: np.ndarray
    det: float
    rank: int

    @property
    def column_norm_product(self) -> float:
        return float(np.prod(np.linalg.norm(self.columns, axis=0)))

    @property
    def normalized_det(self) -> float:
        """|det| divided by the product of column norms (Hadamard ratio)."""
        prod = self.column_norm_product
        return abs(self.det) / prod if prod else 0.0


def bracket_matrix(points, spec: SignalSpec, *, method: str = "jet",
                   step: float = NESTED_STEP, order: int = NESTED_ORDER):
    """Evaluate the five bracket columns at points ``(..., 6)``.

    Returns ``(mats, time_parts)`` with ``mats`` of shape ``(..., 5, 5)``.
    """
    p = np.asarray(points, dtype=float)
    if method == "jet":
        c = noise_direction_jets(spec, p, 4)
        fact = np.array([-math.factorial(k) for k in range(1, 5)], dtype=float)
        cols = [diffusion_field(spec)(p)] + [fact[k - 1] * c[k] for k in range(1, 5)]
    else:
        cols = [fld(p) for fld in bracket_fields(spec, method=method, step=step, order=order)]
    full = np.stack(cols, axis=-1)           # (..., 6, 5)
    return full[..., 1:, :], full[..., 0, :]


def bracket_basis(t: float, x, spec: SignalSpec, *, rtol: float = RANK_RTOL,
                  method: str = "jet") -> BracketBasis:
    """Bracket basis at one space-time point with determinant and rank."""
    p = _as_point(t, x)
    mats, tparts = bracket_matrix(p, spec, method=method)
    return BracketBasis(float(t), p[1:], mats, tparts, float(np.linalg.det(mats)),
                        numeric_rank(mats, rtol))


def hormander_rank_map(nodes, spec: SignalSpec, *, t: float = 0.0, zeta: float = 0.0,
                       rtol: float = RANK_RTOL, chunk: int = 256):
    """Rank of the bracket basis at each (v, n, m, h) node.

    Returns ``(ranks, deficient)`` where ``deficient`` lists the indices of
    nodes with rank below 5.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 4)
    ranks = np.empty(len(nodes), dtype=int)
    for lo in range(0, len(nodes), chunk):
        blk = nodes[lo:lo + chunk]
        pts = np.column_stack([np.full(len(blk), t), blk, np.full(len(blk), zeta)])
        mats, _ = bracket_matrix(pts, spec)
        for i, mat in enumerate(mats):
            ranks[lo + i] = numeric_rank(mat, rtol)
    return ranks, np.flatnonzero(ranks < 5)


def sample_nondegenerate_points(n: int, spec: SignalSpec, seed: int, *,
                                v_range=(-400.0, -150.0), zeta_range=(-50.0, 50.0),
                                min_abs_d: float = 1e-4, batch: int = 4096) -> np.ndarray:
    """Random space-time points ``(t, v, n, m, h, zeta)`` with |D| > min_abs_d.

    v, zeta and t are uniform on their ranges (t on [0, T)), gating uniform on
    [0, 1]^3; candidates are drawn in batches until ``n`` pass the filter.
    """
    from .noise import CH_INIT, _key
    rng = np.random.Generator(np.random.Philox(key=_key(seed, 0, CH_INIT)))
    out = []
    got = 0
    for _ in range(10_000):
        if got >= n:
            break
        v = rng.uniform(*v_range, batch)
        g = rng.uniform(0.0, 1.0, (3, batch))
        z = rng.uniform(*zeta_range, batch)
        t = rng.uniform(0.0, spec.period, batch)
        keep = np.abs(determinant_D(v, *g)) > min_abs_d
        blk = np.column_stack([t, v, g.T, z])[keep]
        out.append(blk)
        got += len(blk)
    else:
        raise ValueError("too few points with |D| above the threshold in the sampled region")
    return np.concatenate(out)[:n] if out else np.empty((0, 6))


def rank_at_points(points, spec: SignalSpec, *, rtol: float = RANK_RTOL, chunk: int = 256):
    """(ranks, |det| / column-norm products) of the bracket basis at points (N, 6)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 6)
    ranks = np.empty(len(pts), dtype=int)
    ratios = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        mats, _ = bracket_matrix(pts[lo:lo + chunk], spec)
        dets = np.abs(np.linalg.det(mats))
        norms = np.prod(np.linalg.norm(mats, axis=-2), axis=-1)
        ratios[lo:lo + chunk] = np.where(norms > 0, dets / np.where(norms > 0, norms, 1), 0.0)
        for i, mat in enumerate(mats):
            ranks[lo + i] = numeric_rank(mat, rtol)
    return ranks, ratios
