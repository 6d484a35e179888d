"""Truncated Taylor (jet) arithmetic in one variable.

A jet of order K stores the normalised Taylor coefficients
``c_k = f^(k)(v0) / k!`` for k = 0..K.  Coefficient arrays may carry trailing
batch dimensions, so one jet can describe the same function expanded at many
centres at once (shape ``(K + 1, *batch)``).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import bernoulli


MAX_ORDER = 8
SERIES_DEGREE = 12

# Taylor coefficients of u / (e^u - 1) = sum B_k u^k / k!
EXPM1_RATIO_SERIES = bernoulli(SERIES_DEGREE) / [math.factorial(k) for k in range(SERIES_DEGREE + 1)]

# The direct quotient loses about eps/|u|^k in the k-th derivative, so jets
# use the (radius 2*pi) series on a much wider window than plain values do.
JET_SERIES_WINDOW = 0.5
JET_SERIES_DEGREE = 30
_JET_SERIES = bernoulli(JET_SERIES_DEGREE) / [math.factorial(k) for k in range(JET_SERIES_DEGREE + 1)]


class JetError(ValueError):
    pass


class TaylorJet:
    """Truncated power series in ``(v - v0)``."""

    __slots__ = ("coeffs", "center")

    def __init__(self, coeffs, center=None):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim == 0:
            c = c[None]
        if c.shape[0] - 1 > MAX_ORDER:
            raise JetError(f"jet order {c.shape[0] - 1} exceeds {MAX_ORDER}")
        self.coeffs = c
        self.center = center

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def variable(cls, v0, order: int) -> "TaylorJet":
        """The identity map expanded at ``v0``."""
        if not 0 <= order <= MAX_ORDER:
            raise JetError(f"order must be in [0, {MAX_ORDER}]")
        v0 = np.asarray(v0, dtype=float)
        c = np.zeros((order + 1,) + v0.shape)
        c[0] = v0
        if order >= 1:
            c[1] = 1.0
        return cls(c, v0)

    @classmethod
    def constant(cls, value, order: int, like=None) -> "TaylorJet":
        value = np.asarray(value, dtype=float)
        shape = value.shape if like is None else np.broadcast_shapes(value.shape, like.coeffs.shape[1:])
        c = np.zeros((order + 1,) + shape)
        c[0] = value
        return cls(c, None if like is None else like.center)

    def _wrap(self, other) -> "TaylorJet":
        if isinstance(other, TaylorJet):
            if other.order != self.order:
                raise JetError("jets of different order")
            return other
        return TaylorJet.constant(other, self.order, like=self)

    def value(self):
        return self.coeffs[0]

    def derivative(self, k: int):
        """k-th derivative at the centre."""
        return self.coeffs[k] * math.factorial(k)

    def derivatives(self):
        fact = np.array([math.factorial(k) for k in range(self.order + 1)], dtype=float)
        return self.coeffs * fact.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))

    # arithmetic -----------------------------------------------------------
    def __neg__(self):
        return TaylorJet(-self.coeffs, self.center)

    def __add__(self, other):
        if not isinstance(other, TaylorJet):
            c = self.coeffs.copy()
            c[0] = c[0] + other
            return TaylorJet(c, self.center)
        return TaylorJet(self.coeffs + self._wrap(other).coeffs, self.center)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, TaylorJet):
            return TaylorJet(self.coeffs * other, self.center)
        a, b = self.coeffs, self._wrap(other).coeffs
        K = self.order
        c = np.zeros(np.broadcast_shapes(a.shape, b.shape))
        for k in range(K + 1):
            for j in range(k + 1):
                c[k] = c[k] + a[j] * b[k - j]
        return TaylorJet(c, self.center)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, TaylorJet):
            return TaylorJet(self.coeffs / other, self.center)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self) -> "TaylorJet":
        a = self.coeffs
        if np.any(a[0] == 0):
            raise JetError("division by a jet with zero constant term")
        K = self.order
        r = np.zeros_like(a)
        r[0] = 1.0 / a[0]
        for k in range(1, K + 1):
            acc = np.zeros_like(a[0])
            for j in range(1, k + 1):
                acc = acc + a[j] * r[k - j]
            r[k] = -acc / a[0]
        return TaylorJet(r, self.center)

    def exp(self) -> "TaylorJet":
        a = self.coeffs
        K = self.order
        e = np.zeros_like(a)
        with np.errstate(over="ignore"):
            e[0] = np.exp(a[0])
        # e' = a' e  =>  k e_k = sum_{j=1..k} j a_j e_{k-j}
        for k in range(1, K + 1):
            acc = np.zeros_like(a[0])
            for j in range(1, k + 1):
                acc = acc + j * a[j] * e[k - j]
            e[k] = acc / k
        return TaylorJet(e, self.center)

    def affine(self, scale: float, shift: float) -> "TaylorJet":
        """Composition with ``u -> scale * u + shift``."""
        c = self.coeffs * scale
        c[0] = c[0] + shift
        return TaylorJet(c, self.center)

    def polyval(self, poly) -> "TaylorJet":
        """Compose the polynomial ``sum poly[k] u^k`` with this jet (Horner)."""
        out = TaylorJet.constant(poly[-1], self.order, like=self)
        for p in poly[-2::-1]:
            out = out * self + p
        return out

    def __repr__(self):
        return f"TaylorJet(order={self.order}, coeffs={self.coeffs!r})"


def expm1_ratio_jet(u: TaylorJet) -> TaylorJet:
    """Jet of u / (e^u - 1) with the removable singularity at u = 0 handled by
    the Bernoulli series when the centre lies within ``JET_SERIES_WINDOW``."""
    u0 = np.asarray(u.coeffs[0])
    small = np.abs(u0) < JET_SERIES_WINDOW
    series = u.polyval(_JET_SERIES)
    if not np.any(~small):
        return series
    # shift the centre of the singular batch entries away before dividing
    safe = TaylorJet(u.coeffs.copy(), u.center)
    safe.coeffs[0] = np.where(small, 1.0, u0)
    denom = safe.exp() - 1.0
    direct = safe / denom
    mask = np.broadcast_to(small, u0.shape)
    return TaylorJet(np.where(mask, series.coeffs, direct.coeffs), u.center)


RATE_IDS = ("alpha_n", "beta_n", "alpha_m", "beta_m", "alpha_h", "beta_h")


def rate_jet(rate_id: str, x: TaylorJet) -> TaylorJet:
    """Jet of the named rate composed with the jet ``x`` of the potential."""
    if rate_id == "alpha_n":
        return expm1_ratio_jet(x.affine(-0.1, 1.0)) * 0.1
    if rate_id == "beta_n":
        return x.affine(-1.0 / 80.0, 0.0).exp() * 0.125
    if rate_id == "alpha_m":
        return expm1_ratio_jet(x.affine(-0.1, 2.5))
    if rate_id == "beta_m":
        return x.affine(-1.0 / 18.0, 0.0).exp() * 4.0
    if rate_id == "alpha_h":
        return x.affine(-1.0 / 20.0, 0.0).exp() * 0.07
    if rate_id == "beta_h":
        return (x.affine(-0.1, 3.0).exp() + 1.0).reciprocal()
    raise JetError(f"unknown rate id {rate_id!r}")


def jet_of_rate(rate_id: str, v, K: int) -> TaylorJet:
    """Taylor jet of order ``K`` of a gating rate at potential ``v``."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise JetError("potential must be finite")
    return rate_jet(rate_id, TaylorJet.variable(v, K))


def gating_drift_derivatives(v, n, m, h, K: int = 4) -> np.ndarray:
    """Matrix of d^k/dv^k of the gating drifts b2, b3, b4 for k = 1..K.

    Returns an array of shape ``(3, K, *batch)``; row i corresponds to
    (n, m, h), column k-1 to the k-th derivative.  Gating values are held fixed.
    """
    out = []
    for (a_id, b_id), g in ((("alpha_n", "beta_n"), n),
                            (("alpha_m", "beta_m"), m),
                            (("alpha_h", "beta_h"), h)):
        da = jet_of_rate(a_id, v, K).derivatives()[1:]
        db = jet_of_rate(b_id, v, K).derivatives()[1:]
        g = np.asarray(g, dtype=float)
        out.append(da * (1.0 - g) - db * g)
    return np.stack(out)
