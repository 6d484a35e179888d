# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Euler-Maruyama stepping for batches of HH paths."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, fabs, sqrt, isfinite

cnp.import_array()

cdef double WINDOW = 1e-3


cdef inline double ratio(double u) nogil:
    # u / (e^u - 1), series near the removable singularity
    cdef double u2
    if fabs(u) < WINDOW:
        u2 = u * u
        return 1.0 - 0.5 * u + u2 / 12.0 - u2 * u2 / 720.0
    return u / expm1(u)


cdef inline double clamp01(double g) nogil:
    if g < 0.0:
        return 0.0
    if g > 1.0:
        return 1.0
    return g


def em_advance(double[:, ::1] x, const double[::1] s_vals, const double[:, ::1] noise,
               double dt, double tau, double sig, int mode,
               double[:, :, ::1] out=None, int every=1):
    """Advance every row of ``x`` (N, 5) in place by ``len(s_vals)`` steps.

    ``s_vals[j]`` is the signal at the start of step j and ``noise[i, j]`` the
    standard normal for path i at step j.  mode 0 integrates the OU-driven
    system, mode 1 the classical system with the signal as injected current.
    When ``out`` is given, the state after every ``every``-th step is stored
    in ``out[i, k]``.  Returns the index of the first path that became
    non-finite, or -1.
    """
    cdef Py_ssize_t N = x.shape[0], ns = s_vals.shape[0], i, j, k
    cdef double v, n, m, h, z, inp, F, dw, an, bn, am, bm, ah, bh, sq = sqrt(dt)
    cdef double n4, m3
    cdef int bad = -1
    cdef bint record = out is not None
    if noise.shape[0] != N or noise.shape[1] < ns:
        raise ValueError("noise must have shape (N, >= nsteps)")
    if record and (out.shape[0] != N or out.shape[1] < ns // every):
        raise ValueError("out too small")
    with nogil:
        for i in range(N):
            v = x[i, 0]; n = x[i, 1]; m = x[i, 2]; h = x[i, 3]; z = x[i, 4]
            k = 0
            for j in range(ns):
                an = 0.1 * ratio(1.0 - 0.1 * v)
                bn = 0.125 * exp(-v / 80.0)
                am = ratio(2.5 - 0.1 * v)
                bm = 4.0 * exp(-v / 18.0)
                ah = 0.07 * exp(-v / 20.0)
                bh = 1.0 / (exp(3.0 - 0.1 * v) + 1.0)
                n4 = n * n; n4 = n4 * n4
                m3 = m * m * m
                F = 36.0 * n4 * (v + 12.0) + 120.0 * m3 * h * (v - 120.0) + 0.3 * (v - 10.6)
                dw = sig * sq * noise[i, j]
                if mode == 0:
                    inp = (s_vals[j] - z) * tau
                    v = v + (inp - F) * dt + dw
                    z = z + inp * dt + dw
                else:
                    v = v + (s_vals[j] - F) * dt + dw
                n = clamp01(n + (an * (1.0 - n) - bn * n) * dt)
                m = clamp01(m + (am * (1.0 - m) - bm * m) * dt)
                h = clamp01(h + (ah * (1.0 - h) - bh * h) * dt)
                if record and (j + 1) % every == 0:
                    out[i, k, 0] = v; out[i, k, 1] = n; out[i, k, 2] = m
                    out[i, k, 3] = h; out[i, k, 4] = z
                    k = k + 1
            x[i, 0] = v; x[i, 1] = n; x[i, 2] = m; x[i, 3] = h; x[i, 4] = z
            if bad < 0 and not (isfinite(v) and isfinite(z)):
                bad = <int>i
    return bad
