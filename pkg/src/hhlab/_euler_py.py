"""Pure numpy Euler-Maruyama stepping, same contract as the compiled kernel.

Vectorised across paths instead of steps, so results agree with the compiled
version to rounding but not bit for bit.
"""
from __future__ import annotations

import numpy as np

WINDOW = 1e-3


def _ratio(u):
    small = np.abs(u) < WINDOW
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = u / np.expm1(u)
    u2 = u * u
    return np.where(small, 1.0 - 0.5 * u + u2 / 12.0 - u2 * u2 / 720.0, direct)


def em_advance(x, s_vals, noise, dt, tau, sig, mode, out=None, every=1):
    """See :func:`hhlab._euler.em_advance`."""
    N = x.shape[0]
    ns = len(s_vals)
    if noise.shape[0] != N or noise.shape[1] < ns:
        raise ValueError("noise must have shape (N, >= nsteps)")
    if out is not None and (out.shape[0] != N or out.shape[1] < ns // every):
        raise ValueError("out too small")
    v, n, m, h, z = (x[:, c].copy() for c in range(5))
    sq = np.sqrt(dt)
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(ns):
            an = 0.1 * _ratio(1.0 - 0.1 * v)
            bn = 0.125 * np.exp(-v / 80.0)
            am = _ratio(2.5 - 0.1 * v)
            bm = 4.0 * np.exp(-v / 18.0)
            ah = 0.07 * np.exp(-v / 20.0)
            bh = 1.0 / (np.exp(3.0 - 0.1 * v) + 1.0)
            n2 = n * n
            F = (36.0 * (n2 * n2) * (v + 12.0) + 120.0 * (m * m * m) * h * (v - 120.0)
                 + 0.3 * (v - 10.6))
            dw = sig * sq * noise[:, j]
            if mode == 0:
                inp = (s_vals[j] - z) * tau
                v = v + (inp - F) * dt + dw
                z = z + inp * dt + dw
            else:
                v = v + (s_vals[j] - F) * dt + dw
            n = np.clip(n + (an * (1.0 - n) - bn * n) * dt, 0.0, 1.0)
            m = np.clip(m + (am * (1.0 - m) - bm * m) * dt, 0.0, 1.0)
            h = np.clip(h + (ah * (1.0 - h) - bh * h) * dt, 0.0, 1.0)
            if out is not None and (j + 1) % every == 0:
                out[:, k] = np.column_stack([v, n, m, h, z])
                k += 1
    x[:] = np.column_stack([v, n, m, h, z])
    bad = np.flatnonzero(~(np.isfinite(v) & np.isfinite(z)))
    return int(bad[0]) if bad.size else -1
