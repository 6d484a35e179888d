"""Compare the compiled and pure-Python Euler kernels.

Usage: python benchmarks/bench_kernels.py [--paths N] [--steps K] [--repeat R]
"""
import argparse
import time

import numpy as np

from hhlab import kernels
from hhlab.model import rest_state


def _time(fn, x0, args, repeat):
    # the kernel advances x in place, so each repeat starts from a copy
    best = np.inf
    for _ in range(repeat):
        x = x0.copy()
        t0 = time.perf_counter()
        fn(x, *args)
        best = min(best, time.perf_counter() - t0)
    return best, x


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    x0 = np.tile(rest_state(0.0, 10.0).as_array(), (a.paths, 1))
    s_vals = np.full(a.steps, 10.0)
    noise = rng.standard_normal((a.paths, a.steps))
    args = (s_vals, noise, 0.01, 0.5, 5.0, 0)

    t_py, out_py = _time(kernels.python_em_advance, x0, args, a.repeat)
    per = a.paths * a.steps
    print(f"python    {t_py:8.3f} s  {1e9 * t_py / per:8.1f} ns/path-step")
    fn = kernels.compiled_em_advance()
    if fn is None:
        print("compiled  not built")
        return 0
    t_c, out_c = _time(fn, x0, args, a.repeat)
    diff = float(np.max(np.abs(np.asarray(out_c) - np.asarray(out_py))))
    print(f"compiled  {t_c:8.3f} s  {1e9 * t_c / per:8.1f} ns/path-step")
    print(f"speedup   {t_py / t_c:8.1f}x   max |diff| = {diff:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
