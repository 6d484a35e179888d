"""High-precision reference values for the gating determinant.

Independent of the package: rates are written out in mpmath, derivatives
come from mpmath's numerical differentiation at 30 digits and roots from
its secant solver.  The printed numbers are frozen in test_hormander.py.

Usage: python tests/oracles/curve_roots.py
"""
import mpmath as mp

mp.mp.dps = 30

RATES = {
    "an": lambda v: mp.mpf("0.01") * (10 - v) / (mp.exp(1 - v / 10) - 1),
    "bn": lambda v: mp.mpf("0.125") * mp.exp(-v / 80),
    "am": lambda v: mp.mpf("0.1") * (25 - v) / (mp.exp(mp.mpf("2.5") - v / 10) - 1),
    "bm": lambda v: 4 * mp.exp(-v / 18),
    "ah": lambda v: mp.mpf("0.07") * mp.exp(-v / 20),
    "bh": lambda v: 1 / (mp.exp(3 - v / 10) + 1),
}
PAIRS = (("an", "bn"), ("am", "bm"), ("ah", "bh"))


def gating_inf(v):
    return [RATES[a](v) / (RATES[a](v) + RATES[b](v)) for a, b in PAIRS]


def det_d(v, gates, weighted=True):
    rows = []
    for (a, b), g in zip(PAIRS, gates):
        da = [mp.diff(RATES[a], v, k) for k in (2, 3, 4)]
        db = [mp.diff(RATES[b], v, k) for k in (2, 3, 4)]
        rows.append([x * (1 - g) - y * g if weighted else x - y * g for x, y in zip(da, db)])
    return mp.det(mp.matrix(rows))


def det_on_curve(v, weighted=True):
    return det_d(v, gating_inf(v), weighted)


if __name__ == "__main__":
    for w, guesses in ((True, [11.0]), (False, [-11.5, 10.3])):
        roots = [mp.findroot(lambda x: det_on_curve(x, w), g) for g in guesses]
        print("weighted" if w else "unweighted", [mp.nstr(r, 12) for r in roots])
    for p in [(-30.0, 0.3, 0.05, 0.6), (-5.5, 0.1, 0.9, 0.2), (20.25, 0.7, 0.4, 0.9),
              (-200.0, 0.5, 0.5, 0.5), (42.0, 0.2, 0.8, 0.1)]:
        print(p, mp.nstr(det_d(mp.mpf(p[0]), [mp.mpf(x) for x in p[1:]]), 17))
