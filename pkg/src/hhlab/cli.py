"""Command-line runner.

Every command reads an INI config (see ``hhlab.config``), writes CSV and SVG
files plus ``manifest.json`` into ``--out``, and prints a short report.
Outputs depend only on the config, the seed and the package version.

Exit codes: 0 ok, 2 config error, 3 runtime error, 4 insufficient data.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, control, ergodic, hormander, model, sde
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .kernels import BACKEND

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DATA = 0, 2, 3, 4

CSV_HELP = """\
CSV files (header row, floats written with repr):
  scan-hormander  curve.csv   v, D
                  roots.csv   root, bracket_lo, bracket_hi
                  rank.csv    t, v, n, m, h, zeta, D, rank
  simulate        trajectory.csv  t, v, n, m, h, zeta
                  spikes.csv      t
  control-demo    control.csv  s, vbar, nbar, mbar, hbar, hdot, J
                  replay.csv   t, v, n, m, h, zeta
  ergodicity      drift.csv    radius, v, n, m, h, zeta, estimate, se, negative
                  balls.csv    ball, beta, eps, x_v..x_zeta, y_v..y_zeta
                  regenerations.csv  chain, index, ball
                  invariant.csv  quantity, value, ci_lo, ci_hi
                  multistart.csv  i, j, d_vzeta, d_gating
                  invariance.csv  phase, residual, noise_floor, ratio
  ou-validate     ou.csv   k, mean, se, variance
"""


# --------------------------------------------------------------------------
# writers

def _cell(x) -> str:
    return x if isinstance(x, str) else repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    """Numeric tables go through the exact writer; mixed rows keep text cells."""
    if any(isinstance(c, str) for r in rows for c in r):
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(_cell(c) for c in r) + "\n")
        return
    sde.write_rows(path, header, rows)


def write_svg(path: Path, x, y, *, title: str = "", xlabel: str = "", ylabel: str = "",
              hline: float | None = None, width: int = 640, height: int = 400) -> None:
    """Single polyline plot with axis extents printed in the corners."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    pad = 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="14">{title}</text>']
    if len(x) >= 2:
        x0, x1 = float(x.min()), float(x.max())
        y0, y1 = float(y.min()), float(y.max())
        if hline is not None:
            y0, y1 = min(y0, hline), max(y1, hline)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0

        def px(a):
            return pad + (a - x0) / (x1 - x0) * (width - 2 * pad)

        def py(b):
            return height - pad - (b - y0) / (y1 - y0) * (height - 2 * pad)

        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>')
        if hline is not None:
            parts.append(f'<line x1="{pad}" x2="{width - pad}" y1="{py(hline):.2f}" '
                         f'y2="{py(hline):.2f}" stroke="gray" stroke-dasharray="4"/>')
        parts.append(f'<text x="{pad}" y="{height - 10}" font-size="11">{xlabel}: '
                     f'{x0:.6g} .. {x1:.6g}</text>')
        parts.append(f'<text x="{width - 260}" y="20" font-size="11">{ylabel}: '
                     f'{y0:.6g} .. {y1:.6g}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_manifest(out: Path, rc: RunConfig, results: dict) -> Path:
    doc = {"version": __version__, "config": rc.as_dict(), "results": results,
           "constants": {"spike_threshold_mV": sde.SPIKE_THRESHOLD,
                         "spike_debounce_ms": sde.SPIKE_DEBOUNCE}}
    path = out / "manifest.json"
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path


def _start_state(value, rc: RunConfig) -> model.State5:
    """``equilibrium``, ``rest`` or five comma-separated numbers.

    ``equilibrium`` is the deterministic rest point for the constant part
    c0 of the signal: F_inf(v) = c0 for the classical system, F_inf(v) = 0
    with zeta = c0 for the OU-driven one.  ``rest`` is v = 0 with zeta = c0.
    """
    c0 = rc.signal.c0
    if isinstance(value, tuple):
        vals = value
    else:
        key = str(value).strip().lower()
        if key == "equilibrium":
            level = c0 if rc.sim.system == "hh" else 0.0
            return model.rest_state(model.equilibrium_for_input(level), zeta=c0)
        if key == "rest":
            return model.rest_state(0.0, zeta=c0)
        try:
            vals = tuple(float(p) for p in key.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"x0 must be 'equilibrium', 'rest' or five numbers, got {value!r}") from None
    if len(vals) != 5:
        raise ConfigError(f"x0 needs five numbers (v, n, m, h, zeta), got {len(vals)}")
    try:
        return model.State5(*vals)
    except ValueError as exc:
        raise ConfigError(f"x0: {exc}") from None


# --------------------------------------------------------------------------
# commands

def cmd_scan_hormander(rc: RunConfig) -> dict:
    p = rc.params
    out = rc.out
    scan = hormander.scan_equilibrium_curve(p["v_lo"], p["v_hi"], p["step"],
                                            opening_weighted=p["opening_weighted"])
    write_csv(out / "curve.csv", ("v", "D"), np.column_stack([scan.v, scan.D]))
    write_csv(out / "roots.csv", ("root", "bracket_lo", "bracket_hi"),
              [(r, a, b) for r, (a, b) in zip(scan.roots, scan.brackets)])
    write_svg(out / "curve.svg", scan.v, scan.D, title="D on the equilibrium curve",
              xlabel="v", ylabel="D", hline=0.0)
    for r in scan.roots:
        print(f"root v = {r:.6f}")
    if not scan.roots:
        print("no roots in range")
    res = {"roots": scan.roots, "n_samples": len(scan.v)}
    n = p["rank_points"]
    if n > 0:
        pts = hormander.sample_nondegenerate_points(
            n, rc.signal, rc.seed, v_range=(p["rank_v_lo"], p["rank_v_hi"]),
            zeta_range=(-p["rank_zeta"], p["rank_zeta"]), min_abs_d=p["rank_min_abs_d"])
        ranks, _ = hormander.rank_at_points(pts, rc.signal)
        d = hormander.determinant_D(*pts[:, 1:5].T)
        write_csv(out / "rank.csv", ("t", "v", "n", "m", "h", "zeta", "D", "rank"),
                  np.column_stack([pts, d, ranks]))
        res.update(rank_points=int(n), rank_deficient=int(np.sum(ranks < 5)))
        print(f"bracket rank 5 at {int(np.sum(ranks == 5))} of {n} points with |D| > "
              f"{p['rank_min_abs_d']:g}")
    return res


def cmd_simulate(rc: RunConfig) -> dict:
    x0 = _start_state(rc.params["x0"], rc)
    tr = sde.simulate(x0, rc.sim, rc.signal, record_every=rc.params["record_every"])
    tr.to_csv(rc.out / "trajectory.csv")
    spikes = sde.spike_times(tr.times, tr.states[:, 0])
    write_csv(rc.out / "spikes.csv", ("t",), spikes[:, None])
    write_svg(rc.out / "v.svg", tr.times, tr.states[:, 0], title="membrane potential",
              xlabel="t [ms]", ylabel="v [mV]")
    g = tr.states[:, 1:4]
    res = {"x0": x0.as_array(), "spike_count": len(spikes),
           "gating_min": g.min(axis=0), "gating_max": g.max(axis=0),
           "v_min": float(tr.states[:, 0].min()), "v_max": float(tr.states[:, 0].max())}
    print(f"spikes: {len(spikes)} over {rc.sim.t_end:g} ms")
    print("gating min: " + ", ".join(f"{a:.4f}" for a in res["gating_min"]))
    print("gating max: " + ", ".join(f"{a:.4f}" for a in res["gating_max"]))
    return res


def cmd_control_demo(rc: RunConfig) -> dict:
    p = rc.params
    x0 = _start_state(p["x0"], rc)
    t_end = None if str(p["t_end"]).lower() == "auto" else float(p["t_end"])
    att = control.attainability_check(x0, p["eps"], rc.signal, grid_dt=p["grid_dt"], t_end=t_end)
    att.path.to_csv(rc.out / "control.csv")
    times = att.path.s[::2]
    write_csv(rc.out / "replay.csv", ("t", "v", "n", "m", "h", "zeta"),
              np.column_stack([times, att.replay.states]))
    write_svg(rc.out / "control.svg", att.path.s, att.path.hdot, title="control hdot",
              xlabel="s", ylabel="hdot")
    rates = control.measured_decay_rates(att.path)
    res = {"t0": att.t0, "eps": att.eps, "distance": att.distance,
           "gating_distance": att.replay.gating_distance,
           "terminal": att.replay.terminal.as_array(), "pass": bool(att.ok),
           "max_deviation": att.replay.max_deviation, "energy": att.path.energy(),
           "measured_decay_rates": rates, "decay_rates": control.decay_rates(0.0)}
    print(f"horizon t0 = {att.t0:.6g}")
    print(f"terminal distance to y* = {att.distance:.6g} (eps = {att.eps:g}): "
          f"{'PASS' if att.ok else 'FAIL'}")
    return res


def _ergodicity(rc: RunConfig) -> dict:
    p = rc.params
    spec, sim, seed = rc.signal, rc.sim, rc.seed
    out = rc.out
    res = {}
    lcfg = ergodic.LyapunovConfig(mc=p["lyap_mc"])
    fit = ergodic.fit_generator_constants(spec, lcfg)
    res["generator_fit"] = {"c1": fit.c1, "c2": fit.c2, "validation_max": fit.validation_max}
    res["lyapunov_offset"] = lcfg.offset
    scan = ergodic.find_compact(spec, lcfg, seed, radii=p["lyap_radii"], mc=p["lyap_mc"], sim=sim)
    rows = [(r, *d.x, d.estimate, d.se, int(d.negative))
            for r, pts in scan.results.items() for d in pts]
    write_csv(out / "drift.csv", ("radius", "v", "n", "m", "h", "zeta", "estimate", "se",
                                  "negative"), rows)
    res["C2"] = scan.C2
    outside = [d for pts in scan.results.values() for d in pts
               if ergodic.outside_compact(d.x, scan.C2)]
    res["drift_epsilon"] = float(min((-d.estimate for d in outside), default=math.nan))
    print(f"generator fit c1 = {fit.c1:.4g}, c2 = {fit.c2:.4g}; compact C2 = {scan.C2:g}")

    X, Y, last = ergodic.transition_pairs(spec, sim, p["transition_chains"],
                                          p["transition_steps"], max(scan.C2, 1.0),
                                          burn_in=p["burn_in"])
    mres = ergodic.find_minorization(X, Y, n_balls=p["balls"])
    balls = mres.balls
    write_csv(out / "balls.csv", ("ball", "beta", "eps", "x_v", "x_n", "x_m", "x_h", "x_zeta",
                                  "y_v", "y_n", "y_m", "y_h", "y_zeta"),
              [(k, b.beta, b.eps, *b.x_center, *b.y_center) for k, b in enumerate(balls)])
    res["balls"] = [{"beta": b.beta, "eps": b.eps, "x": b.x_center, "y": b.y_center,
                     "metric_L": b.whitening.L} for b in balls]
    print(f"{len(balls)} minorization ball(s), beta = "
          + ", ".join(f"{b.beta:.4g}" for b in balls))

    C = p["regen_chains"]
    run = ergodic.run_split_chains(np.tile(balls[0].y_center, (C, 1)), balls, p["max_steps"],
                                   ergodic.hh_step(spec, sim), seed, start_regenerated=True,
                                   cycles_per_chain=p["cycles_per_chain"])
    recs = run.records()
    write_csv(out / "regenerations.csv", ("chain", "index", "ball"),
              [(r.path_id, int(i), r.ball) for r in recs for i in r.times])
    try:
        one = ergodic.regeneration_invariant_estimate(run.paths, recs, lambda c: np.ones(len(c)),
                                                      seed=seed)
    except ergodic.InsufficientDataError as exc:
        raise ergodic.InsufficientDataError(
            f"{exc}; suggested budget: regen_chains >= {2 * max(C, 30)} or "
            f"max_steps >= {2 * p['max_steps']}") from None
    zeta = ergodic.regeneration_invariant_estimate(run.paths, recs, lambda c: c[:, 4], seed=seed)
    v = ergodic.regeneration_invariant_estimate(run.paths, recs, lambda c: c[:, 0], seed=seed)
    ou_mean = sde.m_moving_average(spec, 0.0)
    write_csv(out / "invariant.csv", ("quantity", "value", "ci_lo", "ci_hi"),
              [("one", one.value, *one.ci), ("zeta", zeta.value, *zeta.ci),
               ("v", v.value, *v.ci), ("ou_mean_zeta", ou_mean, ou_mean, ou_mean)])
    res["invariant"] = {"cycles": one.n_cycles, "mean_cycle_length": one.mean_cycle_length,
                        "one": one.value, "zeta": zeta.value, "zeta_ci": zeta.ci,
                        "v": v.value, "v_ci": v.ci, "ou_mean_zeta": ou_mean,
                        "zeta_covers_ou_mean": zeta.covers(ou_mean)}
    print(f"{one.n_cycles} cycles; E[zeta] = {zeta.value:.4f} "
          f"CI [{zeta.ci[0]:.4f}, {zeta.ci[1]:.4f}] vs OU mean {ou_mean:.4f}")

    starts = [last[0], last[len(last) // 2],
              model.rest_state(0.0, zeta=spec.c0).as_array(),
              np.array([60.0, 0.5, 0.5, 0.5, spec.c0 + 20.0])]
    ms = ergodic.multi_start_diagnostic(starts, p["multistart_k"], sim, spec,
                                        n_paths=p["multistart_paths"])
    k = len(starts)
    write_csv(out / "multistart.csv", ("i", "j", "d_vzeta", "d_gating"),
              [(i, j, ms.d_vzeta[i, j], ms.d_gating[i, j]) for i in range(k) for j in range(k)])
    res["multistart"] = {"noise_floor": ms.noise_floor, "threshold": ms.threshold,
                         "clusters": ms.clusters}
    print(f"multi-start clusters: {[int(c) for c in ms.clusters]}")

    inv_rows = []
    for frac in p["invariance_phases"]:
        s = frac * spec.period
        chk = ergodic.periodic_invariance_check(zeta.measure, s, sim, spec,
                                                n_rep=p["invariance_reps"],
                                                sample_size=p["invariance_samples"])
        inv_rows.append((s, chk.residual, chk.noise_floor, chk.ratio))
        print(f"invariance at s = {s:g}: residual/floor = {chk.ratio:.3f}")
    write_csv(out / "invariance.csv", ("phase", "residual", "noise_floor", "ratio"), inv_rows)
    res["invariance"] = [{"phase": r[0], "residual": r[1], "noise_floor": r[2], "ratio": r[3]}
                         for r in inv_rows]
    return res


def cmd_ergodicity(rc: RunConfig) -> dict:
    return _ergodicity(rc)


def cmd_ou_validate(rc: RunConfig) -> dict:
    """Exact OU skeleton from N(start_mean, start_var): per-k mean and variance."""
    p = rc.params
    chk = sde.ou_stationarity_check(rc.signal, p["n_paths"], p["k_max"], rc.seed,
                                    start_mean=p["start_mean"], start_var=p["start_var"])
    write_csv(rc.out / "ou.csv", ("k", "mean", "se", "variance"),
              np.column_stack([chk.k, chk.mean, chk.se, chk.variance]))
    ok = chk.passes()
    print(f"stationary mean {chk.stationary_mean:.6g}, variance {chk.stationary_variance:.6g}; "
          f"max |z| = {chk.max_abs_z:.3f}, max relative variance error = "
          f"{chk.max_rel_var_error:.4f}: {'PASS' if ok else 'FAIL'}")
    return {"stationary_mean": chk.stationary_mean,
            "stationary_variance": chk.stationary_variance, "max_abs_z": chk.max_abs_z,
            "max_rel_var_error": chk.max_rel_var_error, "pass": ok}


HANDLERS = {
    "scan-hormander": cmd_scan_hormander,
    "simulate": cmd_simulate,
    "control-demo": cmd_control_demo,
    "ergodicity": cmd_ergodicity,
    "ou-validate": cmd_ou_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hhlab", description="Stochastic Hodgkin-Huxley laboratory.",
        epilog=CSV_HELP + "\nExit codes: 0 ok, 2 config error, 3 runtime error, "
        "4 insufficient data.", formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "scan-hormander": "roots of D on the equilibrium curve and bracket ranks",
        "simulate": "one trajectory with spike count and gating range",
        "control-demo": "steer a start state to the resting point and replay",
        "ergodicity": "drift, minorization, regeneration and invariance diagnostics",
        "ou-validate": "stationarity of the exact OU skeleton",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], epilog=CSV_HELP,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", type=Path, default=None, help="INI file (default: built-in)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the [sim] seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_config(args.config, args.command, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rc.out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        results = HANDLERS[rc.command](rc)
        write_manifest(rc.out, rc, results)
    except (ConfigError, sde.ConfigError, model.InputRangeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ergodic.InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except control.HorizonError as exc:
        print(f"horizon error: {exc} (required t0 = {exc.required:g})", file=sys.stderr)
        return EXIT_RUNTIME
    except (sde.SimulationError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {rc.out} ({time.perf_counter() - t0:.1f} s, kernel {BACKEND})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
