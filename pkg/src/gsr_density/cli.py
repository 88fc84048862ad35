"""Command-line entry point: density grids, oracles and the verification suite.

Exit codes: 0 success, 1 failed check or unconverged cell, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import special_fns as sf
from .gsr_core import (
    DensityQuery,
    ModelParams,
    becker_identity_residual,
    cdf_laplace_transform_numeric,
    cdf_on_grid,
    cdf_zero_headstart_closed_form,
    chapman_kolmogorov,
    greens_final_value,
    greens_function,
    greens_mass,
    laplace_image_cdf_peskir,
    normalization,
    speed_measure,
    stationary_cdf,
    stationary_pdf,
    transition_pdf_grid,
)
from .oracles import (
    SCHEMES,
    PdeSpec,
    SimSpec,
    cdf_interpolant,
    default_threads,
    ks_test,
    simulate_endpoints,
    solve_forward_pde,
    triangulate,
)
from .quadrature import CANCELLATION_WARNING, CONVERGED, T_REJECT, QuadratureSpec

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_MU = (1.0, 1.5)
DEFAULT_T = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
CSV_HEADER = "x,r,p,err,flags"


class UsageError(ValueError):
    """Invalid command-line input; maps to exit code 2."""


def _fmt(v: float) -> str:
    return "%.17g" % v


def parse_range(text: str) -> np.ndarray:
    """'lo:hi:n' -> n equally spaced points."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError(f"range must look like lo:hi:n, got {text!r}") from None
    if not (lo >= 0 and hi > lo and n >= 2):
        raise UsageError(f"range needs lo >= 0, hi > lo and n >= 2, got {text!r}")
    return np.linspace(lo, hi, n)


def _check_times(ts) -> list[float]:
    ts = list(ts)
    if not ts:
        raise UsageError("at least one t is required")
    for t in ts:
        if not t >= T_REJECT:
            raise UsageError(f"t = {t} is below the smallest supported time {T_REJECT}")
    return ts


def _check_mus(mus) -> list[float]:
    mus = list(mus)
    if not mus:
        raise UsageError("at least one mu is required")
    for mu in mus:
        if not (math.isfinite(mu) and mu != 0):
            raise UsageError("mu must be finite and nonzero")
    return mus


def _quad_spec(tol: float | None) -> QuadratureSpec:
    if tol is None:
        return QuadratureSpec()
    if not tol > 0:
        raise UsageError("--tol must be > 0")
    return QuadratureSpec(tol, tol * 1e-3)


def _threads(n: int | None) -> int:
    if n is None:
        return default_threads()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _flag_text(flags) -> str:
    names = sorted(f for f in flags if f != CONVERGED)
    if CONVERGED not in flags:
        names.insert(0, "unconverged")
    return "|".join(names) if names else "ok"


def _write_manifest(path: Path, command: str, params: dict, extra: dict, started: float) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_clock_s": round(time.time() - started, 3),
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# pdf-grid


def pdf_rows(mu: float, t: float, xs: np.ndarray, rs: np.ndarray, spec: QuadratureSpec, threads: int = 1):
    """(x, r, p, err, flags) rows ordered by (r, x), plus the count of flagged rows."""
    params = ModelParams(mu)

    def one(r):
        return transition_pdf_grid(xs, t, float(r), params, spec)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, rs))
    else:
        results = [one(r) for r in rs]
    rows, n_flagged = [], 0
    for r, res in zip(rs, results):
        flag = _flag_text(res.flags)
        bad = CONVERGED not in res.flags or CANCELLATION_WARNING in res.flags
        vals = np.broadcast_to(np.asarray(res.value, float), xs.shape)
        errs = np.broadcast_to(np.asarray(res.err_estimate, float), xs.shape)
        for x, p, e in zip(xs, vals, errs):
            rows.append((float(x), float(r), float(p), float(e), flag))
        n_flagged += xs.size if bad else 0
    return rows, n_flagged


def write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_pdf_grid(args) -> int:
    started = time.time()
    mus = _check_mus(args.mu or DEFAULT_MU)
    ts = _check_times(DEFAULT_T if args.t is None else args.t)
    xs = parse_range(args.x_range)
    rs = parse_range(args.r_range)
    spec = _quad_spec(args.tol)
    threads = _threads(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for mu in mus:
        for t in ts:
            rows, n_flagged = pdf_rows(mu, t, xs, rs, spec, threads)
            name = f"pdf_mu{mu:g}_t{t:g}.csv"
            write_csv(out / name, CSV_HEADER, rows)
            cells.append({"mu": mu, "t": t, "file": name, "rows": len(rows), "flagged_rows": n_flagged,
                          "max_err": max(r[3] for r in rows)})
            print(f"{name}: {len(rows)} rows, {n_flagged} flagged", file=sys.stderr)
    _write_manifest(out / "manifest.json", "pdf-grid",
                    {"mu": mus, "t": ts, "x_range": args.x_range, "r_range": args.r_range},
                    {"quadrature": asdict(spec), "seed": None, "cells": cells}, started)
    flagged = sum(c["flagged_rows"] for c in cells)
    if flagged and not args.allow_flags:
        print(f"error: {flagged} rows did not converge cleanly (see flags column); "
              "pass --allow-flags to accept", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# cdf, stationary, greens


def cmd_cdf(args) -> int:
    started = time.time()
    mu = _check_mus([args.mu])[0]
    t = _check_times([args.t])[0]
    xs = parse_range(args.x_range)
    spec = QuadratureSpec(1e-9, 1e-11) if args.tol is None else _quad_spec(args.tol)
    params = ModelParams(mu)
    pos = xs > 0
    cdf = np.zeros(xs.shape)
    err = np.zeros(xs.shape)
    if pos.any():
        cdf[pos], err[pos], _ = cdf_on_grid(xs[pos], t, args.r, params, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"cdf_mu{mu:g}_t{t:g}_r{args.r:g}.csv"
    write_csv(out / name, "x,r,P,err", [(float(x), args.r, float(c), float(e)) for x, c, e in zip(xs, cdf, err)])
    _write_manifest(out / f"{name[:-4]}.manifest.json", "cdf",
                    {"mu": mu, "t": t, "r": args.r, "x_range": args.x_range}, {"quadrature": asdict(spec)}, started)
    return EXIT_OK


def cmd_stationary(args) -> int:
    mu = _check_mus([args.mu])[0]
    xs = parse_range(args.x_range)
    params = ModelParams(mu)
    rows = [(float(x), float(stationary_pdf(x, params)), float(stationary_cdf(x, params))) for x in xs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"stationary_mu{mu:g}.csv", "x,rho,P", rows)
    return EXIT_OK


def cmd_greens(args) -> int:
    mu = _check_mus([args.mu])[0]
    if not args.lam > 0:
        raise UsageError("--lam must be > 0")
    xs = parse_range(args.x_range)
    params = ModelParams(mu)
    rows = [(float(x), args.r, args.lam, float(np.real(greens_function(x, args.r, args.lam, params)))) for x in xs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"greens_mu{mu:g}_r{args.r:g}_lam{args.lam:g}.csv", "x,r,lam,G", rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracles


def cmd_simulate(args) -> int:
    started = time.time()
    mu = _check_mus([args.mu])[0]
    if args.n < 1 or args.steps < 1:
        raise UsageError("--n and --steps must be >= 1")
    if not args.t > 0:
        raise UsageError("--t must be > 0")
    if args.r < 0:
        raise UsageError("--r must be >= 0")
    params = ModelParams(mu)
    spec = SimSpec(args.n, args.steps, args.scheme, args.seed)
    res = simulate_endpoints(params, args.r, args.t, spec, _threads(args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"sim_mu{mu:g}_r{args.r:g}_t{args.t:g}_seed{args.seed}"
    np.save(out / f"{stem}.npy", res.samples)
    summary = {"diagnostics": res.diagnostics}
    if not args.no_ks and args.t >= T_REJECT:
        ks = ks_test(res.samples, cdf_interpolant(params, args.r, args.t))
        summary["ks"] = {"statistic": ks.statistic, "pvalue": ks.pvalue, "critical_1pct": ks.critical_1pct,
                         "passed": ks.passed}
        print(f"KS D = {ks.statistic:.3e}, p = {ks.pvalue:.4f}")
    _write_manifest(out / f"{stem}.json", "simulate",
                    {"mu": mu, "r": args.r, "t": args.t}, {"sim_spec": asdict(spec), "seed": args.seed, **summary},
                    started)
    return EXIT_OK


def cmd_pde(args) -> int:
    started = time.time()
    mu = _check_mus([args.mu])[0]
    if not args.t > 0:
        raise UsageError("--t must be > 0")
    spec = PdeSpec(n_x=args.nx, n_t=args.nt, theta=args.theta)
    res = solve_forward_pde(ModelParams(mu), args.r, args.t, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"pde_mu{mu:g}_r{args.r:g}_t{args.t:g}"
    write_csv(out / f"{stem}.csv", "x,p", zip(res.x.tolist(), res.p.tolist()))
    _write_manifest(out / f"{stem}.json", "pde", {"mu": mu, "r": args.r, "t": args.t},
                    {"pde_spec": asdict(spec), "max_mass_drift": res.max_mass_drift,
                     "boundary_mass": res.boundary_mass}, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

DEFAULT_TOLERANCES = {
    "w_degenerate": 1e-12,
    "w_evenness": 1e-12,
    "wronskian": 1e-6,
    "gamma_identity": 1e-12,
    "becker": 1e-7,
    "normalization": 1e-6,
    "symmetry": 1e-8,
    "greens_final_value": 1e-6,
    "greens_mass": 1e-7,
    "triangulation_pde": 1e-3,
    "triangulation_talbot": 1e-4,
    "triangulation_bessel": 1e-5,
    "chapman_kolmogorov": 1e-4,
    "cdf_closed_form": 1e-5,
    "cdf_laplace": 1e-5,
    "monte_carlo_ks": 1.0,
}


def load_tolerances(path: str | None) -> dict:
    tol = dict(DEFAULT_TOLERANCES)
    if path is None:
        return tol
    try:
        given = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read tolerance config: {exc}") from None
    if not isinstance(given, dict):
        raise UsageError("tolerance config must be a JSON object")
    for key, val in given.items():
        if key not in tol:
            raise UsageError(f"unknown tolerance {key!r}")
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
            raise UsageError(f"tolerance {key!r} must be a positive number")
        tol[key] = float(val)
    return tol


def _w_checks():
    zs = np.geomspace(0.01, 50, 40)
    deg = np.abs(sf.whittaker_W(sf.WhittakerIndex.real(0.5), zs) / (zs * np.exp(-zs / 2)) - 1)
    beta, z = np.meshgrid(np.linspace(0.1, 5, 12), np.geomspace(0.1, 50, 12))
    even = 0.0
    for b, zz in zip(beta.ravel(), z.ravel()):
        plus = sf.whittaker_W(sf.WhittakerIndex(1.0, 1j * b), zz)
        minus = sf.whittaker_W(sf.WhittakerIndex(1.0, -1j * b), zz)
        even = max(even, abs(minus / plus - 1))
    return float(deg.max()), float(even)


def fast_checks():
    def w_deg():
        return _w_checks()[0]

    def w_even():
        return _w_checks()[1]

    def wronskian():
        return max(sf.wronskian_check(sf.WhittakerIndex.imaginary(1.0), 2.0, 1e-4),
                   sf.wronskian_check(sf.WhittakerIndex.real(0.5), 3.0, 1e-4))

    def gamma_id():
        beta = np.linspace(0, 10, 101)
        direct = np.exp(2 * np.real(sf.log_gamma(1j * beta - 0.5)))
        return float(np.max(np.abs(sf.gamma_abs_sq_shifted(beta) / direct - 1)))

    def becker():
        return max(becker_identity_residual(2, 1, 1), becker_identity_residual(0.5, 0.5, 2.25))

    def norm():
        pts = [(1.0, 0.5, 0.0), (1.0, 2.0, 1.0), (1.5, 1.0, 1.0), (1.5, 5.0, 0.0)]
        return max(abs(normalization(t, r, ModelParams(mu)).value - 1) for mu, t, r in pts)

    return [("w_degenerate", w_deg), ("w_evenness", w_even), ("wronskian", wronskian),
            ("gamma_identity", gamma_id), ("becker", becker), ("normalization", norm)]


def full_checks():
    lattice = [(mu, t, r) for mu in (1.0, 1.5) for t in (1.0, 2.0) for r in (0.0, 1.0)]
    cache = {}

    def tri():
        if not cache:
            for mu, t, r in lattice:
                cache[(mu, t, r)] = triangulate(ModelParams(mu), t, r, [0.5, 1.0, 2.0])
        return cache

    def tri_err(method, relative):
        def run():
            worst = 0.0
            for est in tri().values():
                d = np.abs(est[method] - est["spectral"])
                worst = max(worst, float(np.max(d / np.abs(est["spectral"]) if relative else d)))
            return worst
        return run

    def symmetry():
        worst = 0.0
        pts = (0.25, 1.0, 2.5)
        for mu in (1.0, 1.5):
            params = ModelParams(mu)
            for t in (1.0, 2.0):
                for y in pts:
                    fwd = np.asarray(transition_pdf_grid(np.array(pts), t, y, params).value) / speed_measure(np.array(pts), params)
                    for i, x in enumerate(pts):
                        back = float(transition_pdf_grid(np.array([y]), t, x, params).value[0]) / speed_measure(y, params)
                        worst = max(worst, abs(fwd[i] / back - 1))
        return worst

    def final_value():
        params = ModelParams(1.0)
        return max(abs(greens_final_value(x, 1.0, params) - stationary_pdf(x, params)) for x in (0.5, 1.0, 2.0))

    def mass():
        res = greens_mass(1.0, 0.5, ModelParams(1.0))
        return abs(res.value - 2.0)

    def ck():
        integral, direct, _ = chapman_kolmogorov(1.0, 1.0, 1.0, 1.0, ModelParams(1.0))
        return abs(integral - direct)

    def cdf_closed():
        worst = 0.0
        for t in (0.5, 1.0, 2.0):
            xs = np.array([0.5, 1.0, 2.0])
            quad, _, _ = cdf_on_grid(xs, t, 0.0, ModelParams(1.0))
            for x, q in zip(xs, quad):
                worst = max(worst, abs(cdf_zero_headstart_closed_form(x, t).value - q))
        return worst

    def cdf_laplace():
        return max(abs(cdf_laplace_transform_numeric(x, lam).value - laplace_image_cdf_peskir(x, lam))
                   for x, lam in ((1.0, 1.0), (0.5, 2.0)))

    def mc_ks():
        # KS statistic over its 1% critical value, worst of the two configurations
        worst = 0.0
        for mu, r, t in ((1.0, 1.0, 1.0), (1.5, 0.0, 2.0)):
            params = ModelParams(mu)
            sim = simulate_endpoints(params, r, t, SimSpec(10**6, 100), default_threads())
            ks = ks_test(sim.samples, cdf_interpolant(params, r, t))
            worst = max(worst, ks.statistic / ks.critical_1pct)
        return worst

    return [("symmetry", symmetry), ("greens_final_value", final_value), ("greens_mass", mass),
            ("triangulation_pde", tri_err("pde", False)), ("triangulation_talbot", tri_err("talbot", False)),
            ("triangulation_bessel", tri_err("bessel", True)), ("chapman_kolmogorov", ck),
            ("cdf_closed_form", cdf_closed), ("cdf_laplace", cdf_laplace), ("monte_carlo_ks", mc_ks)]


def run_checks(checks, tol: dict, stream=None) -> bool:
    stream = stream or sys.stdout
    ok_all = True
    print(f"{'check':<22} {'residual':>11} {'tolerance':>10}  result  time", file=stream)
    for name, fn in checks:
        t0 = time.time()
        try:
            val = float(fn())
            ok = math.isfinite(val) and val <= tol[name]
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
            val, ok = float("nan"), False
            print(f"{name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        ok_all &= ok
        print(f"{name:<22} {val:11.3e} {tol[name]:10.1e}  {'PASS' if ok else 'FAIL':<6}  {time.time() - t0:.1f}s",
              file=stream, flush=True)
    return ok_all


def cmd_verify(args) -> int:
    tol = load_tolerances(args.config)
    checks = fast_checks()
    if args.level == "full":
        checks += full_checks()
    return EXIT_OK if run_checks(checks, tol) else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsr-density", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("pdf-grid", help="transition density on an (x, r) grid, one CSV per (mu, t)")
    g.add_argument("--mu", type=float, action="append", help="repeatable; default 1 and 1.5")
    g.add_argument("--t", type=float, nargs="*", help="time values; default 0.1 0.5 1 2 5 10")
    g.add_argument("--x-range", default="0:3:61")
    g.add_argument("--r-range", default="0:3:61")
    g.add_argument("--tol", type=float, help="relative quadrature tolerance")
    g.add_argument("--out", default="out")
    g.add_argument("--allow-flags", action="store_true", help="exit 0 even if some cells are flagged")
    g.add_argument("--threads", type=int)
    g.set_defaults(func=cmd_pdf_grid)

    c = sub.add_parser("cdf", help="P(x, t | r) on an x grid")
    c.add_argument("--mu", type=float, default=1.0)
    c.add_argument("--t", type=float, required=True)
    c.add_argument("--r", type=float, default=0.0)
    c.add_argument("--x-range", default="0:3:61")
    c.add_argument("--tol", type=float)
    c.add_argument("--out", default="out")
    c.set_defaults(func=cmd_cdf)

    s = sub.add_parser("stationary", help="stationary density and cdf")
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--x-range", default="0:3:61")
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_stationary)

    gr = sub.add_parser("greens", help="resolvent kernel G_lam(x, r) for real lam > 0")
    gr.add_argument("--mu", type=float, default=1.0)
    gr.add_argument("--r", type=float, default=0.0)
    gr.add_argument("--lam", type=float, default=1.0)
    gr.add_argument("--x-range", default="0:3:61")
    gr.add_argument("--out", default="out")
    gr.set_defaults(func=cmd_greens)

    m = sub.add_parser("simulate", help="Monte Carlo endpoints and a KS test against the cdf")
    m.add_argument("--mu", type=float, default=1.0)
    m.add_argument("--r", type=float, default=1.0)
    m.add_argument("--t", type=float, default=1.0)
    m.add_argument("--n", type=int, default=10**6)
    m.add_argument("--steps", type=int, default=100)
    m.add_argument("--scheme", choices=SCHEMES, default="log_exact_gbm_composite")
    m.add_argument("--seed", type=int, default=20240611)
    m.add_argument("--threads", type=int)
    m.add_argument("--no-ks", action="store_true", help="skip the KS test")
    m.add_argument("--out", default="out")
    m.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pde", help="finite-volume solution of the forward equation")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--nx", type=int, default=PdeSpec.n_x)
    p.add_argument("--nt", type=int, default=PdeSpec.n_t)
    p.add_argument("--theta", type=float, default=PdeSpec.theta)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_pde)

    v = sub.add_parser("verify", help="run the identity and oracle checks")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--config", help="JSON object overriding tolerances by check name")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gsr-density: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"gsr-density: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
