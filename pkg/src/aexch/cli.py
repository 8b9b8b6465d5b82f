"""Command-line front end.

Exit codes: 0 ok, 1 numerical failure, 2 bad configuration or arguments,
3 I/O error, 4 phase guard (a stable phase was required but not found).
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, engine, figures, kinetic, reversibility
from .exponent import Phase, flat_interface_residual, solve_exponent, yard_sale_critical_p
from .returns import DistributionError, moments, parse_distribution

log = logging.getLogger("aexch")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_IO, EXIT_PHASE = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key '{key}': {message}" if key else message)
        self.key = key


class PhaseGuard(RuntimeError):
    pass


# -- config -----------------------------------------------------------------

SIM_KEYS = {
    "dist": str,
    "N": int,
    "sweeps": int,
    "seed": int,
    "measure_every": int,
    "initial": str,
    "total_wealth": float,
    "bins": int,
    "replicas": int,
}
SIM_DEFAULTS = {"seed": 0, "initial": "egalitarian", "bins": 60, "replicas": 1}
SIM_REQUIRED = ("dist", "N", "sweeps")


def parse_config(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(None, f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        out[key] = value
    return out


def _convert(key, value, kind):
    try:
        if kind is int:
            return int(value, 0) if isinstance(value, str) else int(value)
        return kind(value)
    except ValueError:
        raise ConfigError(key, f"cannot read {value!r} as {kind.__name__}") from None


def simulation_settings(raw, base_dir=None):
    unknown = sorted(set(raw) - set(SIM_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in SIM_REQUIRED:
        if key not in raw:
            raise ConfigError(key, "missing required key")
    s = dict(SIM_DEFAULTS)
    for key, value in raw.items():
        s[key] = _convert(key, value, SIM_KEYS[key])
    try:
        s["dist"] = parse_distribution(s["dist"], base_dir=base_dir)
    except DistributionError as exc:
        raise ConfigError("dist", str(exc)) from None
    for key, low in (("N", 2), ("sweeps", 1), ("bins", 1), ("replicas", 1)):
        if s[key] < low:
            raise ConfigError(key, f"must be >= {low}, got {s[key]}")
    if "measure_every" in s and s["measure_every"] < 1:
        raise ConfigError("measure_every", "must be >= 1")
    if not 0 <= s["seed"] < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    if s["initial"] != "egalitarian" and base_dir is not None and not Path(s["initial"]).is_absolute():
        s["initial"] = str(Path(base_dir) / s["initial"])
    return s


def digest(data):
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def write_manifest(out_dir, subcommand, config_digest, seed, outputs, started):
    out_dir = Path(out_dir)
    manifest = {
        "tool": "aexch",
        "version": __version__,
        "subcommand": subcommand,
        "config_digest": config_digest,
        "seed": seed,
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
        "duration_s": round(time.monotonic() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def worker_count(requested):
    cap = os.environ.get("AEXCH_THREADS")
    jobs = max(1, requested)
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigError("AEXCH_THREADS", f"not an integer: {cap!r}") from None
    return jobs


# -- simulate ---------------------------------------------------------------


def _simulate_one(settings, seed, out_dir, config_digest=None):
    started = time.monotonic()
    cfg = engine.SimConfig(
        N=settings["N"],
        sweeps=settings["sweeps"],
        dist=settings["dist"],
        seed=seed,
        measure_every=settings.get("measure_every"),
        initial=settings["initial"],
        total_wealth=settings.get("total_wealth"),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for snap in engine.run(cfg):
        sweep = snap.trade_count // snap.N
        outputs.append(engine.write_snapshot(snap, out_dir / f"snapshot_{sweep:08d}.txt"))
        h = analysis.histogram(analysis.mean_one(snap.wealths), bins=settings["bins"])
        outputs.append(h.to_csv(out_dir / f"hist_{sweep:08d}.csv"))
    if config_digest is not None:
        write_manifest(out_dir, "simulate", config_digest, seed, outputs, started)
    return [str(p) for p in outputs]


def cmd_simulate(args):
    started = time.monotonic()
    cfg_path = Path(args.config)
    text = cfg_path.read_bytes()
    settings = simulation_settings(parse_config(text.decode()), base_dir=cfg_path.parent)
    if args.replicas is not None:
        if args.replicas < 1:
            raise ConfigError("replicas", "must be >= 1")
        settings["replicas"] = args.replicas
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = settings["replicas"]
    seeds = [(settings["seed"] + i) % 2**64 for i in range(k)]
    dirs = [out] if k == 1 else [out / f"replica_{i:03d}" for i in range(k)]
    jobs = min(worker_count(args.jobs), k)
    # each replica directory gets its own manifest; a single run uses the top one
    sub_digest = [digest(text)] * k if k > 1 else [None]
    if jobs == 1:
        results = [_simulate_one(settings, s, d, g) for s, d, g in zip(seeds, dirs, sub_digest)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_one, [settings] * k, seeds, dirs, sub_digest))
    outputs = [p for r in results for p in r]
    write_manifest(out, "simulate", digest(text), settings["seed"], outputs, started)
    return EXIT_OK


# -- exponent and interface ---------------------------------------------------


def format_exponent_row(report):
    phase = report.phase.value
    lgm = f"{report.log_gain_mean:.10g}"
    if report.phase is Phase.CONDENSING:
        return f"{phase},,,{lgm}"
    T = "inf" if math.isinf(report.T) else f"{report.T:.10f}"
    T1 = "" if math.isnan(report.T_first_order) else f"{report.T_first_order:.10f}"
    return f"{phase},{T},{T1},{lgm}"


def _dist_arg(text):
    try:
        return parse_distribution(text, base_dir=Path.cwd())
    except DistributionError as exc:
        raise ConfigError("dist", str(exc)) from None


def _guard(report, required):
    if required and report.phase is not Phase.STABLE:
        raise PhaseGuard(f"phase is {report.phase.value} (<ln(1+kappa)> = {report.log_gain_mean:.6g})")


def cmd_solve_exponent(args):
    report = solve_exponent(_dist_arg(args.dist))
    if args.header:
        print("phase,T,T_first_order,log_gain_mean")
    print(format_exponent_row(report))
    _guard(report, args.require_stable)
    return EXIT_OK


def cmd_interface(args):
    lines = []
    if args.kind == "yard-sale":
        lines.append("f,p_c")
        for f in args.f:
            lines.append(f"{f!r},{yard_sale_critical_p(f)!r}")
    else:
        lines.append("a,b,residual,phase")
        grid = np.linspace(-0.95, 0.95, args.n)
        for a in grid:
            for b in grid:
                if a < b:
                    r = flat_interface_residual(a, b)
                    phase = "Stable" if r > 0 else ("Condensing" if r < 0 else "Critical")
                    lines.append(f"{float(a)!r},{float(b)!r},{r!r},{phase}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- kinetic and reversibility ----------------------------------------------


def cmd_kinetic(args):
    started = time.monotonic()
    dist = _dist_arg(args.dist)
    out = Path(args.out)
    spec = kinetic.GridSpec(nodes=args.nodes, w_max=args.wmax)
    try:
        res = kinetic.solve_fixed_point(
            dist, grid_spec=spec, max_iters=args.max_iters, tol=args.tol, damping=args.damping
        )
    except kinetic.PhaseError as exc:
        raise PhaseGuard(str(exc)) from None
    except kinetic.ConvergenceError as exc:
        out.mkdir(parents=True, exist_ok=True)
        kinetic.FixedPointResult(None, exc.history, len(exc.history), math.nan).history_to_csv(out / "residuals.csv")
        raise
    out.mkdir(parents=True, exist_ok=True)
    outputs = [res.grid.to_csv(out / "grid.csv"), res.history_to_csv(out / "residuals.csv")]
    write_manifest(out, "kinetic", digest(f"{dist.spec()}|{spec}|{args.tol}|{args.damping}"), None, outputs, started)
    print(f"converged after {res.iterations} iterations; T={res.T:.10f}")
    return EXIT_OK


def cmd_reversibility(args):
    dist = _dist_arg(args.dist)
    if getattr(dist, "is_atomic", False):
        v = reversibility.atomic_violation(dist)
    else:
        table = reversibility.violation_table(dist)
        v = table.max()
        if args.out:
            table.to_csv(args.out)
    print(f"violation,{v!r}")
    return EXIT_OK


# -- snapshots: rank profile and analysis -----------------------------------


def cmd_rank_profile(args):
    dist = _dist_arg(args.dist)
    report = solve_exponent(dist)
    if report.phase is not Phase.CONDENSING:
        raise PhaseGuard(f"rank-profile checks need a condensing distribution, got {report.phase.value}")
    phi = moments(dist).phi
    snaps = [engine.read_snapshot(p) for p in args.snapshot]
    first = snaps[0]
    if any(s.N != first.N or s.trade_count != first.trade_count for s in snaps):
        raise ConfigError("snapshot", "pooled snapshots must share N and t")
    t = first.interactions_per_agent
    prof = engine.rank_profile(first)
    pooled = np.concatenate([s.wealths for s in snaps])
    rep = analysis.condensing_checks(prof, phi, t, first.N, first.total_wealth, wealths=pooled)
    if args.out:
        theory = engine.predicted_rank_wealth(prof.r, t, phi, first.N, first.total_wealth)
        with open(args.out, "w", newline="") as fh:
            fh.write("r,w,w_theory\n")
            for r, w, wt in zip(prof.r, prof.w, theory):
                fh.write(f"{float(r)!r},{float(w)!r},{float(wt)!r}\n")
    print("quantity,estimate,theory")
    print(f"mid_rank_slope,{rep.mid_rank_slope!r},{rep.slope_theory!r}")
    if rep.pw_slope is not None:
        print(f"pw_slope,{rep.pw_slope!r},-1.0")
    print(f"richest_share,{rep.richest_share!r},")
    return EXIT_OK


def cmd_analyze(args):
    started = time.monotonic()
    snaps = [engine.read_snapshot(p) for p in args.snapshot]
    pooled = np.concatenate([analysis.mean_one(s.wealths) for s in snaps])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hist = analysis.histogram(pooled, bins=args.bins)
    rows = [("ks_exponential", analysis.kolmogorov_distance(pooled), None, None, None, 0.0)]
    rows.append(("gini", engine.gini(snaps[0].wealths), None, None, None, None))
    try:
        fit = analysis.small_w_exponent(hist)
        rows.append(("small_w_slope", fit.slope, fit.stderr, *fit.fit_range, None if args.T is None else args.T - 1))
    except analysis.AnalysisError as exc:
        log.warning("small-w fit skipped: %s", exc)
    if args.T is not None:
        d = analysis.gamma_comparison(hist, args.T)
        rows.append(("gamma_sup", d.sup, None, None, None, None))
        rows.append(("gamma_l1", d.l1, None, None, None, None))
    outputs = [hist.to_csv(out / "histogram.csv"), analysis.fit_report_csv(out / "fits.csv", rows)]
    blob = b"".join(Path(p).read_bytes() for p in args.snapshot)
    write_manifest(out, "analyze", digest(blob), snaps[0].seed, outputs, started)
    return EXIT_OK


def cmd_figure(args):
    started = time.monotonic()
    if args.recipe not in figures.RECIPES:
        raise ConfigError("recipe", f"unknown recipe {args.recipe!r}; choose from {', '.join(figures.RECIPES)}")
    out = Path(args.out)
    outputs = figures.run_recipe(args.recipe, out, args.size)
    write_manifest(out, "figure", digest(f"{args.recipe}|{args.size}"), figures.BASE_SEED, outputs, started)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="aexch", description="Multiplicative asset-exchange toolkit")
    p.add_argument("--version", action="version", version=f"aexch {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the exchange engine from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--replicas", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve-exponent", help="phase and small-wealth exponent of a return law")
    s.add_argument("--dist", required=True)
    s.add_argument("--require-stable", action="store_true")
    s.add_argument("--header", action="store_true")
    s.set_defaults(func=cmd_solve_exponent)

    s = sub.add_parser("interface", help="condensation interface tables")
    s.add_argument("--kind", choices=("yard-sale", "flat"), default="yard-sale")
    s.add_argument("--f", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    s.add_argument("--n", type=int, default=39, help="flat grid points per axis")
    s.add_argument("--out")
    s.set_defaults(func=cmd_interface)

    s = sub.add_parser("kinetic", help="solve the stationary kinetic equation")
    s.add_argument("--dist", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--nodes", type=int, default=kinetic.DEFAULT_NODES)
    s.add_argument("--wmax", type=float, default=kinetic.DEFAULT_WMAX)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=4000)
    s.add_argument("--damping", type=float, default=kinetic.DAMPING)
    s.set_defaults(func=cmd_kinetic)

    s = sub.add_parser("reversibility", help="detailed-balance violation of a return law")
    s.add_argument("--dist", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_reversibility)

    s = sub.add_parser("rank-profile", help="condensing-phase checks on snapshots")
    s.add_argument("--snapshot", required=True, nargs="+")
    s.add_argument("--dist", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rank_profile)

    s = sub.add_parser("figure", help="write the data of a figure recipe")
    s.add_argument("recipe")
    s.add_argument("--out", required=True)
    s.add_argument("--size", choices=tuple(figures.SIZES), default="full")
    s.set_defaults(func=cmd_figure)

    s = sub.add_parser("analyze", help="histogram and fits for snapshots")
    s.add_argument("--snapshot", required=True, nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--bins", type=int, default=60)
    s.add_argument("--T", type=float, help="compare with the gamma approximation at this T")
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except PhaseGuard as exc:
        print(f"aexch: {exc}", file=sys.stderr)
        return EXIT_PHASE
    except (ConfigError, DistributionError) as exc:
        print(f"aexch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, engine.SnapshotError) as exc:
        print(f"aexch: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, analysis.AnalysisError, reversibility.ReversibilityError) as exc:
        print(f"aexch: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # out-of-range arguments caught by the library
        print(f"aexch: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
