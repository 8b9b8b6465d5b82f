"""Data recipes for the wealth-distribution figures.

Every recipe pins its seeds and bin edges, so two runs of the same recipe and
size write byte-identical CSV files.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine
from .analysis import histogram
from .exponent import flat_T1_parameterization, flat_T2_lower, gamma_approx, yard_sale_p_for_T1, yard_sale_p_for_T2
from .returns import Binary, Flat, moments

EQ_EDGES = np.geomspace(1e-4, 1e2, 61)
COND_EDGES = np.logspace(-120, 4, 125 * 5 + 1)
FIG3_TIMES = (2.5e4, 5e4, 7.5e4, 1e5)
FIG3_DIST = Flat(-0.1, 0.1)
BASE_SEED = 20080101


@dataclass(frozen=True)
class Size:
    N: int
    sweeps: int
    cond_N: int
    time_scale: float
    replicas: int


SIZES = {
    "full": Size(N=10_000, sweeps=10_000, cond_N=1000, time_scale=1.0, replicas=10),
    "quick": Size(N=500, sweeps=200, cond_N=100, time_scale=0.05, replicas=3),
}


def _curves(name):
    if name == "fig1a":
        return [(f"f={f}", Binary(p=yard_sale_p_for_T1(f), f=f)) for f in (0.1, 0.3, 0.5)], 1.0
    if name == "fig1b":
        return [(f"f={f}", Binary(p=yard_sale_p_for_T2(f), f=f)) for f in (0.1, 0.3, 0.5)], 2.0
    if name == "fig2a":
        return [(f"z={z}", Flat(*flat_T1_parameterization(z))) for z in (2.0, 3.0, 4.5)], 1.0
    if name == "fig2b":
        return [(f"b={b}", Flat(flat_T2_lower(b), b)) for b in (0.2, 0.5, 0.8)], 2.0
    raise KeyError(name)


RECIPES = ("fig1a", "fig1b", "fig2a", "fig2b", "fig3a", "fig3b")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([repr(float(v)) for v in row])
    return Path(path)


def _final_wealths(dist, N, sweeps, seed):
    cfg = engine.SimConfig(N=N, sweeps=sweeps, dist=dist, seed=seed)
    return engine.run(cfg)[-1].wealths


def equilibrium_figure(name, out_dir, size):
    curves, T = _curves(name)
    centers = np.sqrt(EQ_EDGES[:-1] * EQ_EDGES[1:])
    columns = []
    for i, (label, dist) in enumerate(curves):
        w = _final_wealths(dist, size.N, size.sweeps, BASE_SEED + i)
        h = histogram(w / w.mean(), bins=EQ_EDGES, trim=False)
        columns.append(h.densities)
    data = _write_rows(
        Path(out_dir) / f"{name}_data.csv", ["w_center"] + [lbl for lbl, _ in curves], zip(centers, *columns)
    )
    theory = _write_rows(Path(out_dir) / f"{name}_theory.csv", ["w", "P"], zip(centers, gamma_approx(T).pdf(centers)))
    return [data, theory]


def condensing_times(size):
    """(interactions per agent, sweeps) for the four snapshot times."""
    out = []
    for t in FIG3_TIMES:
        t_scaled = t * size.time_scale
        out.append((t_scaled, int(round(t_scaled / 2))))
    return out


def _condensing_run(N, seed, sweeps_list):
    """Snapshots at each cumulative sweep count in ``sweeps_list``."""
    pop = engine.Population.egalitarian(N, seed=seed)
    snaps = []
    for s in sweeps_list:
        engine.advance(pop, FIG3_DIST, (s - pop.trade_count // N) * N)
        snaps.append(pop.copy())
    return snaps


def fig3a(out_dir, size):
    times = condensing_times(size)
    N = size.cond_N
    phi = moments(FIG3_DIST).phi
    snaps = _condensing_run(N, BASE_SEED, [s for _, s in times])
    r = engine.rank_profile(snaps[0]).r
    cols, theory = [], []
    for snap in snaps:
        t = snap.interactions_per_agent
        cols.append(engine.rank_profile(snap).w)
        theory.append(engine.predicted_rank_wealth(r, t, phi, N, snap.total_wealth))
    labels = [f"t={t:g}" for t, _ in times]
    data = _write_rows(Path(out_dir) / "fig3a_data.csv", ["r"] + labels, zip(r, *cols))
    th = _write_rows(Path(out_dir) / "fig3a_theory.csv", ["r"] + labels, zip(r, *theory))
    return [data, th]


def fig3b(out_dir, size):
    t, sweeps = condensing_times(size)[-1]
    N = size.cond_N
    phi = moments(FIG3_DIST).phi
    pooled = np.concatenate(
        [_condensing_run(N, BASE_SEED + k, [sweeps])[0].wealths for k in range(size.replicas)]
    )
    pooled = pooled[pooled > 0]
    h = histogram(pooled, bins=COND_EDGES, trim=False)
    centers = h.centers
    occupied = np.flatnonzero(h.counts)
    sl = slice(occupied[0], occupied[-1] + 1)
    data = _write_rows(
        Path(out_dir) / "fig3b_data.csv", ["w_center", "density", "count"], zip(centers[sl], h.densities[sl], h.counts[sl])
    )
    # rank law w ~ e^(-r t phi) turns into P(w) = 1/(t phi w) per agent
    th = _write_rows(Path(out_dir) / "fig3b_theory.csv", ["w", "P"], zip(centers[sl], 1.0 / (t * phi * centers[sl])))
    return [data, th]


def run_recipe(name, out_dir, size="full"):
    if name not in RECIPES:
        raise KeyError(name)
    sz = SIZES[size]
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    if name == "fig3a":
        return fig3a(out_dir, sz)
    if name == "fig3b":
        return fig3b(out_dir, sz)
    return equilibrium_figure(name, out_dir, sz)
