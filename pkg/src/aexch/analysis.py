"""Histograms, slope fits and comparisons of simulated wealths with theory."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .exponent import gamma_approx

log = logging.getLogger(__name__)

SMALL_W_CAP = 0.3
MIN_COUNT = 10
MIN_BINS = 5
MID_RANKS = (0.2, 0.8)


class AnalysisError(ValueError):
    pass


@dataclass
class WealthHistogram:
    bin_edges: np.ndarray
    densities: np.ndarray
    counts: np.ndarray
    n_total: int

    @property
    def centers(self):
        return np.sqrt(self.bin_edges[:-1] * self.bin_edges[1:])

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["w_center", "density", "count"])
            for c, d, n in zip(self.centers, self.densities, self.counts):
                out.writerow([repr(float(c)), repr(float(d)), int(n)])
        return Path(path)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    fit_range: tuple
    n_bins: int = 0
    extra: dict = field(default_factory=dict)


def mean_one(wealths):
    w = np.asarray(wealths, dtype=float)
    return w / w.mean()


def log_edges(lo, hi, bins):
    if not 0 < lo < hi:
        raise AnalysisError(f"need 0 < lo < hi for geometric bins, got ({lo}, {hi})")
    return np.geomspace(lo, hi, bins + 1)


def histogram(wealths, bins=60, range=None, trim=True):
    """Geometric-bin estimate of P(w): count / (N * width).

    ``bins`` is either a bin count or an explicit edge array (shared edges
    make histograms of different runs directly comparable).  Empty bins at
    both ends are trimmed unless ``trim`` is false.
    """
    w = np.asarray(wealths, dtype=float).ravel()
    if w.size == 0:
        raise AnalysisError("no wealths given")
    if np.any(w <= 0):
        raise AnalysisError("wealths must be positive for geometric binning")
    if np.ndim(bins) == 0:
        lo, hi = range if range is not None else (w.min(), w.max())
        if lo == hi:
            lo, hi = lo * (1 - 1e-9), hi * (1 + 1e-9)
        edges = log_edges(lo, hi, int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
    counts, _ = np.histogram(w, bins=edges)
    nz = np.flatnonzero(counts)
    if nz.size == 0:
        raise AnalysisError(f"no wealths fall inside [{edges[0]:.3g}, {edges[-1]:.3g}]")
    if trim:
        first, last = nz[0], nz[-1]
        counts = counts[first : last + 1]
        edges = edges[first : last + 2]
    dens = counts / (w.size * np.diff(edges))
    return WealthHistogram(edges, dens, counts, w.size)


def _weighted_lstsq(design, y, weights):
    sw = np.sqrt(weights)
    A = design * sw[:, None]
    b = y * sw
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    dof = max(len(y) - design.shape[1], 1)
    resid = b - A @ coef
    # counts are Poisson, so ln(count) has variance ~ 1/count: scale by the
    # reduced chi-square only when the scatter exceeds that
    chi2 = float(resid @ resid) / dof
    cov = np.linalg.inv(A.T @ A) * max(chi2, 1.0)
    return coef, np.sqrt(np.diag(cov))


def small_w_exponent(hist, w_cap=SMALL_W_CAP, min_count=MIN_COUNT, min_bins=MIN_BINS):
    """Estimate T - 1 from the low-wealth toe of a mean-1 histogram.

    Uses the contiguous run of bins below ``w_cap`` (each with at least
    ``min_count`` entries) that ends closest to the cap, and fits
    ln P = c + s ln w + d w with Poisson weights.  The linear term absorbs the
    exponential cut-off of a gamma-like law, which otherwise biases a pure
    log-log slope low by 0.2 or so inside [0, 0.3].
    """
    below = np.flatnonzero(hist.bin_edges[1:] <= w_cap * (1 + 1e-12))
    ok = np.zeros(hist.counts.size, dtype=bool)
    ok[below] = hist.counts[below] >= min_count
    if not np.any(ok):
        raise AnalysisError(f"no bin below w={w_cap} holds {min_count} entries; increase N")
    hi = np.flatnonzero(ok)[-1]
    lo = hi
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    sel = np.arange(lo, hi + 1)
    if sel.size < min_bins:
        raise AnalysisError(
            f"only {sel.size} admissible bins below w={w_cap} (need {min_bins} with >= {min_count} entries); increase N"
        )
    w = hist.centers[sel]
    y = np.log(hist.densities[sel])
    design = np.column_stack([np.ones_like(w), np.log(w), w])
    coef, err = _weighted_lstsq(design, y, hist.counts[sel].astype(float))
    return SlopeFit(
        slope=float(coef[1]),
        intercept=float(coef[0]),
        stderr=float(err[1]),
        fit_range=(float(hist.bin_edges[lo]), float(hist.bin_edges[hi + 1])),
        n_bins=int(sel.size),
        extra={"linear_term": float(coef[2])},
    )


def loglog_slope(hist, lo, hi, min_count=MIN_COUNT, min_bins=MIN_BINS):
    """Poisson-weighted straight-line fit of ln P against ln w on [lo, hi]."""
    sel = np.flatnonzero(
        (hist.bin_edges[:-1] >= lo * (1 - 1e-12)) & (hist.bin_edges[1:] <= hi * (1 + 1e-12)) & (hist.counts >= min_count)
    )
    if sel.size < min_bins:
        raise AnalysisError(f"only {sel.size} bins with >= {min_count} entries in [{lo:.3g}, {hi:.3g}]")
    x = np.log(hist.centers[sel])
    y = np.log(hist.densities[sel])
    coef, err = _weighted_lstsq(np.column_stack([np.ones_like(x), x]), y, hist.counts[sel].astype(float))
    return SlopeFit(float(coef[1]), float(coef[0]), float(err[1]), (float(lo), float(hi)), int(sel.size))


def fit_line(x, y):
    """Ordinary least squares y = a + b x; returns SlopeFit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    res = stats.linregress(x, y)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr), (float(x.min()), float(x.max())), x.size)


@dataclass
class CondensingReport:
    mid_rank_slope: float
    slope_theory: float
    pw_slope: float | None
    pw_stderr: float | None
    pw_range: tuple | None
    richest_share: float

    @property
    def slope_ratio(self):
        return self.mid_rank_slope / self.slope_theory


def central_decades(hist, decades=2.0):
    """[lo, hi] spanning ``decades`` around the log-center of the occupied bins."""
    lo, hi = hist.bin_edges[0], hist.bin_edges[-1]
    span = math.log10(hi / lo)
    if span < decades:
        raise AnalysisError(f"occupied bins span only {span:.2f} decades, need {decades}")
    mid = math.sqrt(lo * hi)
    half = 10 ** (decades / 2)
    return mid / half, mid * half


def condensing_checks(profile, phi, t, N, W, wealths=None, bins_per_decade=10, decades=2.0):
    """Compare a condensing-phase snapshot with the exponential rank law and P ~ 1/w.

    ``profile`` is an engine RankProfile (w descending), ``t`` the interactions
    per agent.  ``wealths`` (defaults to the profile) feed the 1/w histogram;
    pooling several replicas there reduces the noise considerably.  The 1/w
    fields stay None when the wealths are too few or span too little.
    """
    r = np.asarray(profile.r)
    w = np.asarray(profile.w)
    share = float(w[0] / W)
    lo_r, hi_r = MID_RANKS
    sel = (r >= lo_r) & (r <= hi_r)
    mid = w[sel]
    if share > 1 - 1e-9 or np.any(mid <= 0) or not np.all(np.isfinite(np.log(mid))):
        raise AnalysisError(
            f"profile is degenerate (richest share {share:.6f}, mid-rank wealth underflows); measure at an earlier t"
        )
    fit = fit_line(r[sel], np.log(mid))
    pw = pw_err = pw_range = None
    pool = w if wealths is None else np.asarray(wealths, dtype=float).ravel()
    pool = pool[pool > 0]
    ndec = math.log10(pool.max() / pool.min())
    if ndec >= decades:
        hist = histogram(pool, bins=max(int(math.ceil(ndec * bins_per_decade)), 1))
        a, b = central_decades(hist, decades)
        try:
            slope = loglog_slope(hist, a, b)
            pw, pw_err, pw_range = slope.slope, slope.stderr, (a, b)
        except AnalysisError as exc:
            log.warning("1/w slope skipped (%s); pool more replicas", exc)
    return CondensingReport(fit.slope, -t * phi, pw, pw_err, pw_range, share)


@dataclass
class GammaDistance:
    sup: float
    l1: float


def gamma_comparison(hist, T):
    """Sup and L1 distances between a mean-1 histogram and the gamma approximation.

    Bin averages of the gamma law are taken from its CDF, and the gamma mass
    outside the histogram range counts towards L1.  The sup norm skips bins
    with fewer than MIN_COUNT entries, whose density is mostly shot noise.
    """
    g = gamma_approx(T)
    F = g.cdf(hist.bin_edges)
    expected = np.diff(F)
    observed = hist.counts / hist.n_total
    dense = hist.counts >= MIN_COUNT
    diff = np.abs(hist.densities - expected / hist.widths)
    sup = float(diff[dense].max()) if np.any(dense) else float(diff.max())
    outside = float(F[0] + (1.0 - F[-1]))
    uncovered = 1.0 - float(observed.sum())
    l1 = float(np.sum(np.abs(observed - expected))) + outside + uncovered
    return GammaDistance(sup, l1)


def kolmogorov_distance(wealths, cdf=None):
    """KS statistic of mean-1 rescaled wealths against ``cdf`` (default 1 - e^-w)."""
    w = mean_one(wealths)
    return float(stats.kstest(w, cdf if cdf is not None else "expon").statistic)


def richest_share(wealths):
    w = np.asarray(wealths, dtype=float)
    return float(w.max() / w.sum())


def fit_report_csv(path, rows):
    """rows: iterable of (quantity, estimate, stderr, lo, hi, theory)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["quantity", "estimate", "stderr", "lo", "hi", "theory"])
        for row in rows:
            out.writerow([row[0]] + ["" if v is None else repr(float(v)) for v in row[1:]])
    return Path(path)
