"""Stationary kinetic equation for the wealth density P(w).

The operator averaged over the return law is

    RHS[P](w) = < P(w/(1+k)) S(w/(1+k)) / (1+k) + int_0^{w/(1-k)} P(v) P(w+v k) dv >

with S(w) = int_w^inf P.  The first term collects poorer agents that landed on w,
the second richer ones.  A stationary density satisfies P = RHS[P]; the
time-dependent equation is dP/dt = RHS[P] - Z P with Z = int P (Z = 1 for a
normalized density, the extra factor keeps both moments conserved for any P).

P is stored on a grid that is linear on a short toe near the origin and
geometric beyond, interpolated by monotone cubics (scipy's PCHIP) and extended
past the last node by an exponential fitted on the last decade.
"""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from scipy.interpolate import PchipInterpolator

from .exponent import Phase, gamma_approx, solve_exponent

DEFAULT_NODES = 2000
DEFAULT_WMAX = 30.0
TOE_END = 0.1
DAMPING = 0.5


class KineticError(ArithmeticError):
    pass


class ConvergenceError(KineticError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class PhaseError(KineticError):
    pass


@dataclass(frozen=True)
class GridSpec:
    nodes: int = DEFAULT_NODES
    w_max: float = DEFAULT_WMAX
    toe_end: float = TOE_END
    toe_fraction: float = 0.1

    def build(self):
        """Node array w_0 = 0 < ... < w_M = w_max."""
        if self.nodes < 20:
            raise ValueError(f"need at least 20 grid intervals, got {self.nodes}")
        if not 0 < self.toe_end < self.w_max:
            raise ValueError("toe_end must lie in (0, w_max)")
        n_toe = max(2, int(round(self.nodes * self.toe_fraction)))
        toe = np.linspace(0.0, self.toe_end, n_toe + 1)
        geo = np.geomspace(self.toe_end, self.w_max, self.nodes - n_toe + 1)
        return np.concatenate([toe, geo[1:]])


@dataclass
class WealthGrid:
    nodes: np.ndarray
    values: np.ndarray
    tail_rate: float = field(default=math.nan)
    extrapolated_fraction: float = field(default=math.nan)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.clip(np.asarray(self.values, dtype=float), 0.0, None)
        if self.nodes.shape != self.values.shape or self.nodes.ndim != 1:
            raise ValueError("nodes and values must be 1-d arrays of equal length")
        if self.nodes[0] != 0.0 or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must start at 0 and increase strictly")
        self._interp = _Interpolant(self.nodes, self.values)
        self.tail_rate = self._interp.rate
        self.extrapolated_fraction = self._interp.tail_mass / max(self._interp.total, 1e-300)

    @classmethod
    def from_function(cls, func, spec=None):
        spec = spec or GridSpec()
        nodes = spec.build()
        return cls(nodes, func(nodes))

    def __call__(self, w):
        return self._interp.pdf(np.asarray(w, dtype=float))

    def survival(self, w):
        return self._interp.sf(np.asarray(w, dtype=float))

    def moments(self):
        """(int P, int w P) including the exponential tail."""
        return self._interp.total, self._interp.first

    def normalized(self):
        """alpha P(beta w) with both moments equal to one."""
        m0, m1 = self.moments()
        if m0 <= 0 or m1 <= 0:
            raise KineticError("cannot normalize a density with nonpositive moments")
        beta = m1 / m0
        alpha = m1 / m0**2
        return WealthGrid(self.nodes, alpha * self(beta * self.nodes))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["w", "P"])
            for w, p in zip(self.nodes, self.values):
                out.writerow([repr(float(w)), repr(float(p))])
        return Path(path)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["w", "P"]:
            raise ValueError(f"{path}: header must be 'w,P'")
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        return cls(data[:, 0], data[:, 1])


class _Interpolant:
    """PCHIP on the nodes, exact cubic antiderivative, exponential tail."""

    def __init__(self, nodes, values):
        pchip = PchipInterpolator(nodes, values, extrapolate=False)
        self.xs = np.ascontiguousarray(pchip.x)
        self.c = np.ascontiguousarray(pchip.c)
        h = np.diff(self.xs)
        pieces = self.c[0] * h**4 / 4 + self.c[1] * h**3 / 3 + self.c[2] * h**2 / 2 + self.c[3] * h
        self.cum = np.concatenate([[0.0], np.cumsum(pieces)])
        # first moment of each cubic piece, exact: int (x_k + t) p(t) dt
        tpieces = self.c[0] * h**5 / 5 + self.c[1] * h**4 / 4 + self.c[2] * h**3 / 3 + self.c[3] * h**2 / 2
        first_in = float(np.sum(self.xs[:-1] * pieces + tpieces))
        self.p_end = float(values[-1])
        self.rate = _fit_tail_rate(nodes, values)
        w_end = float(nodes[-1])
        self.tail_mass = self.p_end / self.rate
        self.total = float(self.cum[-1]) + self.tail_mass
        self.first = first_in + self.p_end * (w_end / self.rate + 1.0 / self.rate**2)
        # O(1) interval lookup: the nodes are close to uniform in log1p(w / w_1)
        self.eps = float(self.xs[1])
        n_lut = 4 * self.xs.size
        self.lut_scale = n_lut / math.log1p(self.xs[-1] / self.eps)
        starts = self.eps * np.expm1(np.arange(n_lut + 1) / self.lut_scale)
        lut = np.searchsorted(self.xs, starts, side="right") - 1
        self.lut = np.clip(lut, 0, self.xs.size - 2).astype(np.int64)
        self.packed = (
            self.xs,
            np.ascontiguousarray(self.c.T),
            self.cum,
            self.lut,
            (self.eps, self.lut_scale, float(self.cum[-1]), self.p_end, self.rate),
        )

    def pdf(self, w):
        out = np.empty(w.size)
        _pdf_many(w.ravel(), out, *self.packed)
        return out.reshape(w.shape)

    def sf(self, w):
        out = np.empty(w.size)
        _sf_many(w.ravel(), out, *self.packed)
        return out.reshape(w.shape)


def _fit_tail_rate(nodes, values):
    w_end = nodes[-1]
    sel = (nodes >= w_end / 10) & (values > 0)
    if np.count_nonzero(sel) >= 3:
        slope = np.polyfit(nodes[sel], np.log(values[sel]), 1)[0]
        if slope < 0 and np.isfinite(slope):
            return float(-slope)
    # flat or rising tail: fall back to the mean-1 exponential rate
    return 1.0


# -- numba kernels ----------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _locate(xs, lut, eps, lut_scale, x):
    b = int(math.log1p(x / eps) * lut_scale)
    if b >= lut.shape[0]:
        b = lut.shape[0] - 1
    k = lut[b]
    last = xs.shape[0] - 2
    while k < last and xs[k + 1] <= x:
        k += 1
    return k


@nb.njit(cache=True, inline="always")
def _pdf(x, xs, c, cum, lut, par):
    if x < 0.0:
        return 0.0
    eps, lut_scale, total_in, p_end, rate = par
    n = xs.shape[0]
    if x >= xs[n - 1]:
        return p_end * math.exp(-rate * (x - xs[n - 1]))
    k = _locate(xs, lut, eps, lut_scale, x)
    t = x - xs[k]
    p = ((c[k, 0] * t + c[k, 1]) * t + c[k, 2]) * t + c[k, 3]
    return p if p > 0.0 else 0.0


@nb.njit(cache=True, inline="always")
def _sf(x, xs, c, cum, lut, par):
    eps, lut_scale, total_in, p_end, rate = par
    n = xs.shape[0]
    if x >= xs[n - 1]:
        return p_end * math.exp(-rate * (x - xs[n - 1])) / rate
    if x < 0.0:
        x = 0.0
    k = _locate(xs, lut, eps, lut_scale, x)
    t = x - xs[k]
    F = cum[k] + t * (c[k, 3] + t * (c[k, 2] / 2.0 + t * (c[k, 1] / 3.0 + t * c[k, 0] / 4.0)))
    s = total_in - F + p_end / rate
    return s if s > 0.0 else 0.0


@nb.njit(cache=True)
def _pdf_many(ws, out, xs, c, cum, lut, par):
    for i in range(ws.shape[0]):
        out[i] = _pdf(ws[i], xs, c, cum, lut, par)


@nb.njit(cache=True)
def _sf_many(ws, out, xs, c, cum, lut, par):
    for i in range(ws.shape[0]):
        out[i] = _sf(ws[i], xs, c, cum, lut, par)


@nb.njit(cache=True, inline="always")
def _panel(a, b, w, k, gx, gw, xs, c, cum, lut, par):
    h = b - a
    part = 0.0
    for i in range(gx.shape[0]):
        v = a + h * gx[i]
        part += gw[i] * _pdf(v, xs, c, cum, lut, par) * _pdf(w + v * k, xs, c, cum, lut, par)
    return h * part


@nb.njit(cache=True)
def _rhs_many(ws, out, kap, kw, gx, gw, n_head, n_panels, grading, xs, c, cum, lut, par):
    eps = xs[1]
    for idx in range(ws.shape[0]):
        w = ws[idx]
        acc = 0.0
        for m in range(kap.shape[0]):
            k = kap[m]
            if kw[m] == 0.0:
                continue
            y = w / (1.0 + k)
            term = _pdf(y, xs, c, cum, lut, par) * _sf(y, xs, c, cum, lut, par)
            term /= 1.0 + k
            if w > 0.0:
                upper = w / (1.0 - k)
                inner = 0.0
                # the first intervals of the interpolant carry the steep w^(T-1)
                # toe; integrate them one by one, then grade towards the toe
                lo = 0.0
                for j in range(n_head):
                    hi = min((j + 1) * eps, upper)
                    inner += _panel(lo, hi, w, k, gx, gw, xs, c, cum, lut, par)
                    lo = hi
                    if lo >= upper:
                        break
                if lo < upper:
                    span = upper - lo
                    for j in range(n_panels):
                        a = lo + span * (j / n_panels) ** grading
                        b = lo + span * ((j + 1) / n_panels) ** grading
                        inner += _panel(a, b, w, k, gx, gw, xs, c, cum, lut, par)
                term += inner
            acc += kw[m] * term
        out[idx] = acc


@dataclass(frozen=True)
class Quadrature:
    """Resolution of the averages inside the operator."""

    kappa_order: int = 8
    inner_panels: int = 16
    inner_order: int = 4
    head_panels: int = 8
    grading: float = 3.0

    def inner_rule(self):
        x, w = np.polynomial.legendre.leggauss(self.inner_order)
        return 0.5 * (x + 1.0), 0.5 * w

    def kappa_rule(self, dist):
        nodes, weights = dist.rule(self.kappa_order)
        return np.ascontiguousarray(nodes, dtype=float), np.ascontiguousarray(weights, dtype=float)


def _rhs_at(grid, dist, points, quad):
    kap, kw = quad.kappa_rule(dist)
    gx, gw = quad.inner_rule()
    points = np.ascontiguousarray(points, dtype=float)
    out = np.empty(points.size)
    _rhs_many(points.ravel(), out, kap, kw, gx, gw, quad.head_panels, quad.inner_panels, quad.grading, *grid._interp.packed)
    return out.reshape(points.shape)


def apply_stationary_rhs(grid, dist, quad=Quadrature()):
    """Right-hand side of the stationary equation evaluated at the grid nodes.

    Off-node values come from the interpolant; beyond the last node the fitted
    exponential tail is used.  ``extrapolated_fraction`` of the result reports
    the share of mass carried by that tail.
    """
    return WealthGrid(grid.nodes, _rhs_at(grid, dist, grid.nodes, quad))


def drift_field(grid, dist, w, quad=Quadrature()):
    """dP/dt = RHS[P](w) - Z P(w) at arbitrary points."""
    w = np.asarray(w, dtype=float)
    z0 = grid.moments()[0]
    return _rhs_at(grid, dist, w, quad) - z0 * grid(w)


def _outer_rule(nodes, order=4, extend=2.0, extra_panels=200, toe_nodes=20, toe_panels=40):
    """Gauss-Legendre on every grid interval plus uniform panels up to extend*w_M.

    The first ``toe_nodes`` intervals are replaced by geometric panels: the
    operator maps P(w/(1+k)) onto x, so steep w^(T-1) toes get squeezed by up to
    1/(1+k) into a single interval otherwise.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    toe_end = nodes[toe_nodes]
    toe = np.concatenate([[0.0], np.geomspace(toe_end * 1e-9, toe_end, toe_panels)])
    edges = np.concatenate(
        [toe, nodes[toe_nodes + 1 :], np.linspace(nodes[-1], extend * nodes[-1], extra_panels + 1)[1:]]
    )
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    return ((lo + hi) * 0.5 + half * x).ravel(), (half * w).ravel()


def moment_drift(grid, dist, quad=Quadrature()):
    """Zeroth and first moments of dP/dt; both vanish for the exact operator."""
    pts, wts = _outer_rule(grid.nodes)
    d = drift_field(grid, dist, pts, quad)
    # analytic tail of the integrand beyond the last outer point is negligible
    return float(np.dot(wts, d)), float(np.dot(wts, pts * d))


def exponential_condition_residual(dist, w):
    """<(e^{-w(1-k)/(1+k)} - e^{-w(1+k)/(1-k)} + 1)/(1+k)> - 1.

    Zero for every w means P(w) = e^{-w} is stationary.
    """
    if w < 0:
        raise ValueError(f"w must be nonnegative, got {w}")

    def g(k):
        return (math.exp(-w * (1 - k) / (1 + k)) - math.exp(-w * (1 + k) / (1 - k)) + 1.0) / (1 + k)

    if getattr(dist, "is_atomic", False):
        return math.fsum(p * g(k) for k, p in zip(*dist.atoms())) - 1.0
    return dist.expect(g) - 1.0


@dataclass
class FixedPointResult:
    grid: WealthGrid
    history: list
    iterations: int
    T: float

    def history_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iter", "sup_norm_residual"])
            for i, r in enumerate(self.history, start=1):
                out.writerow([i, repr(float(r))])
        return Path(path)


def initial_guess(T, spec=None):
    """Gamma-family guess; for T < 1 the infinite value at w = 0 is capped by w_1."""
    g = gamma_approx(T)
    nodes = (spec or GridSpec()).build()
    vals = g.pdf(nodes)
    if not np.isfinite(vals[0]):
        vals[0] = vals[1]
    return WealthGrid(nodes, vals).normalized()


def solve_fixed_point(
    dist, grid_spec=None, max_iters=4000, tol=1e-8, damping=DAMPING, quad=Quadrature(), initial=None
):
    """Damped iteration P <- (1-l) P + l RHS[P], renormalized to unit mass and mean.

    Stops when the sup-norm change per iteration drops below ``tol``.  The
    node at w = 0 obeys P(0) <- Z <1/(1+k)> P(0), which is exact but grows
    without bound when T < 1 (P diverges there); in that case node 0 copies
    node 1 and is left out of the convergence test.  At T = 1 the map is
    neutral, so node 0 is extrapolated linearly from its neighbours.
    """
    report = solve_exponent(dist)
    if report.phase is not Phase.STABLE:
        raise PhaseError(
            f"no stationary density: {report.phase.value} phase (<ln(1+kappa)> = {report.log_gain_mean:.6g})"
        )
    T = report.T
    if not math.isfinite(T):
        raise PhaseError("exponent is infinite (no losing returns); the stationary density is degenerate")
    if not 0 < damping <= 1:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    if abs(T - 1.0) < 1e-9:
        # root-finder noise around the exponential case would flip P(0) between 0 and inf
        T = 1.0
    grid = initial if initial is not None else initial_guess(T, grid_spec)
    singular = T < 1.0
    history = []
    for it in range(1, max_iters + 1):
        rhs = _rhs_at(grid, dist, grid.nodes, quad)
        new = (1 - damping) * grid.values + damping * rhs
        if singular:
            new[0] = new[1]
        elif T == 1.0:
            # the w = 0 map is neutral here and would keep the initial value
            x = grid.nodes
            new[0] = new[1] - (new[2] - new[1]) * x[1] / (x[2] - x[1])
        nxt = WealthGrid(grid.nodes, new).normalized()
        res = float(np.abs(nxt.values - grid.values)[1 if singular else 0 :].max())
        history.append(res)
        grid = nxt
        if not math.isfinite(res):
            break
        if res < tol:
            return FixedPointResult(grid, history, it, T)
    raise ConvergenceError(
        f"no convergence after {len(history)} iterations (last sup-norm change {history[-1]:.3e} > {tol:.1e})",
        history,
    )
