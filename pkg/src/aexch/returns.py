"""Return distributions pi(kappa) on (-1, 1) and their gain moments.

Four families are supported: the binary Yard-Sale bet, the flat law on
``[a, b]``, the Kelly mixture ``pi(kappa) = (1 + kappa)/2 * w(|kappa|)`` and an
arbitrary tabulated piecewise-linear density.  Binary and flat moments use
closed forms; the tabulated families go through adaptive Gauss-Kronrod
quadrature on panels delimited by the knots.
"""
import csv
import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from . import _kernels

SUPPORT_LIMIT = 1.0 - 1e-9
NORM_TOL = 1e-12
QUAD_TOL = 1e-12
_LOG_OVERFLOW = 700.0


class DistributionError(ValueError):
    """Invalid return distribution or distribution spec."""


class QuadratureError(ArithmeticError):
    def __init__(self, achieved, target=QUAD_TOL):
        super().__init__(
            f"adaptive quadrature did not reach {target:.1e}; achieved error estimate {achieved:.3e}"
        )
        self.achieved = achieved


@dataclass(frozen=True)
class GainMoments:
    log_gain_mean: float
    log_gain_sq_mean: float
    mean_return: float

    @property
    def phi(self):
        """Condensing-phase decay rate, -<ln(1+kappa)>."""
        return -self.log_gain_mean

    @property
    def log_gain_var(self):
        return self.log_gain_sq_mean - self.log_gain_mean**2


def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _panel_rule(edges, order):
    """Composite Gauss-Legendre nodes/weights on consecutive panels."""
    x, w = _gauss_legendre(order)
    lo = np.asarray(edges[:-1], dtype=float)[:, None]
    hi = np.asarray(edges[1:], dtype=float)[:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def _quad_panels(func, edges):
    total = 0.0
    err = 0.0
    bad = False
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        out = integrate.quad(func, lo, hi, epsabs=QUAD_TOL / 10, epsrel=1e-13, limit=200, full_output=1)
        total += out[0]
        err += out[1]
        if len(out) > 3:
            bad = True
    if bad and err > QUAD_TOL:
        raise QuadratureError(err)
    return total


def _check_support(lo, hi):
    if lo <= -SUPPORT_LIMIT or hi >= SUPPORT_LIMIT:
        raise DistributionError(
            f"support [{lo}, {hi}] must lie strictly inside (-1, 1) with |kappa| < {SUPPORT_LIMIT}"
        )


def _normalize_piecewise(xs, ys, what):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise DistributionError(f"{what}: need at least two (x, density) knots")
    if np.any(np.diff(xs) <= 0):
        raise DistributionError(f"{what}: knots must be strictly increasing")
    if np.any(ys < 0) or not np.all(np.isfinite(ys)):
        raise DistributionError(f"{what}: densities must be finite and nonnegative")
    mass = float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) * 0.5))
    if mass <= 0:
        raise DistributionError(f"{what}: density integrates to zero")
    ys = ys / mass
    cdf = np.concatenate([[0.0], np.cumsum(np.diff(xs) * (ys[1:] + ys[:-1]) * 0.5)])
    if abs(cdf[-1] - 1.0) > NORM_TOL:
        raise DistributionError(f"{what}: normalization failed ({cdf[-1]!r})")
    cdf[-1] = 1.0
    for a in (xs, ys, cdf):
        a.setflags(write=False)
    return xs, ys, cdf


class ReturnDistribution:
    """Common interface of the return-distribution family."""

    is_atomic = False

    def support(self):
        raise NotImplementedError

    def rule(self, order=16):
        """Quadrature rule (kappas, weights) for vectorized averages over pi."""
        raise NotImplementedError

    def expect(self, func):
        """<func(kappa)> by adaptive quadrature (exact sum for atoms)."""
        raise NotImplementedError

    def pdf(self, kappa):
        raise NotImplementedError

    def spec(self):
        raise NotImplementedError

    def _kernel(self):
        raise NotImplementedError

    def __str__(self):
        return self.spec()


@dataclass(frozen=True)
class Binary(ReturnDistribution):
    """Yard-Sale bet: kappa = +f with probability p, -f otherwise."""

    p: float
    f: float
    is_atomic = True

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DistributionError(f"binary: p must be in [0, 1], got {self.p}")
        if not 0.0 <= self.f:
            raise DistributionError(f"binary: f must be nonnegative, got {self.f}")
        _check_support(-self.f, self.f)

    @property
    def q(self):
        return 1.0 - self.p

    def atoms(self):
        ks = np.array([self.f, -self.f])
        ws = np.array([self.p, self.q])
        keep = ws > 0
        return ks[keep], ws[keep]

    def support(self):
        ks, _ = self.atoms()
        return float(ks.min()), float(ks.max())

    def rule(self, order=16):
        return self.atoms()

    def expect(self, func):
        ks, ws = self.atoms()
        return float(sum(w * func(k) for k, w in zip(ks, ws)))

    def pdf(self, kappa):
        raise TypeError("binary distribution has no density; use atoms()")

    def spec(self):
        return f"binary p={self.p!r} f={self.f!r}"

    def _kernel(self):
        return _kernels.BINARY, np.array([self.p, self.f]), _EMPTY, _EMPTY, _EMPTY


_EMPTY = np.zeros(0)


@dataclass(frozen=True)
class Flat(ReturnDistribution):
    """Uniform returns on [a, b]."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise DistributionError(f"flat: need a < b, got a={self.a}, b={self.b}")
        _check_support(self.a, self.b)

    def support(self):
        return self.a, self.b

    def rule(self, order=16, panels=1):
        nodes, weights = _panel_rule(np.linspace(self.a, self.b, panels + 1), order)
        return nodes, weights / (self.b - self.a)

    def expect(self, func):
        return _quad_panels(lambda k: func(k) / (self.b - self.a), [self.a, self.b])

    def pdf(self, kappa):
        kappa = np.asarray(kappa, dtype=float)
        return np.where((kappa >= self.a) & (kappa <= self.b), 1.0 / (self.b - self.a), 0.0)

    def spec(self):
        return f"flat a={self.a!r} b={self.b!r}"

    def _kernel(self):
        return _kernels.FLAT, np.array([self.a, self.b]), _EMPTY, _EMPTY, _EMPTY


@dataclass(frozen=True, eq=False)
class Tabulated(ReturnDistribution):
    """Piecewise-linear density through sorted (kappa, density) knots.

    The density is rescaled at construction so that it integrates to one.
    """

    kappas: np.ndarray
    densities: np.ndarray
    source: str = ""
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xs, ys, cdf = _normalize_piecewise(self.kappas, self.densities, "tabulated")
        _check_support(xs[0], xs[-1])
        object.__setattr__(self, "kappas", xs)
        object.__setattr__(self, "densities", ys)
        object.__setattr__(self, "_cdf", cdf)

    def support(self):
        nz = np.flatnonzero(self.densities > 0)
        lo = self.kappas[max(nz[0] - 1, 0)]
        hi = self.kappas[min(nz[-1] + 1, self.kappas.size - 1)]
        return float(lo), float(hi)

    def pdf(self, kappa):
        return np.interp(kappa, self.kappas, self.densities, left=0.0, right=0.0)

    def rule(self, order=16):
        nodes, weights = _panel_rule(self.kappas, order)
        return nodes, weights * self.pdf(nodes)

    def expect(self, func):
        return _quad_panels(lambda k: func(k) * float(self.pdf(k)), self.kappas)

    def spec(self):
        if self.source:
            return f"tabulated file={self.source}"
        return "tabulated " + " ".join(f"{float(k)!r}:{float(d)!r}" for k, d in zip(self.kappas, self.densities))

    def _kernel(self):
        return _kernels.PIECEWISE, _EMPTY, self.kappas, self.densities, self._cdf


@dataclass(frozen=True, eq=False)
class KellyMixture(ReturnDistribution):
    """Superposition of Kelly bets: pi(kappa) = (1 + kappa)/2 * w(|kappa|).

    ``weight`` is a piecewise-linear density of the stake fraction on [0, 1],
    given at knots ``fractions``; it is normalized at construction.
    """

    fractions: np.ndarray
    weight: np.ndarray
    source: str = ""
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xs, ys, cdf = _normalize_piecewise(self.fractions, self.weight, "kelly-mixture")
        if xs[0] < 0:
            raise DistributionError("kelly-mixture: stake fractions must be >= 0")
        _check_support(-xs[-1], xs[-1])
        object.__setattr__(self, "fractions", xs)
        object.__setattr__(self, "weight", ys)
        object.__setattr__(self, "_cdf", cdf)

    def weight_pdf(self, f):
        return np.interp(f, self.fractions, self.weight, left=0.0, right=0.0)

    def support(self):
        hi = float(self.fractions[-1])
        return -hi, hi

    def pdf(self, kappa):
        kappa = np.asarray(kappa, dtype=float)
        return 0.5 * (1.0 + kappa) * self.weight_pdf(np.abs(kappa))

    def rule(self, order=16):
        f, wf = _panel_rule(self.fractions, order)
        wf = wf * self.weight_pdf(f)
        return np.concatenate([f, -f]), np.concatenate([wf * 0.5 * (1 + f), wf * 0.5 * (1 - f)])

    def expect(self, func):
        def integrand(f):
            return float(self.weight_pdf(f)) * (0.5 * (1 + f) * func(f) + 0.5 * (1 - f) * func(-f))

        return _quad_panels(integrand, self.fractions)

    def spec(self):
        if self.source:
            return f"kelly-mixture file={self.source}"
        return "kelly-mixture " + " ".join(f"{float(k)!r}:{float(d)!r}" for k, d in zip(self.fractions, self.weight))

    def _kernel(self):
        return _kernels.KELLY, _EMPTY, self.fractions, self.weight, self._cdf


def kelly_binary(f):
    """Yard-Sale at the Kelly point p = (1 + f)/2."""
    return Binary(p=0.5 * (1.0 + f), f=f)


def triangle_weight(center, half_width, n=5):
    """Narrow triangular weight on [0, 1], handy as a smoothed single Kelly bet."""
    xs = np.linspace(center - half_width, center + half_width, n)
    ys = np.clip(1.0 - np.abs(xs - center) / half_width, 0.0, None)
    return KellyMixture(xs, ys)


# -- sampling ---------------------------------------------------------------


def draws_per_sample(dist):
    return _kernels.DRAWS_PER_SAMPLE[dist._kernel()[0]]


def sample(dist, stream):
    """One return drawn from ``dist``; advances ``stream``."""
    kind, params, xs, ys, cdf = dist._kernel()
    kappa, c = _kernels.draw_kappa(kind, params, xs, ys, cdf, stream.key, stream.counter)
    stream.advance_to(c)
    return float(kappa)


def sample_many(dist, stream, n):
    kind, params, xs, ys, cdf = dist._kernel()
    out, c = _kernels.draw_many(kind, params, xs, ys, cdf, stream.key, stream.counter, int(n))
    stream.advance_to(c)
    return out


# -- moments ----------------------------------------------------------------


def _flat_log_moments(a, b):
    A, B = 1.0 + a, 1.0 + b
    la, lb = math.log(A), math.log(B)
    width = b - a
    m1 = (B * lb - A * la - width) / width
    m2 = (B * lb * lb - 2 * B * lb - (A * la * la - 2 * A * la) + 2 * width) / width
    return m1, m2


def moments(dist):
    """Gain moments <ln(1+k)>, <ln^2(1+k)>, <k>."""
    if isinstance(dist, Binary):
        lp, lm = math.log1p(dist.f), math.log1p(-dist.f)
        return GainMoments(
            log_gain_mean=dist.p * lp + dist.q * lm,
            log_gain_sq_mean=dist.p * lp * lp + dist.q * lm * lm,
            mean_return=(dist.p - dist.q) * dist.f,
        )
    if isinstance(dist, Flat):
        m1, m2 = _flat_log_moments(dist.a, dist.b)
        return GainMoments(m1, m2, 0.5 * (dist.a + dist.b))
    return quadrature_moments(dist)


def quadrature_moments(dist):
    """Gain moments through the generic quadrature path (no closed forms)."""
    return GainMoments(
        log_gain_mean=dist.expect(math.log1p),
        log_gain_sq_mean=dist.expect(lambda k: math.log1p(k) ** 2),
        mean_return=dist.expect(lambda k: k),
    )


def _check_power_overflow(dist, T):
    lo, hi = dist.support()
    if T > 0 and lo < 0 and T * -math.log1p(lo) > _LOG_OVERFLOW:
        raise OverflowError(
            f"<(1+kappa)^-T> overflows at T={T}: lower support edge kappa={lo} is too close to -1"
        )
    if T < 0 and -T * math.log1p(hi) > _LOG_OVERFLOW:
        raise OverflowError(f"<(1+kappa)^-T> overflows at T={T}: upper support edge kappa={hi}")


def _flat_power_mean(a, b, s):
    """<(1+k)^(s-1)> for k ~ U[a, b], i.e. ((1+b)^s - (1+a)^s) / (s (b-a))."""
    la, lb = math.log1p(a), math.log1p(b)
    if s == 0.0:
        return (lb - la) / (b - a)
    return math.exp(s * la) * math.expm1(s * (lb - la)) / (s * (b - a))


def generalized_moment(dist, T):
    """<(1+kappa)^(-T)>."""
    T = float(T)
    if T == 0.0:
        return 1.0
    _check_power_overflow(dist, T)
    if isinstance(dist, Binary):
        return sum(w * math.exp(-T * math.log1p(k)) for k, w in zip(*dist.atoms()))
    if isinstance(dist, Flat):
        return _flat_power_mean(dist.a, dist.b, 1.0 - T)
    return dist.expect(lambda k: math.exp(-T * math.log1p(k)))


def generalized_moment_minus_one(dist, T):
    """<(1+kappa)^(-T)> - 1, accurate near T = 0."""
    T = float(T)
    if T == 0.0:
        return 0.0
    _check_power_overflow(dist, T)
    if isinstance(dist, Binary):
        return sum(w * math.expm1(-T * math.log1p(k)) for k, w in zip(*dist.atoms()))
    if isinstance(dist, Flat):
        return _flat_power_mean(dist.a, dist.b, 1.0 - T) - 1.0
    return dist.expect(lambda k: math.expm1(-T * math.log1p(k)))


# -- spec strings and files -------------------------------------------------


def read_two_column_csv(path, header):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != list(header):
        raise DistributionError(f"{path}: header must be '{','.join(header)}'")
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise DistributionError(f"{path}:{lineno}: expected two columns")
        try:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
        except ValueError as exc:
            raise DistributionError(f"{path}:{lineno}: {exc}") from None
    return np.array(xs), np.array(ys)


def _real(kv, key, family):
    if key not in kv:
        raise DistributionError(f"{family}: missing parameter '{key}'")
    try:
        return float(kv[key])
    except ValueError:
        raise DistributionError(f"{family}: parameter '{key}' is not a number: {kv[key]!r}") from None


def parse_distribution(text, base_dir=None):
    """Build a distribution from ``binary p=.. f=..``, ``flat a=.. b=..``,
    ``kelly-mixture file=..`` or ``tabulated file=..``."""
    parts = shlex.split(text)
    if not parts:
        raise DistributionError("empty distribution spec")
    family, kv = parts[0].lower(), {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise DistributionError(f"{family}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k.strip()] = v.strip()
    if family == "binary":
        return Binary(p=_real(kv, "p", family), f=_real(kv, "f", family))
    if family == "flat":
        return Flat(a=_real(kv, "a", family), b=_real(kv, "b", family))
    if family in ("tabulated", "kelly-mixture"):
        if "file" not in kv:
            raise DistributionError(f"{family}: missing parameter 'file'")
        path = Path(kv["file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if family == "tabulated":
            xs, ys = read_two_column_csv(path, ("kappa", "density"))
            return Tabulated(xs, ys, source=kv["file"])
        xs, ys = read_two_column_csv(path, ("f", "weight"))
        return KellyMixture(xs, ys, source=kv["file"])
    raise DistributionError(f"unknown distribution family {family!r}")
