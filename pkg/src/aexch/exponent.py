"""Small-wealth exponent T, phase classification and closed-form special cases."""
import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .returns import generalized_moment_minus_one, moments

CRITICAL_BAND = 1e-12
ROOT_TOL = 1e-12
T_CAP = 1e4
Z_MAX = 4.9215


class Phase(str, enum.Enum):
    STABLE = "Stable"
    CONDENSING = "Condensing"
    CRITICAL = "Critical"


@dataclass(frozen=True)
class ExponentReport:
    phase: Phase
    T: float | None
    T_first_order: float
    log_gain_mean: float

    @property
    def stable(self):
        return self.phase is Phase.STABLE


@dataclass(frozen=True)
class GammaApprox:
    """P(w) = amplitude * w**(T-1) * exp(-w/scale), unit mass and unit mean."""

    T: float
    amplitude: float
    scale: float

    def pdf(self, w):
        w = np.asarray(w, dtype=float)
        at_zero = 0.0 if self.T > 1 else (self.amplitude if self.T == 1 else np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(math.log(self.amplitude) + (self.T - 1.0) * np.log(w) - w / self.scale)
        return np.where(w > 0, out, at_zero)

    def cdf(self, w):
        return special.gammainc(self.T, w / self.scale)


class ExponentWarning(UserWarning):
    pass


def first_order_exponent(m):
    if m.log_gain_sq_mean == 0.0:
        return math.nan
    return 2.0 * m.log_gain_mean / m.log_gain_sq_mean


def solve_exponent(dist):
    """Root T > 0 of <(1+kappa)^-T> = 1 together with the phase of ``dist``.

    ``g(T) = <(1+kappa)^-T>`` is convex with g(0) = 1 and g'(0) = -<ln(1+kappa)>,
    so a positive root exists exactly when <ln(1+kappa)> > 0 (and kappa < 0 has
    weight).  Without losing returns the root is pushed to infinity; that case is
    reported as ``T = inf`` with an ``ExponentWarning``.
    """
    m = moments(dist)
    mu = m.log_gain_mean
    t1 = first_order_exponent(m)
    if abs(mu) <= CRITICAL_BAND:
        return ExponentReport(Phase.CRITICAL, 0.0, t1, mu)
    if mu < 0:
        return ExponentReport(Phase.CONDENSING, None, t1, mu)

    def h(T):
        return generalized_moment_minus_one(dist, T)

    lo = 1e-6
    if t1 > 0 and math.isfinite(t1):
        lo = min(lo, 0.25 * t1)
    while h(lo) >= 0.0:
        lo *= 0.1
        if lo < 1e-300:
            raise ArithmeticError(f"cannot bracket the exponent root below T={lo}")
    hi = 1.0
    while True:
        try:
            val = h(hi)
        except OverflowError:
            val = math.inf
        if val > 0.0:
            break
        lo = hi
        hi *= 2.0
        if hi > T_CAP:
            warnings.warn(
                f"<(1+kappa)^-T> stays below 1 up to T={T_CAP:g}; reporting T=inf", ExponentWarning, stacklevel=2
            )
            return ExponentReport(Phase.STABLE, math.inf, t1, mu)
    T = optimize.brentq(h, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    # secant polish: brentq stops on the bracket width, not on |g - 1|
    for _ in range(5):
        r = h(T)
        if abs(r) <= ROOT_TOL:
            break
        dT = 1e-7 * max(T, 1e-6)
        slope = (h(T + dT) - h(T - dT)) / (2 * dT)
        if slope == 0:
            break
        T -= r / slope
    return ExponentReport(Phase.STABLE, T, t1, mu)


def yard_sale_critical_p(f):
    """p_c = -ln(1-f) / ln((1+f)/(1-f)), where <ln(1+kappa)> vanishes."""
    if not 0.0 < f < 1.0:
        raise ValueError(f"stake fraction must lie in (0, 1), got {f}")
    return -math.log1p(-f) / (math.log1p(f) - math.log1p(-f))


def yard_sale_p_for_T1(f):
    return 0.5 * (1.0 + f)


def yard_sale_p_for_T2(f):
    return 0.5 + (3.0 * f - f**3) / 4.0


def flat_interface_residual(a, b):
    """ln[(1+b)^(1+b) / (1+a)^(1+a)] - (b - a); positive means stable."""
    if not -1.0 < a < b < 1.0:
        raise ValueError(f"need -1 < a < b < 1, got a={a}, b={b}")
    return (1.0 + b) * math.log1p(b) - (1.0 + a) * math.log1p(a) - (b - a)


def flat_T1_parameterization(z):
    """Flat bounds (a, b) with T = 1, parameterized by z = exp(b - a)."""
    if not 1.0 <= z <= Z_MAX:
        raise ValueError(f"z must lie in [1, {Z_MAX}], got {z}")
    x = z - 1.0
    ratio = 1.0 if x == 0.0 else math.log1p(x) / x
    return ratio - 1.0, z * ratio - 1.0


def flat_T2_lower(b):
    """Lower bound a = -b/(1+b) that gives T = 2 for a flat law on [a, b]."""
    return -b / (1.0 + b)


def gamma_approx(T):
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    # a = Gamma(T+1)^T / Gamma(T)^(T+1), b = Gamma(T) / Gamma(T+1)
    lg, lg1 = special.gammaln(T), special.gammaln(T + 1.0)
    return GammaApprox(T=T, amplitude=math.exp(T * lg1 - (T + 1.0) * lg), scale=math.exp(lg - lg1))
