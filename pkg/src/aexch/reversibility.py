"""Transition kernels of a single trade and a numerical detailed-balance check.

A trade moves wealth rho from the agent that ends at ``z - rho`` to the one
that ends at ``x``.  ``forward_rate(x, z, rho)`` is the rate density of
(x - rho, z) -> (x, z - rho); ``backward_rate`` is that of the reverse jump.
Reversibility would require them to be equal; ``violation`` measures how far
they are apart on a lattice of states.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

INTERIOR = 0.9
EDGE_TOL = 1e-9


class ReversibilityError(ValueError):
    pass


def _density(dist, kappa):
    if getattr(dist, "is_atomic", False):
        raise ReversibilityError(f"{dist} has atoms and no density; use atomic_violation")
    kappa = np.asarray(kappa, dtype=float)
    inside = np.abs(kappa) < 1.0
    return np.where(inside, dist.pdf(np.where(inside, kappa, 0.0)), 0.0)


def forward_rate(dist, x, z, rho):
    """Rate density of (x - rho, z) -> (x, z - rho)."""
    x, z, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, z, rho)))
    y = x - rho
    if np.any(y <= 0) or np.any(z <= 0):
        raise ValueError("forward_rate needs x - rho > 0 and z > 0")
    # poorer agent y gains rho = y k, or poorer agent z loses rho = -z k
    out = np.where(z > y, _density(dist, rho / y) / y, 0.0)
    out = out + np.where(y > z, _density(dist, -rho / z) / z, 0.0)
    return out[()] if out.ndim == 0 else out


def backward_rate(dist, x, z, rho):
    """Rate density of (x, z - rho) -> (x - rho, z)."""
    x, z, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, z, rho)))
    u = z - rho
    if np.any(x <= 0) or np.any(u <= 0):
        raise ValueError("backward_rate needs x > 0 and z - rho > 0")
    out = np.where(u > x, _density(dist, -rho / x) / x, 0.0)
    out = out + np.where(x > u, z / u**2 * _density(dist, rho / u), 0.0)
    return out[()] if out.ndim == 0 else out


def total_rate(dist, y, z):
    """Integral over rho of the forward kernel leaving the state (y, z).

    Equals one per unit pair-selection rate.
    """
    lo, hi = dist.support()
    scale = y if y < z else z
    sign = 1.0 if y < z else -1.0
    a, b = sorted((sign * lo * scale, sign * hi * scale))

    def f(rho):
        return float(forward_rate(dist, y + rho, z, rho))

    knots = getattr(dist, "kappas", None)
    if knots is None:
        knots = getattr(dist, "fractions", None)
        if knots is not None:
            knots = np.concatenate([-knots[::-1], knots])
    points = None
    if knots is not None:
        points = sorted({float(sign * k * scale) for k in knots if a < sign * k * scale < b})
    val, _ = integrate.quad(f, a, b, points=points, epsabs=1e-13, epsrel=1e-12, limit=500)
    return val


def detailed_balance_sides(dist, kappa):
    """Both sides of the two incompatible conditions at return ``kappa``.

    Returns (pi(-k), pi(k/(1-k))/(1-k), pi(k/(1-k))/(1-k)^2); the two
    right-hand sides differ by the factor 1/(1-k).
    """
    left = float(_density(dist, -kappa))
    moved = float(_density(dist, kappa / (1.0 - kappa)))
    return left, moved / (1.0 - kappa), moved / (1.0 - kappa) ** 2


@dataclass
class ViolationTable:
    x: np.ndarray
    z: np.ndarray
    rho: np.ndarray
    forward: np.ndarray
    backward: np.ndarray

    @property
    def rel_violation(self):
        tot = self.forward + self.backward
        return np.abs(self.forward - self.backward) / tot

    def max(self):
        return float(self.rel_violation.max())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["x", "z", "rho", "forward", "backward", "rel_violation"])
            for row in zip(self.x, self.z, self.rho, self.forward, self.backward, self.rel_violation):
                out.writerow([repr(float(v)) for v in row])
        return Path(path)


def sample_lattice(dist, n_wealth=20, n_kappa=25, w_range=(1e-2, 1e2)):
    """(x, z, rho) points with a positive forward rate.

    x and z run over a log lattice; for each pair rho is built from returns
    inside the central ``INTERIOR`` fraction of the support, once for each
    forward branch (poorer agent gaining or losing).  Points on the regime
    boundaries are dropped.
    """
    lo, hi = dist.support()
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * INTERIOR
    kappas = np.linspace(mid - half, mid + half, n_kappa)
    kappas = kappas[kappas != 0.0]
    w = np.geomspace(*w_range, n_wealth)
    X, Z, K = (a.ravel() for a in np.meshgrid(w, w, kappas, indexing="ij"))
    # branch 1: initial poor agent x - rho < z gains rho = (x - rho) k
    r1 = X * K / (1.0 + K)
    ok1 = Z > X - r1
    # branch 2: initial poor agent z < x - rho gives away rho = -z k
    r2 = -Z * K
    ok2 = X - r2 > Z
    xs = np.concatenate([X[ok1], X[ok2]])
    zs = np.concatenate([Z[ok1], Z[ok2]])
    rhos = np.concatenate([r1[ok1], r2[ok2]])
    keep = (
        (xs - rhos > 0)
        & (zs - rhos > 0)
        & (np.abs(zs - (xs - rhos)) > EDGE_TOL * zs)
        & (np.abs((zs - rhos) - xs) > EDGE_TOL * xs)
    )
    return xs[keep], zs[keep], rhos[keep]


def violation_table(dist, sample_points=None):
    if sample_points is None:
        sample_points = sample_lattice(dist)
    x, z, rho = (np.asarray(a, dtype=float) for a in sample_points)
    fwd = np.asarray(forward_rate(dist, x, z, rho), dtype=float)
    bwd = np.asarray(backward_rate(dist, x, z, rho), dtype=float)
    live = (fwd + bwd) > 0
    if not np.any(live):
        raise ReversibilityError("all sampled transition rates vanish; sample inside the support")
    return ViolationTable(x[live], z[live], rho[live], fwd[live], bwd[live])


def _atoms_at(dist, x, z):
    """Forward and backward rate atoms in rho for fixed final (x, z)."""
    fwd, bwd = [], []
    for k, p in zip(*dist.atoms()):
        r = x * k / (1.0 + k)
        if z > x - r and x - r > 0:
            fwd.append((r, p / (1.0 + k)))
        r = -z * k
        if x - r > z:
            fwd.append((r, p))
        r = -x * k
        if z - r > x:
            bwd.append((r, p))
        r = z * k / (1.0 + k)
        if x > z - r and z - r > 0:
            bwd.append((r, p))
    return fwd, bwd


def atomic_violation(dist, n_wealth=20, w_range=(1e-2, 1e2)):
    """Largest mismatch between forward and backward rate atoms.

    Atoms are matched by position in rho; an atom without a partner counts as
    a full violation of one.
    """
    worst = 0.0
    seen = False
    w = np.geomspace(*w_range, n_wealth)
    for x in w:
        for z in w:
            fwd, bwd = _atoms_at(dist, x, z)
            pending = list(bwd)
            for r, q in fwd:
                seen = True
                match = next((b for b in pending if math.isclose(b[0], r, rel_tol=1e-12, abs_tol=1e-15)), None)
                if match is None:
                    worst = 1.0
                    continue
                pending.remove(match)
                worst = max(worst, abs(q - match[1]) / (q + match[1]))
            if pending:
                seen = True
                worst = 1.0
    if not seen:
        raise ReversibilityError("no nonzero transition atoms on the lattice")
    return worst


def violation(dist, sample_points=None):
    """Max relative violation |F - B| / (F + B) over the sample."""
    if getattr(dist, "is_atomic", False):
        return atomic_violation(dist)
    return violation_table(dist, sample_points).max()
