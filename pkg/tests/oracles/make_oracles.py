"""Regenerate frozen.json with 50-digit mpmath evaluations.

Independent of the package: every value comes straight from the defining
formula, not from any aexch routine.  Run once; the tests only read the JSON.
"""
import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50
out = {}


def s(x):
    return mp.nstr(x, 30)


# interface p_c: p ln(1+f) + (1-p) ln(1-f) = 0, solved numerically rather than in closed form
out["p_c"] = {}
for f in ("0.1", "0.2", "0.5", "0.8", "0.9"):
    F = mp.mpf(f)
    out["p_c"][f] = s(mp.findroot(lambda p: p * mp.log(1 + F) + (1 - p) * mp.log(1 - F), 0.6))

# <ln(1+k)> by direct integration / summation
out["log_gain_mean"] = {
    "binary p=0.5 f=0.5": s(mp.mpf("0.5") * mp.log(1.5) + mp.mpf("0.5") * mp.log(0.5)),
    "flat a=-0.1 b=0.1": s(mp.quad(lambda k: mp.log(1 + k), [-0.1, 0.1]) / mp.mpf("0.2")),
    "flat a=-0.5 b=0.5": s(mp.quad(lambda k: mp.log(1 + k), [-0.5, 0.5])),
}


def binary_root(p, f, guess):
    p, f = mp.mpf(p), mp.mpf(f)
    return mp.findroot(lambda T: p * (1 + f) ** -T + (1 - p) * (1 - f) ** -T - 1, guess)


def flat_root(a, b, guess):
    a, b = mp.mpf(a), mp.mpf(b)
    # bracket away from the trivial root T = 0
    return mp.findroot(lambda T: mp.quad(lambda k: (1 + k) ** -T, [a, b]) / (b - a) - 1, guess, solver="anderson")


out["T"] = {
    "binary p=0.6 f=0.3": s(binary_root("0.6", "0.3", 1.0)),
    "binary p=0.8 f=0.5": s(binary_root("0.8", "0.5", 2.0)),
    "flat a=-0.2 b=0.4": s(flat_root("-0.2", "0.4", (0.5, 20))),
    "flat a=-0.5 b=0.7": s(flat_root("-0.5", "0.7", (0.1, 5))),
}

# T = 1 flat law from z = 2: a = ln z/(z-1) - 1, b = z ln z/(z-1) - 1
z = mp.mpf(2)
out["flat_T1_z2"] = [s(mp.log(z) / (z - 1) - 1), s(z * mp.log(z) / (z - 1) - 1)]

# gamma approximation at T=2 and T=3
out["gamma"] = {}
for T in (2, 3):
    a = mp.gamma(T + 1) ** T / mp.gamma(T) ** (T + 1)
    b = mp.gamma(T) / mp.gamma(T + 1)
    out["gamma"][str(T)] = {"amplitude": s(a), "scale": s(b)}


def expo_residual(p, f, w):
    p, f, w = mp.mpf(p), mp.mpf(f), mp.mpf(w)

    def g(k):
        return (mp.exp(-w * (1 - k) / (1 + k)) - mp.exp(-w * (1 + k) / (1 - k)) + 1) / (1 + k)

    return p * g(f) + (1 - p) * g(-f) - 1


out["expo_residual_binary_p0.6_f0.3_w1"] = s(expo_residual("0.6", "0.3", "1"))

# triangle Kelly mixture centred at 0.5 (half width 0.02): mass on kappa > 0
hw, c = mp.mpf("0.02"), mp.mpf("0.5")


def tri(f):
    return max(mp.mpf(0), 1 - abs(f - c) / hw) / hw


out["kelly_triangle_positive_mass"] = s(
    mp.quad(lambda f: (1 + f) / 2 * tri(f), [c - hw, c, c + hw])
    / mp.quad(lambda f: tri(f), [c - hw, c, c + hw])
)

# small-N hand computation: trade sequence on three agents
w = [mp.mpf(1), mp.mpf(2), mp.mpf(3)]
for (i, j), k in (((0, 1), mp.mpf("0.3")), ((2, 1), mp.mpf("-0.2")), ((1, 0), mp.mpf("0.5"))):
    poor, rich = (i, j) if w[i] <= w[j] else (j, i)
    gain = k * w[poor]
    w[poor] += gain
    w[rich] -= gain
out["replay_three_agents"] = [s(x) for x in w]

Path(__file__).with_name("frozen.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
