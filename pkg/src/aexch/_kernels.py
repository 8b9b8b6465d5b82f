"""Numba kernels shared by the sampler and the exchange engine.

The random stream is counter based: draw ``k`` of a stream with key ``K`` is
``mix(K + (k + 1) * GOLDEN)``, i.e. a SplitMix64 sequence whose starting state
is itself derived from the user seed by one SplitMix64 step.  The stream
position is therefore fully described by ``(seed, draws)``.

All counters crossing the Python/numba boundary must be ``np.uint64``; a plain
Python ``int`` would be typed as int64 and the uint64 arithmetic below would
silently promote to float.
"""
import numpy as np
import numba as nb

U64 = nb.uint64
GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
INV_2_53 = 1.0 / 9007199254740992.0

BINARY, FLAT, PIECEWISE, KELLY = 0, 1, 2, 3
# uniforms consumed per kappa draw, indexed by kind
DRAWS_PER_SAMPLE = (1, 1, 1, 2)


def splitmix64_py(z):
    """Reference SplitMix64 finalizer on Python ints (used for key derivation)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_key(seed):
    return np.uint64(splitmix64_py((int(seed) + GOLDEN) & MASK64))


@nb.njit(nb.uint64(nb.uint64), inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def raw64(key, k):
    return _mix(key + (k + U64(1)) * U64(GOLDEN))


@nb.njit(nb.float64(nb.uint64, nb.uint64), inline="always", cache=True)
def uniform(key, k):
    # the top 53 bits fit an int64, whose float conversion is much cheaper
    return np.float64(np.int64(raw64(key, k) >> U64(11))) * INV_2_53


@nb.njit(cache=True)
def uniforms(key, start, n):
    out = np.empty(n)
    c = start
    for i in range(n):
        out[i] = uniform(key, c)
        c += U64(1)
    return out


@nb.njit(cache=True)
def pl_inverse_cdf(xs, ys, cdf, u):
    """Invert the piecewise-quadratic CDF of a piecewise-linear density."""
    n = xs.shape[0]
    k = np.searchsorted(cdf, u, side="right") - 1
    if k < 0:
        k = 0
    if k > n - 2:
        k = n - 2
    r = u - cdf[k]
    h = xs[k + 1] - xs[k]
    y0 = ys[k]
    s = (ys[k + 1] - y0) / h
    disc = y0 * y0 + 2.0 * s * r
    if disc < 0.0:
        disc = 0.0
    denom = y0 + np.sqrt(disc)
    t = 2.0 * r / denom if denom > 0.0 else 0.0
    if t < 0.0:
        t = 0.0
    elif t > h:
        t = h
    return xs[k] + t


@nb.njit(inline="always")
def _draw_binary(params, xs, ys, cdf, key, c):
    u = uniform(key, c)
    f = params[1]
    return (f if u < params[0] else -f), c + U64(1)


@nb.njit(inline="always")
def _draw_flat(params, xs, ys, cdf, key, c):
    u = uniform(key, c)
    return params[0] + u * (params[1] - params[0]), c + U64(1)


@nb.njit(inline="always")
def _draw_piecewise(params, xs, ys, cdf, key, c):
    return pl_inverse_cdf(xs, ys, cdf, uniform(key, c)), c + U64(1)


@nb.njit(inline="always")
def _draw_kelly(params, xs, ys, cdf, key, c):
    # stake fraction from w(f), then the sign with P(+) = (1+f)/2
    f = pl_inverse_cdf(xs, ys, cdf, uniform(key, c))
    u2 = uniform(key, c + U64(1))
    return (f if u2 < 0.5 * (1.0 + f) else -f), c + U64(2)


_DRAWS = (_draw_binary, _draw_flat, _draw_piecewise, _draw_kelly)


@nb.njit
def _draw_many(draw, params, xs, ys, cdf, key, c, n):
    out = np.empty(n)
    for i in range(n):
        out[i], c = draw(params, xs, ys, cdf, key, c)
    return out, c


def draw_kappa(kind, params, xs, ys, cdf, key, c):
    """Draw one return; returns (kappa, next counter)."""
    out, c = _draw_many(_DRAWS[kind], params, xs, ys, cdf, key, c, 1)
    return out[0], c


def draw_many(kind, params, xs, ys, cdf, key, c, n):
    return _draw_many(_DRAWS[kind], params, xs, ys, cdf, key, c, n)


@nb.njit
def _exchange(draw, w, n_trades, params, xs, ys, cdf, key, c):
    n = w.shape[0]
    for _ in range(n_trades):
        i = np.int64(uniform(key, c) * n)
        c += U64(1)
        j = np.int64(uniform(key, c) * (n - 1))
        c += U64(1)
        if j >= i:
            j += 1
        kappa, c = draw(params, xs, ys, cdf, key, c)
        # ties go to the first-drawn agent
        if w[i] <= w[j]:
            poor, rich = i, j
        else:
            poor, rich = j, i
        wp = w[poor]
        w[poor] = wp * (1.0 + kappa)
        w[rich] = w[rich] - kappa * wp
    return c


def exchange(w, n_trades, kind, params, xs, ys, cdf, key, c):
    """Apply ``n_trades`` poorest-scheme trades to ``w`` in place; returns the counter.

    Each trade consumes two uniforms for the pair and the return's draws.  The
    loop is compiled once per distribution kind so the draw inlines.
    """
    return _exchange(_DRAWS[kind], w, n_trades, params, xs, ys, cdf, key, np.uint64(c))


@nb.njit(cache=True)
def replay(w, pairs, kappas):
    """Apply explicitly given trades (first column of ``pairs`` is drawn first)."""
    for t in range(pairs.shape[0]):
        i = pairs[t, 0]
        j = pairs[t, 1]
        if w[i] <= w[j]:
            poor, rich = i, j
        else:
            poor, rich = j, i
        wp = w[poor]
        w[poor] = wp * (1.0 + kappas[t])
        w[rich] = w[rich] - kappas[t] * wp
