"""Conservative multiplicative exchange between N agents.

In every trade two distinct agents are picked uniformly at random; the poorer
one (the first drawn on ties) has its wealth multiplied by ``1 + kappa`` and the
richer one pays ``kappa * w_poor``.  Time is counted in sweeps of N trades.
Each agent takes part in two trades per sweep on average, so the time that
enters the condensing-phase rank law is ``2 * trades / N`` interactions per
agent.
"""
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .stream import RandomStream

SNAPSHOT_MAGIC = "AEXCH-SNAPSHOT v1"


class SnapshotError(ValueError):
    pass


@dataclass
class Population:
    wealths: np.ndarray
    total_wealth: float
    trade_count: int = 0
    seed: int = 0
    draws: int = 0

    @classmethod
    def egalitarian(cls, n, total_wealth=None, seed=0):
        if n < 2:
            raise ValueError(f"need at least two agents, got {n}")
        W = float(n if total_wealth is None else total_wealth)
        return cls(np.full(n, W / n), W, 0, seed, 0)

    @property
    def N(self):
        return self.wealths.shape[0]

    @property
    def sweeps(self):
        return self.trade_count / self.N

    @property
    def interactions_per_agent(self):
        return interactions_per_agent(self.trade_count, self.N)

    def drift(self):
        """Relative deviation of the current wealth sum from W."""
        return abs(math.fsum(self.wealths) - self.total_wealth) / self.total_wealth

    def copy(self):
        return Population(self.wealths.copy(), self.total_wealth, self.trade_count, self.seed, self.draws)

    def stream(self):
        return RandomStream(self.seed, self.draws)


def interactions_per_agent(trades, n):
    return 2.0 * trades / n


@dataclass
class SimConfig:
    N: int
    sweeps: int
    dist: object
    seed: int = 0
    measure_every: int | None = None
    initial: str | Path = "egalitarian"
    total_wealth: float | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if self.sweeps < 1:
            raise ValueError(f"sweeps must be >= 1, got {self.sweeps}")
        if self.measure_every is None:
            self.measure_every = self.sweeps
        if self.measure_every < 1:
            raise ValueError(f"measure_every must be >= 1, got {self.measure_every}")


def trade(w_poor, w_rich, kappa):
    """Single exchange; returns the new (poor, rich) wealths."""
    return w_poor * (1.0 + kappa), w_rich - kappa * w_poor


def advance(pop, dist, n_trades):
    """Apply ``n_trades`` trades to ``pop`` in place and return it."""
    kind, params, xs, ys, cdf = dist._kernel()
    stream = pop.stream()
    c = _kernels.exchange(pop.wealths, int(n_trades), kind, params, xs, ys, cdf, stream.key, stream.counter)
    pop.draws = int(np.uint64(c))
    pop.trade_count += int(n_trades)
    return pop


def step(pop, dist, stream=None):
    """One trade.  With an explicit ``stream`` the draws come from it instead
    of the population's own (seed, draws) position."""
    if stream is None:
        return advance(pop, dist, 1)
    kind, params, xs, ys, cdf = dist._kernel()
    c = _kernels.exchange(pop.wealths, 1, kind, params, xs, ys, cdf, stream.key, stream.counter)
    stream.advance_to(c)
    pop.trade_count += 1
    return pop


def replay(wealths, pairs, kappas):
    """Apply explicit trades: ``pairs[t] = (first_drawn, second_drawn)``."""
    w = np.array(wealths, dtype=float)
    _kernels.replay(w, np.asarray(pairs, dtype=np.int64), np.asarray(kappas, dtype=float))
    return w


def draw_trades(n_agents, n_trades, dist, stream):
    """The pair choices and returns the engine would use, as explicit arrays."""
    pairs = np.empty((n_trades, 2), dtype=np.int64)
    kappas = np.empty(n_trades)
    from .returns import sample

    for t in range(n_trades):
        u = stream.uniforms(2)
        i = int(u[0] * n_agents)
        j = int(u[1] * (n_agents - 1))
        if j >= i:
            j += 1
        pairs[t] = i, j
        kappas[t] = sample(dist, stream)
    return pairs, kappas


def initial_population(config):
    if str(config.initial) == "egalitarian":
        return Population.egalitarian(config.N, config.total_wealth, config.seed)
    pop = read_snapshot(config.initial)
    if pop.N != config.N:
        raise SnapshotError(f"snapshot has N={pop.N}, config asks for N={config.N}")
    if pop.seed != config.seed:
        raise SnapshotError(f"snapshot seed {pop.seed} differs from config seed {config.seed}")
    return pop


def run(config, snapshot_dir=None, progress=None):
    """Run the configured simulation; returns the list of measured populations.

    Measurements are taken every ``measure_every`` sweeps (and at the end).  If
    ``snapshot_dir`` is given each measurement is also written there as
    ``snapshot_<sweep>.txt``.
    """
    pop = initial_population(config)
    start = pop.trade_count // pop.N
    out = []
    done = 0
    while done < config.sweeps:
        chunk = min(config.measure_every, config.sweeps - done)
        advance(pop, config.dist, chunk * pop.N)
        done += chunk
        snap = pop.copy()
        out.append(snap)
        if snapshot_dir is not None:
            write_snapshot(snap, Path(snapshot_dir) / f"snapshot_{start + done:08d}.txt")
        if progress is not None:
            progress(done, config.sweeps)
    return out


def rank_profile(pop_or_wealths):
    """(r, w) with w descending and r = (R-1)/(N-1); r = 0 is the richest."""
    w = getattr(pop_or_wealths, "wealths", pop_or_wealths)
    w = np.sort(np.asarray(w, dtype=float))[::-1]
    n = w.shape[0]
    return RankProfile(np.arange(n) / (n - 1), w)


@dataclass
class RankProfile:
    r: np.ndarray
    w: np.ndarray

    def __iter__(self):
        return iter(zip(self.r.tolist(), self.w.tolist()))


def predicted_rank_wealth(r, t, phi, N, W):
    """Normalized condensing-phase profile W (1-e^{-t phi/N}) / (1-e^{-t phi}) e^{-r t phi}."""
    if phi <= 0:
        raise ValueError(f"phi must be positive, got {phi}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    r = np.asarray(r, dtype=float)
    x = t * phi
    if x == 0.0:
        return np.full_like(r, W / N)
    return W * (math.expm1(-x / N) / math.expm1(-x)) * np.exp(-r * x)


def gini(wealths):
    w = np.sort(np.asarray(wealths, dtype=float))
    n = w.shape[0]
    idx = np.arange(1, n + 1)
    return float(2.0 * np.sum(idx * w) / (n * np.sum(w)) - (n + 1.0) / n)


# -- snapshots --------------------------------------------------------------


def format_snapshot(pop):
    lines = [SNAPSHOT_MAGIC, f"N={pop.N} t={pop.trade_count} seed={pop.seed} draws={pop.draws}"]
    lines.extend(f"{x:.17g}" for x in pop.wealths)
    return "\n".join(lines) + "\n"


def write_snapshot(pop, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(format_snapshot(pop))
    os.replace(tmp, path)
    return path


def read_snapshot(path):
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: missing '{SNAPSHOT_MAGIC}' header")
    try:
        meta = dict(tok.split("=", 1) for tok in lines[1].split())
        n, t, seed, draws = (int(meta[k]) for k in ("N", "t", "seed", "draws"))
    except (IndexError, KeyError, ValueError) as exc:
        raise SnapshotError(f"{path}: malformed metadata line ({exc})") from None
    values = [ln for ln in lines[2:] if ln.strip()]
    if len(values) != n:
        raise SnapshotError(f"{path}: expected {n} wealth lines, found {len(values)}")
    w = np.array([float(v) for v in values])
    if np.any(w <= 0):
        raise SnapshotError(f"{path}: wealths must be positive")
    return Population(w, math.fsum(w), t, seed, draws)
