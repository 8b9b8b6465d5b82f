"""Seeded, position-addressable random stream."""
from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass
class RandomStream:
    """A counter-based stream fixed by ``seed``; ``draws`` is the position.

    Two streams with equal ``(seed, draws)`` produce identical output, which is
    what snapshot/resume relies on.
    """

    seed: int
    draws: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        self.seed = int(self.seed)
        self.draws = int(self.draws)
        self._key = _kernels.derive_key(self.seed)

    @property
    def key(self):
        return self._key

    @property
    def counter(self):
        return np.uint64(self.draws)

    def advance_to(self, counter):
        self.draws = int(np.uint64(counter))

    def uniforms(self, n):
        out = _kernels.uniforms(self._key, self.counter, int(n))
        self.draws += int(n)
        return out

    def uniform(self):
        return float(self.uniforms(1)[0])

    def raw(self, k):
        """Raw 64-bit output at absolute position ``k`` (does not move the stream)."""
        return int(_kernels.raw64(self._key, np.uint64(k)))
