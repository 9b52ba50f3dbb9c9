"""SplitMix64 counter-based generator.

Output ``n`` (n = 1, 2, ...) of a stream seeded with ``s`` is
``mix(s + n * 0x9E3779B97F4A7C15 mod 2**64)`` with the standard SplitMix64
finalizer (shifts 30/27/31, multipliers 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB).  Because it is counter-based, blocks of outputs are
generated with vectorized uint64 arithmetic and the stream is identical on
every platform.
"""
from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64_mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._state = self.seed

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
        z = np.uint64(self._state) + steps
        self._state = (self._state + n * GOLDEN_GAMMA) & _MASK
        return splitmix64_mix(z)

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in (0, 1] with 53 random bits."""
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(u[:m]))
        phi = 2.0 * np.pi * u[m:]
        return np.concatenate([r * np.cos(phi), r * np.sin(phi)])[:n]

    def complex_normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        g = self.normal(2 * n)
        return (g[:n] + 1j * g[n:]).reshape(shape)
