"""Seedable pseudo-random generator used everywhere randomness is needed.

The generator is xorshift128+ (Vigna 2014), with its two 64-bit state words
filled from the seed by splitmix64.  It is implemented here rather than taken
from a library so that synthetic traces, parameter initialisation and batch
shuffling reproduce bit-for-bit from a seed, independent of the platform's
default RNG choices.

Algorithm (all arithmetic mod 2^64):

    splitmix64:  z = (x += 0x9E3779B97F4A7C15)
                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                 return z ^ (z >> 31)

    xorshift128+ step:  x, y = s0, s1
                        s0 = y
                        x ^= x << 23
                        s1 = x ^ y ^ (x >> 17) ^ (y >> 26)
                        return (s1 + y) mod 2^64

Uniform doubles take the top 53 bits: (word >> 11) * 2^-53, giving [0, 1).
Gaussians use Box-Muller on two fresh uniforms per draw (no caching, so the
draw count per call site is fixed and reproducible).
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


class Prng:
    """xorshift128+ stream seeded from a single integer."""

    __slots__ = ("_s0", "_s1")

    def __init__(self, seed: int):
        x = seed & _MASK64
        x, self._s0 = _splitmix64(x)
        _, self._s1 = _splitmix64(x)
        if self._s0 == 0 and self._s1 == 0:  # all-zero state would stay stuck
            self._s1 = 1

    def next_u64(self) -> int:
        x, y = self._s0, self._s1
        self._s0 = y
        x = (x ^ (x << 23)) & _MASK64
        self._s1 = x ^ y ^ (x >> 17) ^ (y >> 26)
        return (self._s1 + y) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + (hi - lo) * u

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller; 1 - u1 lies in (0, 1] so the log argument is never 0.
        u1 = (self.next_u64() >> 11) * 2.0 ** -53
        u2 = (self.next_u64() >> 11) * 2.0 ** -53
        z = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def randint(self, n: int) -> int:
        """Integer in [0, n). Uses the 53-bit uniform; bias is < 2^-53 * n."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
