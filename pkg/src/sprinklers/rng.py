"""Seeded pseudo-random number generation shared by every stochastic component.

A single splitmix64 stream keeps all randomness reproducible from one 64-bit
seed, and the generator is simple enough to mirror bit-for-bit inside the
numba-compiled simulation kernel (see fastsim.py).  The same constants appear
there; change them in both places or nowhere.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
SPLITMIX_MIX1 = 0xBF58476D1CE4E5B9
SPLITMIX_MIX2 = 0x94D049BB133111EB

# 53-bit mantissa scaling for uniform floats in [0, 1).
_INV_2_53 = 2.0 ** -53


class SplitMix64:
    """splitmix64 generator with bias-free integer draws.

    Deterministic for a given seed, cheap to advance, and with a state small
    enough to hand to compiled code as a single uint64.
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    @property
    def state(self) -> int:
        return self._state

    def next_u64(self) -> int:
        self._state = (self._state + SPLITMIX_GAMMA) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * SPLITMIX_MIX1) & MASK64
        z = ((z ^ (z >> 27)) * SPLITMIX_MIX2) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), exact (rejection sampling).

        For power-of-two n the rejection region is empty, so exactly one
        64-bit draw is consumed.
        """
        if n <= 0:
            raise ValueError(f"randbelow requires n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates (Durstenfeld) shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn_seed(self) -> int:
        """Derive an independent substream seed from this stream."""
        return self.next_u64()
