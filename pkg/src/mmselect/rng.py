"""Deterministic random number generation.

Every random choice in the package flows through :class:`Xoshiro256StarStar`,
seeded from a single 64-bit value via splitmix64. The generator is fully
specified here (no platform or numpy-version dependence), so identical seeds
reproduce identical streams anywhere.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

PRNG_NAME = "xoshiro256** 1.0 (seeded via splitmix64)"


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** with the reference state-update and output functions."""

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        self.seed = seed
        s = []
        state = seed
        for _ in range(4):
            state, out = _splitmix64(state)
            s.append(out)
        # splitmix64 never yields four zeros, so the state is valid.
        self._s = s

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_uint64() >> 11) * (2.0 ** -53)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_uint64()
            if x < limit:
                return x % n

    def uniforms(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.float64)
        nxt = self.next_uint64
        for i in range(count):
            out[i] = (nxt() >> 11) * (2.0 ** -53)
        return out

    def normals(self, count: int) -> np.ndarray:
        """Standard normal variates via Box-Muller on paired uniforms."""
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = 1.0 - u[:pairs]          # (0, 1]: keeps log() finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:count]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, population: int, count: int) -> list[int]:
        """Distinct indices from range(population), in draw order."""
        if count > population:
            raise ValueError("sample larger than population")
        idx = list(range(population))
        for i in range(count):
            j = i + self.below(population - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:count]

    def spawn(self, stream: int) -> "Xoshiro256StarStar":
        """Independent child generator for a named substream."""
        _, mixed = _splitmix64((self.seed ^ (stream * 0x9E3779B97F4A7C15)) & _MASK64)
        return Xoshiro256StarStar(mixed)
