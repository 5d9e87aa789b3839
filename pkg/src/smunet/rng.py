"""Portable deterministic random number generation.

All randomness in the project flows through :class:`PortableRng`, an
xorshift64* generator with fixed, documented constants, so datasets,
parameter initializations and shuffles are reproducible bit-for-bit across
platforms and languages:

    state ^= state >> 12
    state ^= state << 25   (mod 2^64)
    state ^= state >> 27
    output = state * 0x2545F4914F6CDD1D  (mod 2^64)

Seeds are pre-mixed with one round of SplitMix64 so small consecutive seeds
land in well-separated states. Uniform doubles use the top 53 bits; normals
come from the Box-Muller transform.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of SplitMix64; used for seed mixing and stream derivation."""
    x = (x + _SPLITMIX_GAMMA) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


class PortableRng:
    """xorshift64* stream with a SplitMix64-mixed seed."""

    def __init__(self, seed: int):
        self.state = splitmix64(seed & _MASK)
        if self.state == 0:
            self.state = _SPLITMIX_GAMMA
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s = self.state
        s ^= (s >> 12)
        s = (s ^ (s << 25)) & _MASK
        s ^= (s >> 27)
        self.state = s
        return (s * _MULT) & _MASK

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] via rejection-free modulo (desk-scale ranges)."""
        span = hi - lo + 1
        if span <= 0:
            raise ValueError("randint: empty range")
        return lo + self.next_u64() % span

    def normal(self) -> float:
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # Box-Muller; u1 nudged away from 0 so log stays finite
        u1 = self.uniform()
        u2 = self.uniform()
        if u1 <= 0.0:
            u1 = 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    # -- bulk array helpers -------------------------------------------
    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.uniform()
        return (lo + (hi - lo) * out).reshape(shape)

    def normal_array(self, shape, sigma: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal()
        return (sigma * out).reshape(shape)

    def spawn(self, stream: int) -> "PortableRng":
        """Independent child stream derived from the current state."""
        child = PortableRng(0)
        child.state = splitmix64(self.state ^ splitmix64(stream)) or _SPLITMIX_GAMMA
        return child


def derive_seed(master_seed: int, purpose: int) -> int:
    """Fixed seed-splitting scheme: one master seed reproduces everything.

    Purposes: 1 = dataset generation, 2 = parameter init, 3 = shuffling.
    """
    return splitmix64((master_seed & _MASK) ^ splitmix64(purpose))
