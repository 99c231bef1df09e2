"""Bit-reproducible pseudo-random generator.

Weight initialization, playlist shuffles, and dataset splits must produce
the same values for the same seed on every platform, so this module pins
the generator recipe down to the bit instead of relying on a library RNG:
a single splitmix64 scramble of the seed feeds an xorshift64* stream.
Not suitable for cryptography.
"""

from __future__ import annotations

from typing import MutableSequence

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step; used to spread low-entropy seeds."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class DeterministicRng:
    """xorshift64* stream with a splitmix64-scrambled seed."""

    def __init__(self, seed: int):
        state = splitmix64(seed & _MASK64)
        # xorshift state must never be zero
        self._state = state if state != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_signed(self) -> float:
        """Uniform float in [-1, 1)."""
        return 2.0 * self.uniform() - 1.0

    def fill(self, shape: tuple[int, ...], scale: float) -> np.ndarray:
        """float64 array of uniforms in [-scale, scale), drawn row-major."""
        n = int(np.prod(shape)) if shape else 1
        flat = np.empty(n, dtype=np.float64)
        for i in range(n):
            flat[i] = self.uniform_signed() * scale
        return flat.reshape(shape)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def seed_from_text(seed: int, text: str) -> int:
    """Derive a child seed from a base seed and a text key (stable)."""
    h = splitmix64(seed & _MASK64)
    for byte in text.encode("utf-8"):
        h = splitmix64(h ^ byte)
    return h
