"""Deterministic 64-bit PRNG used by every stochastic component.

The generator is SplitMix64 (Steele et al.), chosen because it is trivial
to port bit-for-bit to any language: one 64-bit additive counter and a
finalizer of xor-shifts and two multiplications. Gaussian variates come
from a Box-Muller transform applied to 53-bit uniforms, so synthetic
corpora are reproducible across platforms down to the byte.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z = (z ^ (z >> 30)) * _MUL1 & _MASK
    z = (z ^ (z >> 27)) * _MUL2 & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Hash (seed, keys...) into a new 64-bit seed.

    Used to give corpus images, epochs, and patches independent streams
    from one run seed.
    """
    z = seed & _MASK
    for k in keys:
        z = _mix((z + _GAMMA + (k & _MASK)) & _MASK)
    return _mix((z + _GAMMA) & _MASK)


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive (rejection-free modulo is
        fine here: ranges are tiny relative to 2^64)."""
        span = hi - lo + 1
        return lo + self.next_u64() % span

    def normal(self, mean: float = 0.0, sd: float = 1.0) -> float:
        """One Gaussian draw; consumes two u64s (Box-Muller, cos branch)."""
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # in (0, 1]
        u2 = (self.next_u64() >> 11) * 2.0**-53
        return mean + sd * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    def normal_field(self, shape: tuple[int, ...], mean: float = 0.0, sd: float = 1.0) -> np.ndarray:
        """Vectorized Gaussian field, identical to repeated normal() calls.

        SplitMix64 is a hash of its counter, so a whole block of states can
        be produced at once with uint64 array arithmetic. Only the cosine
        branch of Box-Muller is used, exactly as in normal().
        """
        n = int(np.prod(shape))
        u = self._next_block(2 * n).reshape(n, 2)
        u1 = ((u[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (u[:, 1] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + sd * z).reshape(shape)

    def uniform_field(self, shape: tuple[int, ...], lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Vectorized uniforms in [lo, hi), matching repeated uniform() calls."""
        n = int(np.prod(shape))
        u = (self._next_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def _next_block(self, n: int) -> np.ndarray:
        """n consecutive outputs as a uint64 array; advances the stream."""
        gamma = np.uint64(_GAMMA)
        base = np.uint64(self._state)
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = base + idx * gamma
        self._state = int(z[-1])
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
        return z ^ (z >> np.uint64(31))
