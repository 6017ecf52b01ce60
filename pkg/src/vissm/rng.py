"""Deterministic 64-bit splitmix-style PRNG.

Every stochastic choice in this package (data synthesis, parameter init,
batch shuffling) flows through this generator so that results are
bit-reproducible across platforms and numpy versions. The generator is the
splitmix64 sequence: state advances by a fixed odd gamma and each output is
a finalized mix of the state.

Constants (hex):
    GAMMA = 0x9E3779B97F4A7C15   (2^64 / golden ratio, odd)
    MIX1  = 0xBF58476D1CE4E5B9
    MIX2  = 0x94D049BB133111EB
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# 2^-53: converts the top 53 bits of a u64 into a double in [0, 1)
_U53 = 2.0 ** -53


def mix64(z: int) -> int:
    """Finalization mix: avalanches all input bits into the output."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * MIX1) & _MASK
    z = ((z ^ (z >> 27)) * MIX2) & _MASK
    return z ^ (z >> 31)


def hash_combine(*parts: int) -> int:
    """Fold several integers into one well-mixed 64-bit seed."""
    acc = 0
    for p in parts:
        acc = mix64((acc + GAMMA + (int(p) & _MASK)) & _MASK)
    return acc


class SplitMix64:
    """Sequential splitmix64 stream.

    Scalar draws use exact Python integer arithmetic; bulk draws use the
    closed form state_k = seed + (k+1) * GAMMA evaluated with wrapping
    numpy uint64 arithmetic (verified identical to the scalar path in the
    test suite).
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK
        self._drawn = 0  # number of u64s produced so far

    # -- scalar draws ------------------------------------------------------

    def next_u64(self) -> int:
        self._state = (self._state + GAMMA) & _MASK
        self._drawn += 1
        return mix64(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Double in [lo, hi) with 53 bits of resolution."""
        u = (self.next_u64() >> 11) * _U53
        return lo + (hi - lo) * u

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """One Gaussian draw via Box-Muller (consumes two u64s)."""
        u1 = 1.0 - (self.next_u64() >> 11) * _U53  # (0, 1]
        u2 = (self.next_u64() >> 11) * _U53
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + std * z

    def below(self, n: int) -> int:
        """Integer in [0, n) by 128-bit multiply-shift (no modulo bias to speak of at our n)."""
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    # -- bulk draws --------------------------------------------------------

    def _next_u64_array(self, n: int) -> np.ndarray:
        ks = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + ks * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * GAMMA) & _MASK
        self._drawn += n
        return z

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self._next_u64_array(n) >> np.uint64(11)).astype(np.float64) * _U53
        return (lo + (hi - lo) * u).reshape(shape)

    def normal_array(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        raw = self._next_u64_array(2 * n)
        u1 = 1.0 - (raw[0::2] >> np.uint64(11)).astype(np.float64) * _U53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape)

    # -- state -------------------------------------------------------------

    def get_state(self) -> tuple[int, int]:
        return (self._state, self._drawn)

    def set_state(self, state: tuple[int, int]) -> None:
        self._state = int(state[0]) & _MASK
        self._drawn = int(state[1])
