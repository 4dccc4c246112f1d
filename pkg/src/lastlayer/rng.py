"""Seedable 64-bit random number generation with a frozen algorithm.

Every random draw in this package flows through SplitMix64 (Steele, Lea &
Flood's mixing function: additive 0x9E3779B97F4A7C15 counter followed by a
xor-shift-multiply finalizer).  The algorithm is fixed for the lifetime of
the repository so that seeded datasets, splits and training runs stay
bit-identical across library versions; relying on numpy's Generator would
tie snapshots to numpy's internal streams.

Streams are counter-based: the n-th output depends only on (seed, n), so a
vectorized block of draws equals the same draws taken one at a time, and
per-iteration child seeds (`derive`) make training loops resumable from any
iteration without replaying history.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# 2**-53: turns the top 53 bits of a uint64 into a double in [0, 1)
_UNIT = 1.1102230246251565e-16


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a python integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _label_key(label) -> int:
    """Map a stream label (int or str) to a 64-bit key (FNV-1a for strings)."""
    if isinstance(label, bool):
        raise TypeError("bool is not a valid stream label")
    if isinstance(label, int):
        return label & MASK64
    if isinstance(label, str):
        h = _FNV_OFFSET
        for byte in label.encode("utf-8"):
            h = ((h ^ byte) * _FNV_PRIME) & MASK64
        return h
    raise TypeError(f"stream label must be int or str, got {type(label).__name__}")


def derive(seed: int, *labels) -> int:
    """Derive an independent child seed from a base seed and labels.

    derive(seed, "dropout", t) gives every training iteration its own
    stream, which is what makes checkpoint-resumed runs bit-identical to
    uninterrupted ones.
    """
    h = mix64(seed & MASK64)
    for label in labels:
        h = mix64((h ^ _label_key(label)) + _GAMMA)
    return h


class Rng:
    """SplitMix64 stream.

    Scalar and vectorized draws read the same underlying counter sequence,
    so `[rng.next_uint() for _ in range(n)]` equals `rng.uints(n)`.
    """

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_uint(self) -> int:
        self._state = (self._state + _GAMMA) & MASK64
        return mix64(self._state)

    def uints(self, n: int) -> np.ndarray:
        """n raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & MASK64
        return z

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), from the top 53 bits of each output."""
        return (self.uints(n) >> np.uint64(11)).astype(np.float64) * _UNIT

    def uniform_matrix(self, rows: int, cols: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """rows x cols matrix of uniforms on [low, high), filled row-major."""
        u = self.uniforms(rows * cols).reshape(rows, cols)
        if low != 0.0 or high != 1.0:
            u = low + (high - low) * u
        return u

    def randbelow(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            z = self.next_uint()
            if z < limit:
                return z % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of 0..n-1 as an int64 array."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
