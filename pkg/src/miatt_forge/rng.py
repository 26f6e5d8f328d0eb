"""Deterministic, splittable random streams.

Every random draw in this package derives from a 64-bit seed through
counter-mode SplitMix64 (the Stafford/Steele mix13 finalizer).  The scheme is
pinned so that identical (inputs, seed) pairs give byte-identical artifacts on
any platform, and so that the streams can be reproduced outside Python.  The
exact constants and derivation rules are documented in the README.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

_U64_GAMMA = np.uint64(_GAMMA)
_U64_MIX_A = np.uint64(_MIX_A)
_U64_MIX_B = np.uint64(_MIX_B)
_TWO53 = float(1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int, mod 2**64."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _U64_MIX_A
    z = z ^ (z >> np.uint64(27))
    z = z * _U64_MIX_B
    return z ^ (z >> np.uint64(31))


class SplitStream:
    """Counter-mode SplitMix64 stream with derivable child streams.

    Output i of a stream seeded with s is mix64(s + (c+i)*GAMMA) where c is
    the number of values already consumed.  ``child`` folds integer tags into
    the seed so independent subsystems never share a stream.
    """

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._counter = 0

    @property
    def seed(self) -> int:
        return self._seed

    def child(self, *tags: int) -> "SplitStream":
        s = self._seed
        for tag in tags:
            s = mix64((s + _GAMMA) ^ mix64(tag))
        return SplitStream(s)

    def raw64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(self._seed) + idx * _U64_GAMMA)

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 values uniform in [0, 1) using the top 53 bits."""
        return (self.raw64(n) >> np.uint64(11)).astype(np.float64) / _TWO53

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        """n standard-normal float64 values via Box-Muller."""
        m = (n + 1) // 2
        # u1 in (0, 1] so the log is finite
        u1 = ((self.raw64(m) >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform in [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        out = np.floor(self.uniforms(n) * bound).astype(np.int64)
        # guard the (measure-zero) u == 1.0 rounding edge
        return np.minimum(out, bound - 1)

    def integer(self, bound: int) -> int:
        return int(self.integers(1, bound)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting random keys."""
        return np.argsort(self.raw64(n), kind="stable")

    def choose(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        if k > n:
            raise ValueError("cannot choose more elements than available")
        return self.permutation(n)[:k]
