"""SplitMix64 stream shared by weight init and synthetic tiles.

SplitMix64 is counter based: output ``i`` (0-based) is ``mix(seed + (i+1)*GAMMA)``,
so a block of values can be produced with wrapping uint64 numpy arithmetic
and still match the scalar stream bit for bit.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _M1) & _MASK
        z = ((z ^ (z >> 27)) * _M2) & _MASK
        return z ^ (z >> 31)

    def next_u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as a uint64 array, advancing the stream."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & _MASK
        return z

    def next_unit(self) -> float:
        """Uniform float64 in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_unit_array(self, n: int) -> np.ndarray:
        return (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_f32(self, n: int, lo: float, hi: float) -> np.ndarray:
        """``n`` float32 values ``lo + (hi - lo) * u``, rounded once from float64."""
        return (lo + (hi - lo) * self.next_unit_array(n)).astype(np.float32)
