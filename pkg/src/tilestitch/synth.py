"""Deterministic synthetic tiles: uniform noise plus constant rectangles.

Stream layout for a given seed (SplitMix64, one stream):
  1. ``channels * h * w`` noise values in planar order, mapped to [-1, 1);
  2. per rectangle: x0, y0, width, height draws, then one value per channel.
Rectangles are painted in draw order, later ones on top.
"""

from __future__ import annotations

import numpy as np

from .prng import SplitMix64
from .raster import Raster

NOISE_LO, NOISE_HI = -1.0, 1.0


def synth_tile(seed: int, w: int, h: int, channels: int = 1, rects: int = 0) -> Raster:
    if min(w, h, channels) < 1 or rects < 0:
        raise ValueError("synth_tile needs w, h, channels >= 1 and rects >= 0")
    rng = SplitMix64(seed)
    data = rng.uniform_f32(channels * h * w, NOISE_LO, NOISE_HI).reshape(channels, h, w)
    for _ in range(rects):
        x0 = int(rng.next_unit() * w)
        y0 = int(rng.next_unit() * h)
        rw = 1 + int(rng.next_unit() * max(1, w // 4))
        rh = 1 + int(rng.next_unit() * max(1, h // 4))
        values = rng.uniform_f32(channels, NOISE_LO, NOISE_HI)
        data[:, y0:y0 + rh, x0:x0 + rw] = values[:, None, None]
    return Raster(data, copy=False)
