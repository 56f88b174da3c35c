"""Independent reference implementations used as test oracles."""

from __future__ import annotations

MASK = (1 << 64) - 1


def splitmix64_ref(seed: int, n: int) -> list[int]:
    """Textbook scalar SplitMix64, written without the package's code."""
    out, x = [], seed & MASK
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) & MASK
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def unit_ref(u: int) -> float:
    return (u >> 11) / float(1 << 53)


def pool1d_ref(values: list[float], k: int, s: int) -> list[float]:
    return [max(values[i:i + k]) for i in range(0, len(values) - k + 1, s)]


def conv2d_ref(x, w, b, p: int):
    """Direct single-channel-out 2-D convolution over nested lists (float64)."""
    cin, h, wd = len(x), len(x[0]), len(x[0][0])
    k = len(w[0])
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1

    def at(c, y, xx):
        if 0 <= y < h and 0 <= xx < wd:
            return x[c][y][xx]
        return 0.0

    return [[b + sum(w[c][u][v] * at(c, i + u - p, j + v - p)
                     for c in range(cin) for u in range(k) for v in range(k))
             for j in range(wo)] for i in range(ho)]
