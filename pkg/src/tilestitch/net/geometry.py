"""Analytic geometry of a layer DAG.

Every node's pixel grid is tied to input coordinates by an affine map
``centre(j) = offset + stride * j``.  The output node's offset is the input
margin; the lcm of all cumulative strides is the equivariance period.
Zero-padding contamination is tracked per axis as the interval of "clean"
pixels, i.e. pixels whose whole computation reads no padded tap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

from ..errors import GeometryError
from .forward import conv_size, pool_size
from .graph import Conv, CropConcat, Input, MaxPool, NetworkGraph, Upsample

Interval = tuple[int, int] | None


@dataclass(frozen=True)
class NodeMap:
    """Input-coordinate footprint of pixel ``j``: centre ``offset + stride*j``,
    dependency span ``[lo + stride*j, hi + stride*j]``."""

    stride: Fraction
    offset: Fraction
    lo: Fraction
    hi: Fraction


def _node_maps(net: NetworkGraph) -> dict[str, NodeMap]:
    maps: dict[str, NodeMap] = {}
    for node in net.nodes:
        op = node.op
        if isinstance(op, Input):
            maps[node.name] = NodeMap(Fraction(1), Fraction(0), Fraction(0), Fraction(0))
            continue
        m = maps[node.parents[0]]
        if isinstance(op, Conv):
            reach = op.d * (op.k - 1)
            maps[node.name] = NodeMap(m.stride * op.s, m.offset + m.stride * (Fraction(reach, 2) - op.p),
                                      m.lo - m.stride * op.p, m.hi + m.stride * (reach - op.p))
        elif isinstance(op, MaxPool):
            maps[node.name] = NodeMap(m.stride * op.s, m.offset + m.stride * Fraction(op.k - 1, 2),
                                      m.lo, m.hi + m.stride * (op.k - 1))
        elif isinstance(op, Upsample):
            maps[node.name] = NodeMap(m.stride / op.f, m.offset - m.stride * Fraction(op.f - 1, 2 * op.f),
                                      m.lo - m.stride * Fraction(op.f - 1, op.f), m.hi)
        elif isinstance(op, CropConcat):
            mb = maps[node.parents[1]]
            # the first parent is cropped so that its centres line up with the second's
            shift = mb.offset - m.offset
            maps[node.name] = NodeMap(mb.stride, mb.offset, min(mb.lo, m.lo + shift), max(mb.hi, m.hi + shift))
        else:
            maps[node.name] = m
    return maps


def _max_outside_distance(size: int, other: int, clean: Interval) -> int:
    """Largest per-side border distance of a pixel whose coordinate on this axis
    lies outside ``clean``; ``other`` is the extent of the perpendicular axis."""
    best = -1
    cap = (other - 1) // 2
    rows = range(size) if clean is None else [y for y in (clean[0] - 1, clean[1] + 1) if 0 <= y < size]
    for y in rows:
        best = max(best, min(y, size - 1 - y, cap))
    return best


@dataclass(frozen=True)
class NetGeometry:
    net: NetworkGraph = field(repr=False)
    delta_tot: int
    margin_in: Fraction
    out_stride: Fraction
    context_radius: int
    maps: dict[str, NodeMap] = field(repr=False)

    def node_sizes(self, n: int) -> dict[str, int]:
        """Spatial extent of every node for input extent ``n`` along one axis."""
        return _node_sizes(self.net, n)

    def output_size(self, n: int) -> int:
        return self.node_sizes(n)[self.net.output.name]

    def is_valid_size(self, n: int) -> bool:
        """True when every node is non-empty and every crop-concat lines its
        parents up on the same input coordinates (needed for locality)."""
        try:
            sizes = self.node_sizes(n)
        except GeometryError:
            return False
        for node in self.net.nodes:
            if isinstance(node.op, CropConcat):
                a, b = node.parents
                crop = Fraction(sizes[a] - sizes[b], 2)
                if self.maps[a].offset + self.maps[a].stride * crop != self.maps[b].offset:
                    return False
        return True

    def valid_sizes(self, lo: int, hi: int) -> list[int]:
        return [n for n in range(max(lo, 1), hi + 1) if self.is_valid_size(n)]

    def smallest_valid_size(self, at_least: int, limit: int | None = None) -> int:
        limit = limit or at_least + 64 * self.delta_tot + 64
        for n in range(max(at_least, 1), limit + 1):
            if self.is_valid_size(n):
                return n
        raise GeometryError(f"no valid input size in [{at_least}, {limit}]")

    def size_for_output(self, out: int) -> int:
        """Smallest valid input extent whose output extent is at least ``out``."""
        n = max(1, int(math.floor(2 * self.margin_in)) + out * int(math.ceil(self.out_stride)))
        while n > 1 and self.is_valid_size(n - 1) and self.output_size(n - 1) >= out:
            n -= 1
        for _ in range(128 * self.delta_tot + 128):
            if self.is_valid_size(n) and self.output_size(n) >= out:
                return n
            n += 1
        raise GeometryError(f"no valid input size yields output extent {out}")

    def clean_interval(self, n: int) -> Interval:
        return _clean_intervals(self.net, n)[self.net.output.name]

    def contamination_margin(self, w: int, h: int | None = None) -> int:
        """Per-side output margin beyond which no pixel ever read a zero-padded tap.

        Defined as one more than the largest border distance of any
        contaminated output pixel (0 when nothing is contaminated).
        """
        h = w if h is None else h
        ow, oh = self.output_size(w), self.output_size(h)
        cx, cy = self.clean_interval(w), self.clean_interval(h)
        worst = max(_max_outside_distance(ow, oh, cx), _max_outside_distance(oh, ow, cy))
        return worst + 1

    def output_origin(self, x0: int) -> Fraction:
        """Input coordinate of output pixel 0 for a window starting at ``x0``."""
        return x0 + self.margin_in


@lru_cache(maxsize=4096)
def _node_sizes(net: NetworkGraph, n: int) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for node in net.nodes:
        op = node.op
        src = sizes[node.parents[0]] if node.parents else n
        if isinstance(op, Conv):
            out = conv_size(src, op)
        elif isinstance(op, MaxPool):
            out = pool_size(src, op)
        elif isinstance(op, Upsample):
            out = src * op.f
        elif isinstance(op, CropConcat):
            a, b = (sizes[p] for p in node.parents)
            if a < b or (a - b) % 2:
                raise GeometryError(f"input extent {n}: cropconcat {node.name!r} cannot crop {a} to {b}")
            out = b
        else:
            out = src
        if out < 1:
            raise GeometryError(f"input extent {n} too small: node {node.name!r} would be empty")
        sizes[node.name] = out
    return sizes


@lru_cache(maxsize=4096)
def _clean_intervals(net: NetworkGraph, n: int) -> dict[str, Interval]:
    sizes = _node_sizes(net, n)
    clean: dict[str, Interval] = {}
    for node in net.nodes:
        op, size = node.op, sizes[node.name]
        iv = clean[node.parents[0]] if node.parents else (0, n - 1)
        if iv is None:
            out = None
        elif isinstance(op, (Conv, MaxPool)):
            p, d = (op.p, op.d) if isinstance(op, Conv) else (0, 1)
            lo = -((-(iv[0] + p)) // op.s)
            hi = (iv[1] + p - d * (op.k - 1)) // op.s
            out = (lo, hi)
        elif isinstance(op, Upsample):
            out = (iv[0] * op.f, iv[1] * op.f + op.f - 1)
        elif isinstance(op, CropConcat):
            a, b = node.parents
            ia, ib = clean[a], clean[b]
            crop = (sizes[a] - sizes[b]) // 2
            out = None if ia is None or ib is None else (max(ia[0] - crop, ib[0]), min(ia[1] - crop, ib[1]))
        else:
            out = iv
        if out is not None:
            out = (max(out[0], 0), min(out[1], size - 1))
            if out[0] > out[1]:
                out = None
        clean[node.name] = out
    return clean


def geometry(net: NetworkGraph) -> NetGeometry:
    maps = _node_maps(net)
    for name, stride in net.strides.items():
        if stride.denominator != 1:
            raise GeometryError(f"node {name!r} sits at non-integer cumulative stride {stride}")
    period = math.lcm(*(int(s) for s in net.strides.values()))
    out = maps[net.output.name]
    radius = max(out.offset - out.lo, out.hi - out.offset)
    return NetGeometry(net, period, out.offset, out.stride, int(math.ceil(radius)), maps)
