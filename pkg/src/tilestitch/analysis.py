"""Measurement procedures for translational variance and stitching quality.

Errors are measured against the full-tile pass (``full_tile_forward``), not
against ground truth: with untrained random weights the only meaningful
reference is what the same network says when it sees the whole tile.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GeometryError, ShapeError
from .net.forward import forward_array
from .net.geometry import NetGeometry, geometry
from .net.graph import NetworkGraph
from .raster import BorderPolicy, Dtype, Raster, Window, read_window
from .stitcher import full_tile_forward, stitch
from .tiler import Concat, TilePlan, plan


def iou(pred: Raster, truth: Raster, class_id: int) -> float:
    """Intersection over union of ``class_id``; 1.0 when neither map has it."""
    if pred.shape != truth.shape:
        raise ShapeError(f"cannot compare {pred!r} with {truth!r}")
    p, t = pred.data == class_id, truth.data == class_id
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def _output_stride(geom: NetGeometry) -> int:
    if geom.out_stride.denominator != 1:
        raise GeometryError(f"output stride {geom.out_stride} is finer than the input grid")
    return int(geom.out_stride)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(np.float64).ravel()
    b = b.astype(np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(a @ b) / denom


@dataclass
class CorrelationMatrix:
    """``values[di][dj]``: Pearson correlation of the region's class scores at
    shift (di, dj) against shift (0, 0); ``exact[di][dj]`` flags bit equality."""

    max_shift: int
    values: np.ndarray
    exact: np.ndarray
    reference: tuple[int, int] = (0, 0)
    patch_size: int = 0

    def csv_rows(self) -> list[tuple[int, int, float, int]]:
        return [(di, dj, float(self.values[di, dj]), int(self.exact[di, dj]))
                for di in range(self.max_shift) for dj in range(self.max_shift)]


def correlation_matrix(net: NetworkGraph, tile: Raster, region: Window | None = None,
                       max_shift: int = 32) -> CorrelationMatrix:
    """Shift the input window one pixel at a time over ``max_shift`` x ``max_shift``
    offsets while it keeps covering ``region`` and correlate the region's scores.

    At shift (di, dj) the input window starts ``(max_shift - 1 - d)`` pixels
    before the region (less the net's margin), so the region slides across
    the output patch as the shift grows.
    """
    geom = geometry(net)
    stride = _output_stride(geom)
    if stride != 1:
        raise GeometryError("correlation needs an output at input resolution")
    if region is None:
        side = min(100, tile.width - 2 * max_shift, tile.height - 2 * max_shift)
        if side < 1:
            raise GeometryError("tile too small for a centred region")
        region = Window((tile.width - side) // 2, (tile.height - side) // 2, side, side)
    n = geom.size_for_output(max(region.w, region.h) + max_shift - 1)
    margin = int(geom.margin_in)
    base_x = region.x0 - margin - (max_shift - 1)
    base_y = region.y0 - margin - (max_shift - 1)
    values = np.zeros((max_shift, max_shift))
    exact = np.zeros((max_shift, max_shift), dtype=bool)
    ref = None
    for di in range(max_shift):
        for dj in range(max_shift):
            win = Window(base_x + dj, base_y + di, n, n)
            x = read_window(tile, win, BorderPolicy.ERROR)
            out = forward_array(net, x.data)
            # region offset inside the output
            ox = region.x0 - (win.x0 + margin)
            oy = region.y0 - (win.y0 + margin)
            scores = out[:, oy:oy + region.h, ox:ox + region.w]
            if ref is None:
                ref = scores.copy()
            values[di, dj] = _pearson(ref, scores)
            exact[di, dj] = np.array_equal(ref.view(np.uint32), scores.view(np.uint32))
    return CorrelationMatrix(max_shift, values, exact, (0, 0), n)


@dataclass
class EdgeErrorProfile:
    """Disagreement with the full-tile pass, binned by distance ``d`` of the
    pixel to the border of the output patch that produced it.

    ``d`` is the per-side minimum distance in pre-clip patch-output pixels
    (the Chebyshev ring index counted inwards from the patch edge).
    ``label_rates[d]`` / ``score_rates[d]`` are None for empty bins.
    """

    counts: list[int]
    label_errors: list[int]
    score_errors: list[int]
    label_rates: list[float | None] = field(init=False)
    score_rates: list[float | None] = field(init=False)

    def __post_init__(self):
        self.label_rates = [e / c if c else None for e, c in zip(self.label_errors, self.counts)]
        self.score_rates = [e / c if c else None for e, c in zip(self.score_errors, self.counts)]

    def nonzero_bins(self, scores: bool = False) -> list[int]:
        errs = self.score_errors if scores else self.label_errors
        return [d for d, e in enumerate(errs) if e > 0]

    def csv_rows(self):
        return [(d, c, le, self.label_rates[d], se, self.score_rates[d])
                for d, (c, le, se) in enumerate(zip(self.counts, self.label_errors, self.score_errors))]


def border_distance_map(p: TilePlan) -> np.ndarray:
    """Per tile pixel, its border distance inside the patch that wrote it
    (the largest one when several patches overlap)."""
    m = p.patch_output_size
    ring = np.minimum(np.arange(m), np.arange(m)[::-1])
    dist = np.minimum.outer(ring, ring)
    out = np.full((p.tile_h, p.tile_w), -1, dtype=np.int64)
    for e in p.entries:
        o, (cl, ct, _, _) = e.output_window, e.clip
        view = out[o.y0:o.y1, o.x0:o.x1]
        np.maximum(view, dist[ct:ct + o.h, cl:cl + o.w], out=view)
    return out


def edge_error_profile(net: NetworkGraph, tile: Raster, p: TilePlan, oracle=None) -> EdgeErrorProfile:
    stitched = stitch(tile, net, p)
    oracle = oracle or full_tile_forward(net, tile)
    label_bad = (stitched.labels.data[0] != oracle.labels.data[0])
    score_bad = (stitched.prob.data.view(np.uint32) != oracle.prob.data.view(np.uint32)).any(axis=0)
    dist = border_distance_map(p)
    nbins = int(dist.max()) + 1
    counts = np.bincount(dist.ravel(), minlength=nbins)
    lab = np.bincount(dist.ravel(), weights=label_bad.ravel(), minlength=nbins)
    sco = np.bincount(dist.ravel(), weights=score_bad.ravel(), minlength=nbins)
    return EdgeErrorProfile([int(c) for c in counts], [int(v) for v in lab], [int(v) for v in sco])


def _largest_valid(geom: NetGeometry, limit: int) -> int:
    for n in range(limit, 0, -1):
        if geom.is_valid_size(n):
            return n
    raise GeometryError(f"no valid input extent <= {limit}")


def equivariance_check(net: NetworkGraph, image: Raster, shift: tuple[int, int]) -> int:
    """Count output values that break ``out(shifted input) == shifted out(input)``.

    ``shift`` is (rows, cols).  Two equal-sized windows of ``image`` are
    taken ``shift`` apart; the second window's output is compared with the
    first's output moved by ``shift // output stride`` on the overlap.
    """
    geom = geometry(net)
    stride = _output_stride(geom)
    ki, kj = shift
    if abs(ki) >= image.height or abs(kj) >= image.width:
        raise GeometryError(f"shift {shift} leaves no overlap inside a {image.width}x{image.height} image")
    nh = _largest_valid(geom, image.height - abs(ki))
    nw = _largest_valid(geom, image.width - abs(kj))
    ay, ax = max(0, -ki), max(0, -kj)
    a = forward_array(net, read_window(image, Window(ax, ay, nw, nh), BorderPolicy.ERROR).data)
    b = forward_array(net, read_window(image, Window(ax + kj, ay + ki, nw, nh), BorderPolicy.ERROR).data)
    oi, oj = ki // stride, kj // stride
    h, w = a.shape[1], a.shape[2]
    # b[i, j] sits over a[i + oi, j + oj]
    ys, ye = max(0, -oi), min(h, h - oi)
    xs, xe = max(0, -oj), min(w, w - oj)
    if ys >= ye or xs >= xe:
        raise GeometryError(f"shift {shift} leaves no overlapping output")
    av = a[:, ys + oi:ye + oi, xs + oj:xe + oj]
    bv = b[:, ys:ye, xs:xe]
    return int(np.count_nonzero(av.view(np.uint32) != bv.view(np.uint32)))


def context_extent(geom: NetGeometry) -> int:
    """Context width (a multiple of the period) that leaves a patch's outputs uncontaminated."""
    p = geom.delta_tot
    return (-(-max(geom.context_radius, 0) // p) + 1) * p


def context_sensitivity(net: NetworkGraph, tile: Raster, patch: Window) -> Raster:
    """Mask (1 = changed) of patch outputs that differ between running the
    patch alone and running it embedded in its surrounding tile context."""
    geom = geometry(net)
    stride = _output_stride(geom)
    alone = forward_array(net, read_window(tile, patch, BorderPolicy.ERROR).data)
    ext = context_extent(geom)
    wide = Window(patch.x0 - ext, patch.y0 - ext, patch.w + 2 * ext, patch.h + 2 * ext)
    ctx = forward_array(net, read_window(tile, wide, BorderPolicy.REFLECT).data)
    off = ext // stride
    c, h, w = alone.shape
    if ctx.shape[1] < off + h or ctx.shape[2] < off + w:
        raise GeometryError("context pass does not cover the patch output")
    inner = ctx[:, off:off + h, off:off + w]
    changed = (alone.view(np.uint32) != inner.view(np.uint32)).any(axis=0)
    return Raster(changed.astype(np.uint8)[None], copy=False)


def margin_from_mask(mask: Raster) -> int:
    """Smallest per-side margin outside of which the mask is all zero."""
    m = mask.data[0]
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        return 0
    h, w = m.shape
    d = np.minimum(np.minimum(ys, h - 1 - ys), np.minimum(xs, w - 1 - xs))
    return int(d.max()) + 1


def averaging_sweep(net: NetworkGraph, tile: Raster, shift_set: Sequence[tuple[int, int]], patch_size: int,
                    class_id: int = 1, oracle=None) -> list[float]:
    """IoU against the full-tile labels after averaging the first k shifted
    stitchings, for k = 1 .. len(shift_set).

    Shift (di, dj) moves the whole Concat patch grid by (di, dj) pixels;
    outputs are placed in tile coordinates so no realignment is needed.
    Scores are summed in float64 so that identical summands stay exact.
    """
    geom = geometry(net)
    oracle = oracle or full_tile_forward(net, tile)
    total = None
    ious = []
    for k, (di, dj) in enumerate(shift_set, start=1):
        p = plan(tile.width, tile.height, geom, patch_size, Concat(), offset=(dj, di))
        prob = stitch(tile, net, p).prob.data.astype(np.float64)
        total = prob if total is None else total + prob
        labels = np.argmax(total / k, axis=0).astype(np.uint8)
        ious.append(iou(Raster(labels[None], copy=False), oracle.labels, class_id))
    return ious


@dataclass
class BenchRecord:
    patch_size: int
    entries: int
    total_ms: float
    forward_ms: float
    handling_ms: float


def bench_patch_sizes(net: NetworkGraph, tile: Raster, sizes: Sequence[int], runs: int = 5,
                      workers: int = 1) -> list[BenchRecord]:
    """Median-of-``runs`` Concat stitching times per inference patch size.

    Sizes are timed round-robin after one untimed warm-up pass each, so slow
    drift in machine load is spread over all sizes instead of favouring one.
    """
    if tile.dtype is not Dtype.F32:
        raise ShapeError("bench expects an F32 tile")
    geom = geometry(net)
    plans = [plan(tile.width, tile.height, geom, n, Concat()) for n in sizes]
    for p in plans:
        stitch(tile, net, p, workers=workers)
    timings = [[] for _ in plans]
    for _ in range(runs):
        for p, acc in zip(plans, timings):
            acc.append(stitch(tile, net, p, workers=workers).timing)
    return [
        BenchRecord(
            p.patch_input_size, len(p),
            statistics.median(t.total_s for t in ts) * 1e3,
            statistics.median(t.forward_s for t in ts) * 1e3,
            statistics.median(t.handling_s for t in ts) * 1e3,
        )
        for p, ts in zip(plans, timings)
    ]
