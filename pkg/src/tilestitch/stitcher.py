"""Execute a TilePlan and assemble tile-sized score and label maps."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, GeometryError, ShapeError
from .net.forward import BufferPool, forward_array
from .net.geometry import NetGeometry, geometry
from .net.graph import NetworkGraph
from .raster import BorderPolicy, Dtype, Raster, Window, read_window
from .tiler import Average, PlanEntry, TilePlan, Weighting, taper_weights


class StitchAccumulator:
    """Tile-sized score planes filled patch by patch.

    Average keeps per-class weighted sums and a weight plane and divides at
    the end.  Concat and Clip write disjoint windows, so scores are stored
    directly and only a coverage mask is kept.
    """

    def __init__(self, tile_w: int, tile_h: int, classes: int, strategy):
        self.sums = np.zeros((classes, tile_h, tile_w), dtype=np.float32)
        self.strategy = strategy
        self.averaging = isinstance(strategy, Average)
        if self.averaging:
            self.weight = np.zeros((tile_h, tile_w), dtype=np.float32)
        else:
            self.weight = np.zeros((tile_h, tile_w), dtype=bool)
        self._taper: dict[int, np.ndarray] = {}

    def _patch_weight(self, m: int) -> np.ndarray | None:
        if self.averaging and self.strategy.weight is Weighting.EDGE_TAPER:
            if m not in self._taper:
                self._taper[m] = taper_weights(m)
            return self._taper[m]
        return None

    def accumulate(self, output_patch: Raster | np.ndarray, entry: PlanEntry) -> None:
        patch = output_patch.data if isinstance(output_patch, Raster) else output_patch
        o, (cl, ct, cr, cb) = entry.output_window, entry.clip
        c, h, w = patch.shape
        if c != self.sums.shape[0] or h != o.h + ct + cb or w != o.w + cl + cr or h != w:
            raise ShapeError(f"patch {w}x{h}x{c} does not match entry output {o} with clip {entry.clip}")
        region = patch[:, ct:ct + o.h, cl:cl + o.w]
        sums = self.sums[:, o.y0:o.y1, o.x0:o.x1]
        weight = self.weight[o.y0:o.y1, o.x0:o.x1]
        if not self.averaging:
            sums[...] = region
            weight[...] = True
            return
        wts = self._patch_weight(h)
        if wts is None:
            sums += region
            weight += np.float32(1)
        else:
            wr = wts[ct:ct + o.h, cl:cl + o.w]
            sums += wr * region
            weight += wr

    def finalize(self) -> tuple[Raster, Raster]:
        """Return (scores, labels); labels break ties toward the lowest class."""
        if not self.weight.all():
            missing = int(np.count_nonzero(self.weight == 0))
            raise CoverageError(f"{missing} tile pixels received no contribution")
        prob = self.sums / self.weight if self.averaging else self.sums
        labels = np.argmax(prob, axis=0).astype(np.uint8)
        return Raster(prob, copy=False), Raster(labels[None], copy=False)


@dataclass
class StitchTiming:
    patches: int = 0
    forward_s: float = 0.0
    handling_s: float = 0.0
    total_s: float = 0.0

    def as_lines(self) -> str:
        return (f"patches={self.patches}\nforward_ms={self.forward_s * 1e3:.3f}\n"
                f"handling_ms={self.handling_s * 1e3:.3f}\ntotal_ms={self.total_s * 1e3:.3f}\n")


@dataclass
class StitchResult:
    prob: Raster
    labels: Raster
    timing: StitchTiming = field(default_factory=StitchTiming)


_pools = threading.local()


def _thread_pool() -> BufferPool:
    if not hasattr(_pools, "pool"):
        _pools.pool = BufferPool()
    return _pools.pool


def _run_entry(net: NetworkGraph, tile: Raster, entry: PlanEntry) -> tuple[np.ndarray, float, float]:
    t0 = time.perf_counter()
    patch = read_window(tile, entry.input_window, BorderPolicy.REFLECT)
    t1 = time.perf_counter()
    out = forward_array(net, patch.data, _thread_pool())
    return out, t1 - t0, time.perf_counter() - t1


def stitch(tile: Raster, net: NetworkGraph, plan: TilePlan, workers: int = 1) -> StitchResult:
    """Run every plan entry through the network and stitch the outputs.

    Patch outputs are accumulated in entry order whatever ``workers`` is, so
    the float32 sums (and therefore the result) do not depend on scheduling.
    At most ``2 * workers`` patch outputs are alive at once.
    """
    if tile.channels != net.input.op.channels:
        raise ShapeError(f"tile has {tile.channels} channels, net expects {net.input.op.channels}")
    if (tile.width, tile.height) != (plan.tile_w, plan.tile_h):
        raise ShapeError(f"plan is for a {plan.tile_w}x{plan.tile_h} tile, got {tile.width}x{tile.height}")
    if tile.dtype is not Dtype.F32:
        raise ShapeError("stitch expects an F32 tile")
    timing = StitchTiming(patches=len(plan.entries))
    t_start = time.perf_counter()
    acc = StitchAccumulator(tile.width, tile.height, net.classes, plan.strategy)

    def consume(result, entry):
        out, t_read, t_fwd = result
        t0 = time.perf_counter()
        acc.accumulate(out, entry)
        timing.handling_s += t_read + time.perf_counter() - t0
        timing.forward_s += t_fwd

    if workers <= 1:
        for entry in plan.entries:
            consume(_run_entry(net, tile, entry), entry)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(plan.entries)
            for i in range(0, len(entries), 2 * workers):
                chunk = entries[i:i + 2 * workers]
                for entry, res in zip(chunk, pool.map(lambda e: _run_entry(net, tile, e), chunk)):
                    consume(res, entry)
    t0 = time.perf_counter()
    prob, labels = acc.finalize()
    t1 = time.perf_counter()
    timing.handling_s += t1 - t0
    timing.total_s = t1 - t_start
    return StitchResult(prob, labels, timing)


@dataclass(frozen=True)
class OracleFrame:
    """Reflect-extended input window for a single full-tile pass."""

    window: Window
    out_x0: int  # index of tile column 0 in the network output
    out_y0: int


def _oracle_axis(geom: NetGeometry, size: int) -> tuple[int, int, int]:
    period, margin = geom.delta_tot, int(geom.margin_in)
    ext = -(-max(geom.context_radius, margin, 0) // period) * period
    while ext < size:
        # the output pixel for tile coordinate t is t + ext - margin
        first = ext - margin
        n = geom.size_for_output(first + size + ext)
        clean = geom.clean_interval(n)
        if clean is not None and clean[0] <= first and first + size - 1 <= clean[1]:
            return ext, n, first
        ext += period
    raise GeometryError(f"tile extent {size} too small for a clean full-tile pass of this net")


def oracle_frame(geom: NetGeometry, tile_w: int, tile_h: int) -> OracleFrame:
    """Choose the extended window so that every tile pixel is computed from
    tile data (mirrored at the tile border) and never from zero padding."""
    if geom.out_stride != 1 or geom.margin_in.denominator != 1:
        raise GeometryError("full-tile pass needs an output at input resolution")
    ex, nw, fx = _oracle_axis(geom, tile_w)
    ey, nh, fy = _oracle_axis(geom, tile_h)
    return OracleFrame(Window(-ex, -ey, nw, nh), fx, fy)


def full_tile_forward(net: NetworkGraph, tile: Raster) -> StitchResult:
    """The reference: one forward pass over the (reflect-extended) tile."""
    t0 = time.perf_counter()
    frame = oracle_frame(geometry(net), tile.width, tile.height)
    x = read_window(tile, frame.window, BorderPolicy.REFLECT)
    t1 = time.perf_counter()
    out = forward_array(net, x.data)
    t2 = time.perf_counter()
    prob = out[:, frame.out_y0:frame.out_y0 + tile.height, frame.out_x0:frame.out_x0 + tile.width]
    labels = np.argmax(prob, axis=0).astype(np.uint8)
    t3 = time.perf_counter()
    timing = StitchTiming(1, t2 - t1, (t1 - t0) + (t3 - t2), t3 - t0)
    return StitchResult(Raster(prob), Raster(labels[None], copy=False), timing)
