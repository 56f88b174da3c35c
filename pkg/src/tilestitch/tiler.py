"""Patch-grid planning over a tile.

Every entry holds the patch's input window (tile coordinates, possibly
overhanging the tile; read with Reflect), the output window it writes and
the per-side clip that turns the patch's raw output into that window.
Input offsets along each axis are ``offset + multiple of P`` where P is the
network's equivariance period, which is what keeps patchwise output on the
same pooling grid as a single full-tile pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, PlanError
from .net.geometry import NetGeometry
from .raster import Raster, Window

DEFAULT_MAX_PATCH = 4096


class Weighting(enum.Enum):
    UNIFORM = "uniform"
    EDGE_TAPER = "taper"


@dataclass(frozen=True)
class Concat:
    def __str__(self):
        return "concat"


@dataclass(frozen=True)
class Clip:
    c: int

    def __str__(self):
        return f"clip:{self.c}"


@dataclass(frozen=True)
class Average:
    stride: int
    weight: Weighting = Weighting.UNIFORM

    def __str__(self):
        return f"avg:{self.stride}" + (":taper" if self.weight is Weighting.EDGE_TAPER else "")


StitchStrategy = Concat | Clip | Average


def parse_strategy(text: str, default_clip: int | None = None) -> StitchStrategy:
    """Parse ``concat``, ``clip[:<c>]`` or ``avg:<stride>[:taper]``."""
    parts = text.strip().lower().split(":")
    try:
        if parts == ["concat"]:
            return Concat()
        if parts[0] == "clip" and len(parts) <= 2:
            if len(parts) == 1:
                if default_clip is None:
                    raise PlanError("clip without an amount needs a default clip width")
                return Clip(default_clip)
            return Clip(int(parts[1]))
        if parts[0] == "avg" and len(parts) in (2, 3):
            weight = Weighting.UNIFORM
            if len(parts) == 3:
                if parts[2] != "taper":
                    raise ValueError(parts[2])
                weight = Weighting.EDGE_TAPER
            return Average(int(parts[1]), weight)
    except ValueError:
        pass
    raise PlanError(f"bad strategy {text!r}; use concat, clip:<c> or avg:<stride>[:taper]")


@dataclass(frozen=True)
class PlanEntry:
    input_window: Window
    output_window: Window
    clip: tuple[int, int, int, int]  # left, top, right, bottom in patch-output pixels


@dataclass(frozen=True)
class TilePlan:
    tile_w: int
    tile_h: int
    patch_input_size: int
    patch_output_size: int
    strategy: StitchStrategy
    alignment: int
    offset: tuple[int, int]
    entries: tuple[PlanEntry, ...]

    def __len__(self):
        return len(self.entries)

    def to_text(self) -> str:
        head = (f"# tileplan tile={self.tile_w}x{self.tile_h} patch={self.patch_input_size} "
                f"out={self.patch_output_size} strategy={self.strategy} P={self.alignment} "
                f"offset={self.offset[0]},{self.offset[1]}\n")
        rows = []
        for e in self.entries:
            i, o = e.input_window, e.output_window
            rows.append(f"{i.x0} {i.y0} {i.w} {i.h} {o.x0} {o.y0} {o.w} {o.h} {' '.join(map(str, e.clip))}\n")
        return head + "".join(rows)

    @classmethod
    def from_text(cls, text: str) -> TilePlan:
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# tileplan "):
            raise FormatError("missing '# tileplan' header")
        try:
            meta = dict(tok.split("=", 1) for tok in lines[0][len("# tileplan "):].split())
            tw, th = (int(v) for v in meta["tile"].split("x"))
            ox, oy = (int(v) for v in meta["offset"].split(","))
            strategy = parse_strategy(meta["strategy"])
            entries = []
            for line in lines[1:]:
                if not line.strip():
                    continue
                v = [int(t) for t in line.split()]
                if len(v) != 12:
                    raise ValueError(line)
                entries.append(PlanEntry(Window(*v[0:4]), Window(*v[4:8]), tuple(v[8:12])))
            return cls(tw, th, int(meta["patch"]), int(meta["out"]), strategy, int(meta["P"]), (ox, oy),
                       tuple(entries))
        except (KeyError, ValueError, PlanError) as exc:
            raise FormatError(f"malformed plan: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> TilePlan:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class _Span:
    start: int  # input offset
    lo: int  # written output range [lo, hi) in tile coordinates
    hi: int


def _axis_spans(tile: int, period: int, offset: int, margin: int, out: int, clip: int, step: int,
                disjoint: bool) -> list[_Span]:
    """Input offsets and written ranges along one axis."""
    first = (-(margin + clip) - offset) // period * period + offset
    starts = [first]
    while starts[-1] + margin + out - clip < tile:
        starts.append(starts[-1] + step)
    if len(starts) > 1:
        # final patch: output edge-aligned to the tile, moved onto the grid towards the overhang side
        edge = tile - margin - out + clip
        starts[-1] = -((offset - edge) // period) * period + offset
    spans, covered = [], 0
    for s in starts:
        lo, hi = max(s + margin + clip, 0), min(s + margin + out - clip, tile)
        if disjoint:
            lo = max(lo, covered)
        covered = max(covered, hi)
        if lo < hi:
            spans.append(_Span(s, lo, hi))
    return spans


def plan(tile_w: int, tile_h: int, geom: NetGeometry, patch_input_size: int, strategy: StitchStrategy,
         offset: tuple[int, int] = (0, 0), max_patch: int = DEFAULT_MAX_PATCH) -> TilePlan:
    """Lay a patch grid over a ``tile_w`` x ``tile_h`` tile.

    Concat/Clip grids step by the largest multiple of the period that fits in
    the kept output extent; later entries are trimmed so every pixel is
    written once.  Average grids step by ``stride`` rounded down to the period
    and overlaps are averaged.  ``offset`` shifts the whole grid (used by the
    translation-averaging analysis); the default keeps offsets at multiples
    of the period.
    """
    n, period = patch_input_size, geom.delta_tot
    if n > max_patch:
        raise PlanError(f"patch size {n} exceeds the configured hardware cap {max_patch}")
    if geom.out_stride != 1 or geom.margin_in.denominator != 1:
        raise PlanError(f"output grid (stride {geom.out_stride}, margin {geom.margin_in}) "
                        "is not aligned to tile pixels")
    if not geom.is_valid_size(n):
        near = geom.valid_sizes(n - 4 * period - 4, n + 4 * period + 4)
        raise PlanError(f"patch size {n} is not a valid input size for this net; nearby: {near}")
    if period > min(tile_w, tile_h):
        raise PlanError(f"equivariance period {period} exceeds the tile")
    m, margin = geom.output_size(n), int(geom.margin_in)

    if isinstance(strategy, Average):
        if strategy.stride < 1:
            raise PlanError("average stride must be >= 1")
        clip, step, disjoint = 0, strategy.stride // period * period, False
        if step > m:
            raise PlanError(f"average stride {strategy.stride} leaves gaps (output extent {m})")
    else:
        clip = strategy.c if isinstance(strategy, Clip) else 0
        if clip < 0 or 2 * clip >= m:
            raise PlanError(f"clip {clip} needs an output patch larger than {2 * clip} (got {m})")
        step, disjoint = (m - 2 * clip) // period * period, True
    if step < 1:
        raise PlanError(f"period {period} exceeds the usable output extent; enlarge the patch")

    xs = _axis_spans(tile_w, period, offset[0], margin, m, clip, step, disjoint)
    ys = _axis_spans(tile_h, period, offset[1], margin, m, clip, step, disjoint)
    for spans, size in ((xs, tile_w), (ys, tile_h)):
        lo, hi = spans[0].start, spans[-1].start + n
        if -lo >= size or hi - size >= size:
            raise PlanError(f"patch windows overhang the tile by more than its extent {size}")
    entries = []
    for sy in ys:
        for sx in xs:
            out = Window(sx.lo, sy.lo, sx.hi - sx.lo, sy.hi - sy.lo)
            ox, oy = sx.start + margin, sy.start + margin
            cl = (sx.lo - ox, sy.lo - oy, ox + m - sx.hi, oy + m - sy.hi)
            entries.append(PlanEntry(Window(sx.start, sy.start, n, n), out, cl))
    return TilePlan(tile_w, tile_h, n, m, strategy, period, offset, tuple(entries))


def coverage_counts(p: TilePlan) -> np.ndarray:
    counts = np.zeros((p.tile_h, p.tile_w), dtype=np.int64)
    for e in p.entries:
        o = e.output_window
        counts[o.y0:o.y1, o.x0:o.x1] += 1
    return counts


def coverage_map(p: TilePlan) -> Raster:
    """Per-pixel count of output windows covering it (saturating at 255)."""
    return Raster(np.minimum(coverage_counts(p), 255).astype(np.uint8)[None], copy=False)


def taper_weights(m: int) -> np.ndarray:
    """1 + per-side distance to the border of an m x m output patch."""
    d = np.minimum(np.arange(m), np.arange(m)[::-1])
    return (1 + np.minimum.outer(d, d)).astype(np.float32)


def entries_for(tile: int, geom: NetGeometry, n: int, clip: int = 0) -> int:
    """Number of grid positions along one axis for a Concat/Clip plan."""
    m, period = geom.output_size(n), geom.delta_tot
    step = (m - 2 * clip) // period * period
    return len(_axis_spans(tile, period, 0, int(geom.margin_in), m, clip, step, True))


def default_clip(geom: NetGeometry, n: int) -> int:
    return geom.contamination_margin(n)
