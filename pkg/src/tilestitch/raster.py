"""Raster data model, RAS1/PGM file I/O and windowed reads.

A :class:`Raster` wraps a read-only numpy array laid out planar
(channels, height, width).  Two dtypes are supported: ``uint8`` for label
maps and ``float32`` for imagery, feature maps and class scores.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, OutOfBounds, ShapeError, UnsupportedReflect

RAS1_MAGIC = b"RAS1"
_RAS1_HEADER = struct.Struct("<4sIIIB")


class Dtype(enum.IntEnum):
    U8 = 0
    F32 = 1

    @property
    def numpy(self) -> np.dtype:
        return np.dtype("<u1") if self is Dtype.U8 else np.dtype("<f4")


class BorderPolicy(enum.Enum):
    ERROR = "error"
    ZERO_FILL = "zero"
    REFLECT = "reflect"
    CLAMP = "clamp"


@dataclass(frozen=True)
class Window:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"window must be at least 1x1, got {self.w}x{self.h}")

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    def shifted(self, dx: int, dy: int) -> Window:
        return Window(self.x0 + dx, self.y0 + dy, self.w, self.h)


class Raster:
    """Immutable planar raster.

    ``data`` is always a C-contiguous, non-writeable array of shape
    (channels, height, width) with dtype uint8 or float32.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray, *, copy: bool = True):
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"raster data must be (C, H, W) with every extent >= 1, got {arr.shape}")
        if arr.dtype not in (np.uint8, np.float32):
            raise TypeError(f"unsupported raster dtype {arr.dtype}; use uint8 or float32")
        # copy=False hands ownership of a fresh array to the raster
        if copy or not arr.flags.c_contiguous:
            arr = np.array(arr, dtype=arr.dtype.newbyteorder("="), order="C")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Raster is immutable")

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 1, dtype: Dtype = Dtype.F32) -> Raster:
        return cls(np.zeros((channels, height, width), dtype=dtype.numpy), copy=False)

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dtype(self) -> Dtype:
        return Dtype.U8 if self.data.dtype == np.uint8 else Dtype.F32

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def payload(self) -> bytes:
        return self.data.astype(self.dtype.numpy, copy=False).tobytes()

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.shape == other.shape and self.dtype == other.dtype and diff_count(self, other) == 0

    __hash__ = None

    def __repr__(self):
        return f"Raster({self.width}x{self.height}x{self.channels}, {self.dtype.name})"


def _axis_index(start: int, length: int, size: int, policy: BorderPolicy) -> np.ndarray | None:
    """Source indices along one axis, or None when the span is fully inside."""
    if start >= 0 and start + length <= size:
        return None
    idx = np.arange(start, start + length)
    if policy is BorderPolicy.ERROR:
        raise OutOfBounds(f"span [{start}, {start + length}) outside [0, {size})")
    if policy is BorderPolicy.REFLECT:
        overhang = max(-start, start + length - size)
        if overhang >= size:
            raise UnsupportedReflect(f"reflect overhang {overhang} must be < dimension {size}")
        idx = np.where(idx < 0, -idx, idx)
        return np.where(idx >= size, 2 * (size - 1) - idx, idx)
    if policy is BorderPolicy.CLAMP:
        return np.clip(idx, 0, size - 1)
    # ZERO_FILL: out-of-range entries flagged with -1 and masked by the caller
    return np.where((idx < 0) | (idx >= size), -1, idx)


def read_window(r: Raster, win: Window, policy: BorderPolicy = BorderPolicy.REFLECT) -> Raster:
    """Read ``win`` from ``r``, filling out-of-bounds pixels according to ``policy``."""
    xs = _axis_index(win.x0, win.w, r.width, policy)
    ys = _axis_index(win.y0, win.h, r.height, policy)
    src = r.data
    if xs is None and ys is None:
        return Raster(src[:, win.y0:win.y1, win.x0:win.x1])
    if xs is None:
        xs = np.arange(win.x0, win.x1)
    if ys is None:
        ys = np.arange(win.y0, win.y1)
    if policy is BorderPolicy.ZERO_FILL:
        out = np.zeros((r.channels, win.h, win.w), dtype=src.dtype)
        xi, yi = np.flatnonzero(xs >= 0), np.flatnonzero(ys >= 0)
        if xi.size and yi.size:
            out[:, yi[0]:yi[-1] + 1, xi[0]:xi[-1] + 1] = src[:, ys[yi[0]]:ys[yi[-1]] + 1, xs[xi[0]]:xs[xi[-1]] + 1]
        return Raster(out, copy=False)
    return Raster(src[:, ys[:, None], xs[None, :]], copy=False)


def diff_count(a: Raster, b: Raster) -> int:
    """Number of positions whose values differ; F32 compared by bit pattern."""
    if a.shape != b.shape or a.dtype != b.dtype:
        raise ShapeError(f"cannot compare {a!r} with {b!r}")
    if a.dtype is Dtype.F32:
        return int(np.count_nonzero(a.data.view(np.uint32) != b.data.view(np.uint32)))
    return int(np.count_nonzero(a.data != b.data))


def ras1_bytes(r: Raster) -> bytes:
    header = _RAS1_HEADER.pack(RAS1_MAGIC, r.width, r.height, r.channels, int(r.dtype))
    return header + r.payload()


def parse_ras1(buf: bytes) -> Raster:
    if len(buf) < _RAS1_HEADER.size:
        raise FormatError(f"RAS1 header truncated ({len(buf)} bytes)")
    magic, w, h, c, code = _RAS1_HEADER.unpack_from(buf)
    if magic != RAS1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RAS1_MAGIC!r}")
    try:
        dtype = Dtype(code)
    except ValueError:
        raise FormatError(f"unknown dtype code {code}") from None
    if min(w, h, c) < 1:
        raise FormatError(f"dimensions must be >= 1, got {w}x{h}x{c}")
    need = w * h * c * dtype.numpy.itemsize
    payload = buf[_RAS1_HEADER.size:]
    if len(payload) != need:
        raise FormatError(f"payload is {len(payload)} bytes, expected {need}")
    arr = np.frombuffer(payload, dtype=dtype.numpy).reshape(c, h, w)
    if dtype is Dtype.F32 and np.isnan(arr).any():
        raise FormatError("NaN values are not allowed in F32 rasters")
    return Raster(arr.astype(arr.dtype.newbyteorder("=")), copy=False)


def write_ras1(r: Raster, path: str | Path) -> None:
    Path(path).write_bytes(ras1_bytes(r))


def read_ras1(path: str | Path) -> Raster:
    return parse_ras1(Path(path).read_bytes())


def write_pgm(r: Raster, path: str | Path) -> None:
    """Write a single-channel U8 raster as binary PGM (P5)."""
    if r.channels != 1 or r.dtype is not Dtype.U8:
        raise ShapeError("PGM export needs a single-channel U8 raster")
    header = f"P5\n{r.width} {r.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + r.data.tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path: str | Path) -> Raster:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    for _ in range(4):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field") from None
    if maxval < 1 or maxval > 255 or w < 1 or h < 1:
        raise FormatError(f"unsupported PGM geometry {w}x{h} maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    payload = buf[pos + 1:]
    if len(payload) < w * h:
        raise FormatError("truncated PGM payload")
    return Raster(np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(1, h, w))
