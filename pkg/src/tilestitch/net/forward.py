"""Forward evaluation of a weighted :class:`NetworkGraph`.

Convolutions accumulate taps one at a time in (c, u, v) row-major order
with separate float32 multiply and add passes, so every output pixel sees
the same sequence of roundings wherever it sits in the input.  That is
what lets stitched patches reproduce a full-tile pass bit for bit.
"""

from __future__ import annotations

import numpy as np

from ..errors import GeometryError, ShapeError
from ..raster import Dtype, Raster
from .graph import Conv, ConvWeights, CropConcat, Input, MaxPool, NetworkGraph, Output, Relu, Upsample


BLOCK_VALUES = 1 << 15


class BufferPool:
    """Recycles float32 arrays by shape between forward passes.

    Large fresh allocations are page-faulted in on every pass; reusing them
    is what keeps per-pixel cost flat as patches grow.  Not thread-safe: use
    one pool per worker.
    """

    def __init__(self):
        self._free: dict[tuple[int, ...], list[np.ndarray]] = {}

    def __call__(self, shape: tuple[int, ...]) -> np.ndarray:
        free = self._free.get(shape)
        return free.pop() if free else np.empty(shape, dtype=np.float32)

    def release(self, arr: np.ndarray) -> None:
        if arr.base is None and arr.dtype == np.float32:
            self._free.setdefault(arr.shape, []).append(arr)


class _Fresh:
    def __call__(self, shape: tuple[int, ...]) -> np.ndarray:
        return np.empty(shape, dtype=np.float32)

    def release(self, arr: np.ndarray) -> None:
        pass


_FRESH = _Fresh()


def conv_size(n: int, op: Conv) -> int:
    return (n + 2 * op.p - op.d * (op.k - 1) - 1) // op.s + 1


def pool_size(n: int, op: MaxPool) -> int:
    return (n - op.k) // op.s + 1


def _conv(x: np.ndarray, op: Conv, cw: ConvWeights, name: str, alloc, relu: bool = False) -> np.ndarray:
    cin, h, w = x.shape
    ho, wo = conv_size(h, op), conv_size(w, op)
    if ho < 1 or wo < 1:
        raise GeometryError(f"input too small: conv {name!r} gets {w}x{h}, output would be {wo}x{ho}")
    p, s, d = op.p, op.s, op.d
    if p:
        xp = alloc((cin, h + 2 * p, w + 2 * p))
        xp.fill(0)
        xp[:, p:p + h, p:p + w] = x
    else:
        xp = x
    out = alloc((op.cout, ho, wo))
    # row blocks keep the accumulator in cache; each pixel's tap order is unchanged
    rows = max(1, BLOCK_VALUES // (op.cout * wo))
    tmp = alloc((op.cout, min(rows, ho), wo))
    span_x = (wo - 1) * s + 1
    kernel = cw.w[:, :, :, :, None, None]
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        acc, t = out[:, r0:r1], tmp[:, :r1 - r0]
        acc.fill(0)
        y0, span_y = r0 * s, (r1 - r0 - 1) * s + 1
        for c in range(cin):
            for u in range(op.k):
                for v in range(op.k):
                    tap = xp[c, y0 + d * u:y0 + d * u + span_y:s, d * v:d * v + span_x:s]
                    np.multiply(kernel[:, c, u, v], tap, out=t)
                    np.add(acc, t, out=acc)
        if cw.b is not None:
            np.add(acc, cw.b[:, None, None], out=acc)
        if relu:
            np.maximum(acc, np.float32(0), out=acc)
    if p:
        alloc.release(xp)
    alloc.release(tmp)
    return out


def _maxpool(x: np.ndarray, op: MaxPool, name: str, alloc) -> np.ndarray:
    _, h, w = x.shape
    ho, wo = pool_size(h, op), pool_size(w, op)
    if ho < 1 or wo < 1:
        raise GeometryError(f"input too small: maxpool {name!r} gets {w}x{h}, output would be {wo}x{ho}")
    span_y, span_x = (ho - 1) * op.s + 1, (wo - 1) * op.s + 1
    out = alloc((x.shape[0], ho, wo))
    out[...] = x[:, 0:span_y:op.s, 0:span_x:op.s]
    for u in range(op.k):
        for v in range(op.k):
            if u or v:
                np.maximum(out, x[:, u:u + span_y:op.s, v:v + span_x:op.s], out=out)
    return out


def _cropconcat(a: np.ndarray, b: np.ndarray, name: str) -> np.ndarray:
    dh, dw = a.shape[1] - b.shape[1], a.shape[2] - b.shape[2]
    if dh < 0 or dw < 0 or dh % 2 or dw % 2:
        raise GeometryError(
            f"cropconcat {name!r}: cannot centre-crop {a.shape[2]}x{a.shape[1]} "
            f"to {b.shape[2]}x{b.shape[1]}")
    ch, cw = dh // 2, dw // 2
    return np.concatenate([a[:, ch:ch + b.shape[1], cw:cw + b.shape[2]], b], axis=0)


def _upsample(x: np.ndarray, f: int, alloc) -> np.ndarray:
    c, h, w = x.shape
    out = alloc((c, h * f, w * f))
    out.reshape(c, h, f, w, f)[...] = x[:, :, None, :, None]
    return out


def _fusable_relus(net: NetworkGraph) -> set[str]:
    """Convs whose only consumer is a Relu; the Relu is applied inside the conv."""
    consumers: dict[str, list] = {}
    for node in net.nodes:
        for p in node.parents:
            consumers.setdefault(p, []).append(node)
    return {name for name, cs in consumers.items()
            if len(cs) == 1 and isinstance(cs[0].op, Relu) and isinstance(net.node(name).op, Conv)}


def _needed(net: NetworkGraph) -> dict[str, int]:
    """Ancestors of the output node mapped to the index of their last consumer."""
    order = {n.name: i for i, n in enumerate(net.nodes)}
    live = {net.output.name}
    last_use: dict[str, int] = {}
    for node in reversed(net.nodes):
        if node.name not in live:
            continue
        for p in node.parents:
            live.add(p)
            last_use[p] = max(last_use.get(p, -1), order[node.name])
    last_use[net.output.name] = len(net.nodes)
    return last_use


def forward_array(net: NetworkGraph, x: np.ndarray, pool: BufferPool | None = None) -> np.ndarray:
    """Run the network on a float32 (C, H, W) array and return the output array.

    With a ``pool``, intermediate arrays are recycled through it; the
    returned array is never handed back, so it stays valid for the caller.
    """
    if net.weights is None:
        raise GeometryError("network has no weights; call init_weights or load_weights first")
    if x.ndim != 3 or x.shape[0] != net.input.op.channels:
        raise ShapeError(f"input has shape {x.shape}, network expects {net.input.op.channels} channels")
    x = np.asarray(x, dtype=np.float32)
    last_use = _needed(net)
    fused = _fusable_relus(net)
    alloc = pool if pool is not None else _FRESH
    vals: dict[str, np.ndarray] = {}
    for i, node in enumerate(net.nodes):
        if node.name not in last_use:
            continue
        op = node.op
        src = [vals[p] for p in node.parents]
        if isinstance(op, Input):
            y = x
        elif isinstance(op, Conv):
            y = _conv(src[0], op, net.weights[node.name], node.name, alloc, relu=node.name in fused)
        elif isinstance(op, Relu):
            if node.parents[0] in fused:
                y = src[0]
            else:
                y = alloc(src[0].shape)
                np.maximum(src[0], np.float32(0), out=y)
        elif isinstance(op, MaxPool):
            y = _maxpool(src[0], op, node.name, alloc)
        elif isinstance(op, Upsample):
            y = _upsample(src[0], op.f, alloc)
        elif isinstance(op, CropConcat):
            y = _cropconcat(src[0], src[1], node.name)
        elif isinstance(op, Output):
            y = src[0]
        else:  # pragma: no cover - graph construction rejects other ops
            raise TypeError(op)
        vals[node.name] = y
        for p in node.parents:
            if last_use[p] <= i and p in vals:
                dead = vals.pop(p)
                if dead is not x and not any(v is dead for v in vals.values()):
                    alloc.release(dead)
    return vals[net.output.name]


def forward(net: NetworkGraph, image: Raster) -> Raster:
    if image.dtype is not Dtype.F32:
        raise ShapeError("forward expects an F32 raster")
    out = forward_array(net, image.data)
    if not out.flags.owndata:
        out = out.copy()
    return Raster(out, copy=False)
