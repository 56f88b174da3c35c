"""Deterministic weight initialisation and the WTS1 weight file format.

WTS1 (little-endian): magic ``WTS1``, u32 record count, then per record
u16 name length, name bytes (UTF-8), u8 kind (0 weights, 1 bias), u32 rank,
rank x u32 dims, float32 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import WeightsError
from ..prng import SplitMix64
from .graph import ConvWeights, NetworkGraph

WTS1_MAGIC = b"WTS1"
WEIGHT_RANGE = 0.1
KIND_WEIGHTS, KIND_BIAS = 0, 1


def init_weights(net: NetworkGraph, seed: int) -> NetworkGraph:
    """Fill every conv with uniform [-0.1, 0.1] values from one SplitMix64 stream.

    Convs are visited in declaration order; each kernel is drawn in
    [cout][cin][kh][kw] row-major order and its bias (if any) right after.
    """
    rng = SplitMix64(seed)
    weights = {}
    for node in net.convs():
        op = node.op
        shape = (op.cout, net.conv_input_channels(node), op.k, op.k)
        w = rng.uniform_f32(int(np.prod(shape)), -WEIGHT_RANGE, WEIGHT_RANGE).reshape(shape)
        b = rng.uniform_f32(op.cout, -WEIGHT_RANGE, WEIGHT_RANGE) if op.bias else None
        weights[node.name] = ConvWeights(w, b)
    return net.with_weights(weights)


def _records(net: NetworkGraph):
    if net.weights is None:
        raise WeightsError("graph has no weights")
    for node in net.convs():
        cw = net.weights[node.name]
        yield node.name, KIND_WEIGHTS, cw.w
        if cw.b is not None:
            yield node.name, KIND_BIAS, cw.b


def weights_bytes(net: NetworkGraph) -> bytes:
    records = list(_records(net))
    out = [WTS1_MAGIC, struct.pack("<I", len(records))]
    for name, kind, arr in records:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<BI{arr.ndim}I", kind, arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise WeightsError("weights file truncated")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightsError("weights file truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk


def parse_weights(buf: bytes, net: NetworkGraph) -> NetworkGraph:
    """Attach the weights stored in ``buf`` to ``net``; names and shapes must match."""
    rd = _Reader(buf)
    if rd.raw(4) != WTS1_MAGIC:
        raise WeightsError("bad magic, expected WTS1")
    (count,) = rd.take("<I")
    found: dict[tuple[str, int], np.ndarray] = {}
    for _ in range(count):
        (nlen,) = rd.take("<H")
        try:
            name = rd.raw(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise WeightsError("record name is not valid UTF-8") from None
        kind, rank = rd.take("<BI")
        if kind not in (KIND_WEIGHTS, KIND_BIAS):
            raise WeightsError(f"record {name!r}: unknown kind {kind}")
        dims = rd.take(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(rd.raw(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        if np.isnan(arr).any():
            raise WeightsError(f"record {name!r} contains NaN")
        if (name, kind) in found:
            raise WeightsError(f"duplicate record {name!r}")
        found[(name, kind)] = arr
    if rd.pos != len(buf):
        raise WeightsError(f"{len(buf) - rd.pos} trailing bytes after last record")

    weights = {}
    for node in net.convs():
        op = node.op
        shape = (op.cout, net.conv_input_channels(node), op.k, op.k)
        w = found.pop((node.name, KIND_WEIGHTS), None)
        if w is None:
            raise WeightsError(f"no weights for conv {node.name!r}")
        if w.shape != shape:
            raise WeightsError(f"conv {node.name!r}: weights shape {w.shape}, expected {shape}")
        b = found.pop((node.name, KIND_BIAS), None)
        if op.bias and (b is None or b.shape != (op.cout,)):
            raise WeightsError(f"conv {node.name!r}: missing or misshaped bias")
        if not op.bias and b is not None:
            raise WeightsError(f"conv {node.name!r} has bias=0 but the file carries one")
        weights[node.name] = ConvWeights(w, b)
    if found:
        extra = sorted({name for name, _ in found})
        raise WeightsError(f"records for unknown layers: {', '.join(extra)}")
    return net.with_weights(weights)


def save_weights(net: NetworkGraph, path: str | Path) -> None:
    Path(path).write_bytes(weights_bytes(net))


def load_weights(net: NetworkGraph, path: str | Path) -> NetworkGraph:
    return parse_weights(Path(path).read_bytes(), net)
