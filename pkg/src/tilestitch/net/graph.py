"""Layer DAG and the NETSPEC text format.

One node per line, ``#`` starts a comment::

    input in channels=1
    conv c1 from=in k=3 s=1 p=0 d=1 cout=4 bias=1
    relu r1 from=c1
    maxpool m1 from=r1 k=2 s=2
    upsample u1 from=m1 f=2
    cropconcat cc from=r1,u1
    output out from=cc

Optional conv keys default to ``s=1 p=0 d=1 bias=1``; ``maxpool`` stride
defaults to its kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

from ..errors import SpecError


@dataclass(frozen=True)
class Input:
    channels: int


@dataclass(frozen=True)
class Conv:
    k: int
    cout: int
    s: int = 1
    p: int = 0
    d: int = 1
    bias: bool = True


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    k: int
    s: int


@dataclass(frozen=True)
class Upsample:
    f: int


@dataclass(frozen=True)
class CropConcat:
    pass


@dataclass(frozen=True)
class Output:
    pass


Op = Union[Input, Conv, Relu, MaxPool, Upsample, CropConcat, Output]


@dataclass(frozen=True)
class LayerNode:
    name: str
    op: Op
    parents: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConvWeights:
    """Kernel tensor [cout][cin][k][k] and optional bias [cout], both float32."""

    w: np.ndarray
    b: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    nodes: tuple[LayerNode, ...]
    channels: dict[str, int] = field(repr=False)
    strides: dict[str, Fraction] = field(repr=False)
    weights: dict[str, ConvWeights] | None = field(default=None, repr=False)

    @property
    def input(self) -> LayerNode:
        return next(n for n in self.nodes if isinstance(n.op, Input))

    @property
    def output(self) -> LayerNode:
        return next(n for n in self.nodes if isinstance(n.op, Output))

    @property
    def classes(self) -> int:
        return self.channels[self.output.name]

    def node(self, name: str) -> LayerNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def convs(self) -> list[LayerNode]:
        return [n for n in self.nodes if isinstance(n.op, Conv)]

    def conv_input_channels(self, node: LayerNode) -> int:
        return self.channels[node.parents[0]]

    def has_padding(self) -> bool:
        return any(n.op.p > 0 for n in self.convs())

    def with_weights(self, weights: dict[str, ConvWeights]) -> NetworkGraph:
        return NetworkGraph(self.nodes, self.channels, self.strides, weights)

    def to_netspec(self) -> str:
        return "".join(_format_node(n) + "\n" for n in self.nodes)


def _format_node(n: LayerNode) -> str:
    op, src = n.op, ",".join(n.parents)
    if isinstance(op, Input):
        return f"input {n.name} channels={op.channels}"
    if isinstance(op, Conv):
        return (f"conv {n.name} from={src} k={op.k} s={op.s} p={op.p} d={op.d} "
                f"cout={op.cout} bias={int(op.bias)}")
    if isinstance(op, Relu):
        return f"relu {n.name} from={src}"
    if isinstance(op, MaxPool):
        return f"maxpool {n.name} from={src} k={op.k} s={op.s}"
    if isinstance(op, Upsample):
        return f"upsample {n.name} from={src} f={op.f}"
    if isinstance(op, CropConcat):
        return f"cropconcat {n.name} from={src}"
    return f"output {n.name} from={src}"


# kind -> (required keys, optional keys with defaults)
_KEYS: dict[str, tuple[tuple[str, ...], dict[str, int]]] = {
    "input": (("channels",), {}),
    "conv": (("from", "k", "cout"), {"s": 1, "p": 0, "d": 1, "bias": 1}),
    "relu": (("from",), {}),
    "maxpool": (("from", "k"), {"s": 0}),
    "upsample": (("from", "f"), {}),
    "cropconcat": (("from",), {}),
    "output": (("from",), {}),
}


def _int(value: str, key: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise SpecError(f"{key}={value!r} is not an integer", lineno) from None


def _build_op(kind: str, kv: dict[str, str], lineno: int) -> tuple[Op, tuple[str, ...]]:
    required, optional = _KEYS[kind]
    unknown = set(kv) - set(required) - set(optional)
    if unknown:
        raise SpecError(f"unknown key(s) for {kind}: {', '.join(sorted(unknown))}", lineno)
    missing = [k for k in required if k not in kv]
    if missing:
        raise SpecError(f"{kind} needs {', '.join(missing)}", lineno)
    nums = {k: _int(v, k, lineno) for k, v in kv.items() if k != "from"}
    for k, v in optional.items():
        nums.setdefault(k, v)
    parents = tuple(kv["from"].split(",")) if "from" in kv else ()
    want = 2 if kind == "cropconcat" else (0 if kind == "input" else 1)
    if len(parents) != want or any(not p for p in parents):
        raise SpecError(f"{kind} takes exactly {want} parent(s), got {kv.get('from', '')!r}", lineno)

    def check(cond: bool, msg: str):
        if not cond:
            raise SpecError(msg, lineno)

    if kind == "input":
        check(nums["channels"] >= 1, "channels must be >= 1")
        return Input(nums["channels"]), parents
    if kind == "conv":
        check(nums["k"] >= 1, "k must be >= 1")
        check(nums["s"] >= 1, "s must be >= 1")
        check(nums["p"] >= 0, "p must be >= 0")
        check(nums["d"] >= 1, "d must be >= 1")
        check(nums["cout"] >= 1, "cout must be >= 1")
        check(nums["bias"] in (0, 1), "bias must be 0 or 1")
        return Conv(k=nums["k"], cout=nums["cout"], s=nums["s"], p=nums["p"], d=nums["d"],
                    bias=bool(nums["bias"])), parents
    if kind == "maxpool":
        s = nums["s"] or nums["k"]
        check(nums["k"] >= 1 and s >= 1, "maxpool k and s must be >= 1")
        return MaxPool(nums["k"], s), parents
    if kind == "upsample":
        check(nums["f"] >= 2, "upsample factor f must be >= 2")
        return Upsample(nums["f"]), parents
    return {"relu": Relu, "cropconcat": CropConcat, "output": Output}[kind](), parents


def build_graph(nodes: list[LayerNode], lines: list[int] | None = None) -> NetworkGraph:
    """Validate a node list and derive per-node channels and cumulative strides."""
    lines = lines or [None] * len(nodes)
    channels: dict[str, int] = {}
    strides: dict[str, Fraction] = {}
    for node, lineno in zip(nodes, lines):
        if node.name in channels:
            raise SpecError(f"duplicate node name {node.name!r}", lineno)
        for p in node.parents:
            if p == node.name:
                raise SpecError(f"node {node.name!r} lists itself as a parent (cycle)", lineno)
            if p not in channels:
                raise SpecError(f"{node.name!r} references {p!r} before it is declared", lineno)
        op = node.op
        first = node.parents[0] if node.parents else None
        if isinstance(op, Input):
            channels[node.name], strides[node.name] = op.channels, Fraction(1)
        elif isinstance(op, Conv):
            channels[node.name], strides[node.name] = op.cout, strides[first] * op.s
        elif isinstance(op, MaxPool):
            channels[node.name], strides[node.name] = channels[first], strides[first] * op.s
        elif isinstance(op, Upsample):
            channels[node.name], strides[node.name] = channels[first], strides[first] / op.f
        elif isinstance(op, CropConcat):
            a, b = node.parents
            if strides[a] != strides[b]:
                raise SpecError(
                    f"cropconcat {node.name!r}: parents {a!r} and {b!r} sit at cumulative "
                    f"strides {strides[a]} and {strides[b]}", lineno)
            channels[node.name], strides[node.name] = channels[a] + channels[b], strides[a]
        else:
            channels[node.name], strides[node.name] = channels[first], strides[first]
    n_in = sum(isinstance(n.op, Input) for n in nodes)
    n_out = sum(isinstance(n.op, Output) for n in nodes)
    if n_in != 1 or n_out != 1:
        raise SpecError(f"need exactly one input and one output node, got {n_in} and {n_out}")
    return NetworkGraph(tuple(nodes), channels, strides)


def parse_netspec(text: str) -> NetworkGraph:
    """Parse NETSPEC text into a validated, weightless graph."""
    nodes, lines = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        kind = words[0].lower()
        if kind not in _KEYS:
            raise SpecError(f"unknown node kind {words[0]!r}", lineno)
        if len(words) < 2 or "=" in words[1]:
            raise SpecError(f"{kind} line needs a node name", lineno)
        kv = {}
        for word in words[2:]:
            key, sep, value = word.partition("=")
            if not sep or not value:
                raise SpecError(f"expected key=value, got {word!r}", lineno)
            if key in kv:
                raise SpecError(f"key {key!r} given twice", lineno)
            kv[key] = value
        op, parents = _build_op(kind, kv, lineno)
        nodes.append(LayerNode(words[1], op, parents))
        lines.append(lineno)
    return build_graph(nodes, lines)
