"""Minimal segmentation-network evaluator and its geometry calculus."""

from .forward import forward, forward_array
from .geometry import NetGeometry, geometry
from .graph import (Conv, ConvWeights, CropConcat, Input, LayerNode, MaxPool, NetworkGraph, Output, Relu,
                    Upsample, build_graph, parse_netspec)
from .weights import init_weights, load_weights, parse_weights, save_weights, weights_bytes
from .zoo import BUILTINS


def contamination_margin(net: NetworkGraph, input_size: int) -> int:
    return geometry(net).contamination_margin(input_size)


def load_netspec(ref: str) -> NetworkGraph:
    """Parse a NETSPEC file path, or a built-in name written as ``builtin:<name>``."""
    from pathlib import Path

    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTINS:
            from ..errors import SpecError
            raise SpecError(f"unknown builtin net {name!r}; choose from {', '.join(sorted(BUILTINS))}")
        return parse_netspec(BUILTINS[name]())
    return parse_netspec(Path(ref).read_text(encoding="utf-8"))


__all__ = [
    "BUILTINS", "Conv", "ConvWeights", "CropConcat", "Input", "LayerNode", "MaxPool", "NetGeometry",
    "NetworkGraph", "Output", "Relu", "Upsample", "build_graph", "contamination_margin", "forward",
    "forward_array", "geometry", "init_weights", "load_netspec", "load_weights", "parse_netspec",
    "parse_weights", "save_weights", "weights_bytes",
]
