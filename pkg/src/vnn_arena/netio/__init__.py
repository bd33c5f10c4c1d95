"""Network loading (ONNX subset, plain text), evaluation and input gradients."""

from __future__ import annotations

from pathlib import Path

from .graph import (
    GRAPH_INPUT,
    GraphBuilder,
    NetworkGraph,
    OpKind,
    OpNode,
    evaluate,
    evaluate_batch,
    forward,
    input_gradient,
    vjp_batch,
)
from .onnx_wire import load_onnx, load_onnx_file
from .onnx_write import encode_onnx, save_onnx
from .textnet import dump_network_text, load_network_text, load_network_text_file

ONNX_SUFFIXES = (".onnx",)


def load_network(path) -> NetworkGraph:
    """Load by extension: ``.onnx`` is binary ONNX, anything else the text format."""
    path = Path(path)
    if path.suffix.lower() in ONNX_SUFFIXES:
        return load_onnx_file(path)
    return load_network_text_file(path)


__all__ = [
    "GRAPH_INPUT",
    "GraphBuilder",
    "NetworkGraph",
    "OpKind",
    "OpNode",
    "dump_network_text",
    "encode_onnx",
    "evaluate",
    "evaluate_batch",
    "forward",
    "input_gradient",
    "load_network",
    "load_network_text",
    "load_network_text_file",
    "load_onnx",
    "load_onnx_file",
    "save_onnx",
    "vjp_batch",
]
