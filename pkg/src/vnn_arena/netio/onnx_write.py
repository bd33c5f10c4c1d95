"""Minimal ONNX encoder for the operator subset the loader understands.

Tensors are written as DOUBLE so that a save/load round trip is exact.
Generated desk benchmarks and the overhead-probe instance use this, which
keeps the harness free of a runtime dependency on the ``onnx`` package.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .graph import GRAPH_INPUT, NetworkGraph, OpKind

_DOUBLE, _INT64 = 11, 7
_ATTR_FLOAT, _ATTR_INT, _ATTR_INTS = 1, 2, 7


def _varint(v: int) -> bytes:
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        byte = v & 0x7F
        v >>= 7
        if v:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _key(num: int, wt: int) -> bytes:
    return _varint((num << 3) | wt)


def _int(num: int, v: int) -> bytes:
    return _key(num, 0) + _varint(int(v))


def _len(num: int, payload: bytes) -> bytes:
    return _key(num, 2) + _varint(len(payload)) + payload


def _str(num: int, s: str) -> bytes:
    return _len(num, s.encode())


def _tensor(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype.kind in "iu":
        dtype, raw = _INT64, np.ascontiguousarray(arr, dtype="<i8").tobytes()
    else:
        dtype, raw = _DOUBLE, np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out = b"".join(_int(1, d) for d in arr.shape)
    return out + _int(2, dtype) + _str(8, name) + _len(9, raw)


def _attr(name: str, value) -> bytes:
    if isinstance(value, float):
        return _str(1, name) + _key(2, 5) + struct.pack("<f", value) + _int(20, _ATTR_FLOAT)
    if isinstance(value, (int, bool, np.integer)):
        return _str(1, name) + _int(3, int(value)) + _int(20, _ATTR_INT)
    packed = b"".join(_varint(int(v)) for v in value)
    return _str(1, name) + _len(8, packed) + _int(20, _ATTR_INTS)


def _node(op: str, inputs: list[str], output: str, name: str, **attrs) -> bytes:
    out = b"".join(_str(1, i) for i in inputs) + _str(2, output) + _str(3, name) + _str(4, op)
    return out + b"".join(_len(5, _attr(k, v)) for k, v in attrs.items())


def _value_info(name: str, dims) -> bytes:
    shape = b"".join(_len(1, _int(1, d)) for d in dims)
    tensor_type = _int(1, _DOUBLE) + _len(2, shape)
    return _str(1, name) + _len(2, _len(1, tensor_type))


def encode_onnx(net: NetworkGraph) -> bytes:
    """Serialize ``net`` as an opset-13 ONNX model with a batch-1 input named ``x``."""
    nodes, inits = [], []
    names = []

    def src(j: int) -> str:
        return "x" if j == GRAPH_INPUT else names[j]

    def const(tag: str, arr) -> str:
        cname = f"{tag}_{len(names)}"
        inits.append(_tensor(cname, np.asarray(arr)))
        return cname

    for i, node in enumerate(net.nodes):
        out = "y" if i == len(net.nodes) - 1 else f"t{i}"
        ins = [src(j) for j in node.inputs]
        c, a, k = node.constants, node.attrs, node.kind
        label = node.name or f"n{i}"
        if k is OpKind.DENSE:
            nodes.append(_node("Gemm", ins + [const("W", c["weight"]), const("b", c["bias"])], out, label, transB=1))
        elif k is OpKind.CONV2D:
            W = c["weight"]
            nodes.append(_node("Conv", ins + [const("K", W), const("kb", c["bias"])], out, label,
                               kernel_shape=list(W.shape[2:]), strides=list(a["strides"]), pads=list(a["pads"])))
        elif k in (OpKind.RELU, OpKind.SIGMOID, OpKind.TANH):
            nodes.append(_node(k.name.capitalize(), ins, out, label))
        elif k is OpKind.MAXPOOL2D:
            nodes.append(_node("MaxPool", ins, out, label, kernel_shape=list(a["kernel"]),
                               strides=list(a["strides"]), pads=list(a["pads"])))
        elif k is OpKind.AVGPOOL2D:
            nodes.append(_node("AveragePool", ins, out, label, kernel_shape=list(a["kernel"]),
                               strides=list(a["strides"]), pads=list(a["pads"]),
                               count_include_pad=int(a.get("count_include_pad", False))))
        elif k is OpKind.BATCHNORM:
            n_ch = c["scale"].shape[0]
            extra = [const("s", c["scale"]), const("sh", c["shift"]),
                     const("m", np.zeros(n_ch)), const("v", np.ones(n_ch))]
            nodes.append(_node("BatchNormalization", ins + extra, out, label, epsilon=0.0))
        elif k is OpKind.ADD:
            if len(ins) == 1:
                ins.append(const("a", c["addend"]))
            nodes.append(_node("Add", ins, out, label))
        elif k is OpKind.FLATTEN:
            nodes.append(_node("Flatten", ins, out, label, axis=1))
        elif k is OpKind.RESHAPE:
            target = np.array((1,) + tuple(node.out_shape), dtype=np.int64)
            nodes.append(_node("Reshape", ins + [const("shape", target)], out, label))
        else:  # pragma: no cover
            raise AssertionError(k)
        names.append(out)

    graph = b"".join(_len(1, n) for n in nodes) + _str(2, "vnn_arena")
    graph += b"".join(_len(5, t) for t in inits)
    graph += _len(11, _value_info("x", (1,) + net.input_shape))
    graph += _len(12, _value_info("y", (1,) + tuple(net.nodes[-1].out_shape)))
    opset = _str(1, "") + _int(2, 13)
    return _int(1, 8) + _str(2, "vnn-arena") + _len(7, graph) + _len(8, opset)


def save_onnx(net: NetworkGraph, path) -> None:
    Path(path).write_bytes(encode_onnx(net))
