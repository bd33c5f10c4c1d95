"""ONNX loader working directly on the protobuf wire format.

Only the message fields the operator subset needs are decoded; every other
field is skipped according to its wire type. Supported operators: Gemm,
MatMul, Add, Conv, Relu, Sigmoid, Tanh, MaxPool, AveragePool,
BatchNormalization, Flatten, Reshape (plus Constant as a weight source).

Attribute defaults follow the ONNX operator documentation (no opset pinning):
Gemm alpha=beta=1, transA=transB=0; Conv/pool strides 1, pads 0, dilations
1, group 1; BatchNormalization epsilon=1e-5; Flatten axis=1;
AveragePool count_include_pad=0; auto_pad must be NOTSET or VALID.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DecodeError, ShapeError, UnsupportedOperator
from .graph import GRAPH_INPUT, GraphBuilder, NetworkGraph, OpKind, node_shapes
from .textnet import fold_batchnorm

# wire types
VARINT, I64, LEN, SGROUP, EGROUP, I32 = 0, 1, 2, 3, 4, 5

# TensorProto.DataType
_DTYPES = {1: np.float32, 6: np.int32, 7: np.int64, 11: np.float64}

SUPPORTED_OPS = {
    "Gemm", "MatMul", "Add", "Conv", "Relu", "Sigmoid", "Tanh", "MaxPool",
    "AveragePool", "BatchNormalization", "Flatten", "Reshape", "Constant",
}


def _varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = shift = 0
    while True:
        if pos >= len(buf):
            raise DecodeError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift >= 70:
            raise DecodeError("varint too long")


def _signed64(v: int) -> int:
    return v - (1 << 64) if v >= 1 << 63 else v


def _fields(buf: bytes):
    """Yield ``(field_number, wire_type, value)``; LEN values are ``bytes``."""
    pos, n = 0, len(buf)
    while pos < n:
        key, pos = _varint(buf, pos)
        num, wt = key >> 3, key & 7
        if num == 0:
            raise DecodeError("field number 0")
        if wt == VARINT:
            val, pos = _varint(buf, pos)
        elif wt == I64:
            if pos + 8 > n:
                raise DecodeError("truncated fixed64")
            val, pos = buf[pos:pos + 8], pos + 8
        elif wt == LEN:
            ln, pos = _varint(buf, pos)
            if pos + ln > n:
                raise DecodeError("length-delimited field overruns buffer")
            val, pos = buf[pos:pos + ln], pos + ln
        elif wt == I32:
            if pos + 4 > n:
                raise DecodeError("truncated fixed32")
            val, pos = buf[pos:pos + 4], pos + 4
        elif wt == SGROUP:
            pos = _skip_group(buf, pos, num)
            continue
        else:
            raise DecodeError(f"unexpected wire type {wt}")
        yield num, wt, val


def _skip_group(buf: bytes, pos: int, num: int) -> int:
    while True:
        key, pos = _varint(buf, pos)
        fnum, wt = key >> 3, key & 7
        if wt == EGROUP:
            if fnum != num:
                raise DecodeError("mismatched end-group")
            return pos
        if wt == VARINT:
            _, pos = _varint(buf, pos)
        elif wt == I64:
            pos += 8
        elif wt == LEN:
            ln, pos = _varint(buf, pos)
            pos += ln
        elif wt == I32:
            pos += 4
        elif wt == SGROUP:
            pos = _skip_group(buf, pos, fnum)
        else:
            raise DecodeError(f"unexpected wire type {wt} in group")
        if pos > len(buf):
            raise DecodeError("truncated group")


def _packed_varints(val, wt) -> list[int]:
    if wt == VARINT:
        return [_signed64(val)]
    out, pos = [], 0
    while pos < len(val):
        v, pos = _varint(val, pos)
        out.append(_signed64(v))
    return out


def _packed_fixed(val, wt, fmt: str, size: int) -> list:
    if wt != LEN:
        return list(struct.unpack("<" + fmt, val))
    if len(val) % size:
        raise DecodeError("packed fixed-width field has ragged length")
    return list(struct.unpack(f"<{len(val) // size}{fmt}", val))


def _str(val: bytes) -> str:
    try:
        return val.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("invalid UTF-8 string") from exc


def _need(wt: int, expected: int, what: str) -> None:
    if wt != expected:
        raise DecodeError(f"{what}: wire type {wt}, expected {expected}")


# ----------------------------------------------------------------------------
# message decoders


def decode_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype = 0
    name = ""
    raw = None
    float_data: list[float] = []
    double_data: list[float] = []
    int_data: list[int] = []
    for num, wt, val in _fields(buf):
        if num == 1:
            dims += _packed_varints(val, wt)
        elif num == 2:
            _need(wt, VARINT, "TensorProto.data_type")
            dtype = val
        elif num == 4:
            float_data += _packed_fixed(val, wt, "f", 4)
        elif num in (5, 7):
            int_data += _packed_varints(val, wt)
        elif num == 8:
            _need(wt, LEN, "TensorProto.name")
            name = _str(val)
        elif num == 9:
            _need(wt, LEN, "TensorProto.raw_data")
            raw = val
        elif num == 10:
            double_data += _packed_fixed(val, wt, "d", 8)
    if dtype not in _DTYPES:
        raise DecodeError(f"tensor {name!r}: unsupported data type {dtype}")
    npt = _DTYPES[dtype]
    if raw is not None:
        if len(raw) % np.dtype(npt).itemsize:
            raise DecodeError(f"tensor {name!r}: raw_data length not a multiple of element size")
        arr = np.frombuffer(raw, dtype=np.dtype(npt).newbyteorder("<")).astype(npt)
    elif dtype == 1:
        arr = np.array(float_data, dtype=np.float32)
    elif dtype == 11:
        arr = np.array(double_data, dtype=np.float64)
    else:
        arr = np.array(int_data, dtype=npt)
    expected = int(np.prod(dims)) if dims else 1
    if arr.size != expected:
        raise DecodeError(f"tensor {name!r}: {arr.size} values for dims {dims}")
    return name, arr.reshape(dims)


@dataclass
class _Attr:
    name: str = ""
    f: float | None = None
    i: int | None = None
    s: bytes | None = None
    t: np.ndarray | None = None
    floats: list = field(default_factory=list)
    ints: list = field(default_factory=list)
    type: int = 0

    def value(self):
        # scalar zero values are omitted on the wire, so dispatch on the declared type
        by_type = {1: self.f or 0.0, 2: self.i or 0, 3: self.s or b"", 4: self.t,
                   6: self.floats, 7: self.ints}
        if self.type in by_type:
            return by_type[self.type]
        for v in (self.t, self.f, self.i, self.s):
            if v is not None:
                return v
        return self.ints or self.floats


def decode_attribute(buf: bytes) -> _Attr:
    a = _Attr()
    for num, wt, val in _fields(buf):
        if num == 1:
            a.name = _str(val)
        elif num == 2:
            _need(wt, I32, "AttributeProto.f")
            a.f = struct.unpack("<f", val)[0]
        elif num == 3:
            _need(wt, VARINT, "AttributeProto.i")
            a.i = _signed64(val)
        elif num == 4:
            a.s = bytes(val)
        elif num == 5:
            a.t = decode_tensor(val)[1]
        elif num == 7:
            a.floats += _packed_fixed(val, wt, "f", 4)
        elif num == 8:
            a.ints += _packed_varints(val, wt)
        elif num == 20:
            _need(wt, VARINT, "AttributeProto.type")
            a.type = val
    return a


@dataclass
class _Node:
    op_type: str = ""
    name: str = ""
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


def decode_node(buf: bytes) -> _Node:
    n = _Node()
    for num, wt, val in _fields(buf):
        if num == 1:
            n.inputs.append(_str(val))
        elif num == 2:
            n.outputs.append(_str(val))
        elif num == 3:
            n.name = _str(val)
        elif num == 4:
            n.op_type = _str(val)
        elif num == 5:
            a = decode_attribute(val)
            n.attrs[a.name] = a.value()
    return n


def decode_value_info(buf: bytes) -> tuple[str, list]:
    name, dims = "", []
    for num, _, val in _fields(buf):
        if num == 1:
            name = _str(val)
        elif num == 2:  # TypeProto
            for tnum, _, tval in _fields(val):
                if tnum == 1:  # tensor_type
                    for snum, _, sval in _fields(tval):
                        if snum == 2:  # TensorShapeProto
                            for dnum, _, dval in _fields(sval):
                                if dnum == 1:
                                    dim = None
                                    for knum, kwt, kval in _fields(dval):
                                        if knum == 1 and kwt == VARINT:
                                            dim = _signed64(kval)
                                    dims.append(dim)
    return name, dims


@dataclass
class _Graph:
    nodes: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


def decode_model(data: bytes) -> _Graph:
    graph_buf = None
    for num, wt, val in _fields(bytes(data)):
        if num == 7:
            _need(wt, LEN, "ModelProto.graph")
            graph_buf = val
    if graph_buf is None:
        raise DecodeError("model has no graph")
    g = _Graph()
    for num, wt, val in _fields(graph_buf):
        if num == 1:
            g.nodes.append(decode_node(val))
        elif num == 5:
            name, arr = decode_tensor(val)
            g.initializers[name] = arr
        elif num == 11:
            g.inputs.append(decode_value_info(val))
        elif num == 12:
            g.outputs.append(decode_value_info(val))
    return g


# ----------------------------------------------------------------------------
# conversion to NetworkGraph


def _strip_batch(dims: list) -> tuple[int, ...]:
    if len(dims) >= 2 and (dims[0] is None or dims[0] in (0, 1, -1)):
        dims = dims[1:]
    if any(d is None or d <= 0 for d in dims):
        raise ShapeError(f"input has non-static dimensions {dims}")
    return tuple(int(d) for d in dims)


def _pads2d(node: _Node) -> tuple[int, int, int, int]:
    auto = node.attrs.get("auto_pad", b"NOTSET")
    if isinstance(auto, bytes) and auto not in (b"NOTSET", b"VALID", b""):
        raise UnsupportedOperator(node.op_type, f"auto_pad={auto.decode()}")
    pads = node.attrs.get("pads", [0, 0, 0, 0])
    if len(pads) != 4:
        raise UnsupportedOperator(node.op_type, "only 2-D spatial pads are supported")
    # ONNX order: top, left, bottom, right
    return tuple(int(p) for p in pads)


def _check_2d(node: _Node) -> None:
    if any(d != 1 for d in node.attrs.get("dilations", [1, 1])):
        raise UnsupportedOperator(node.op_type, "dilations other than 1")
    if node.attrs.get("group", 1) != 1:
        raise UnsupportedOperator(node.op_type, "grouped convolution")
    if node.attrs.get("ceil_mode", 0):
        raise UnsupportedOperator(node.op_type, "ceil_mode=1")


def load_onnx(data: bytes) -> NetworkGraph:
    g = decode_model(data)
    for n in g.nodes:
        if n.op_type not in SUPPORTED_OPS:
            raise UnsupportedOperator(n.op_type)

    consts: dict[str, np.ndarray] = dict(g.initializers)
    real_inputs = [(name, dims) for name, dims in g.inputs if name not in consts]
    if len(real_inputs) != 1:
        raise ShapeError(f"expected exactly one graph input, found {len(real_inputs)}")
    if len(g.outputs) != 1:
        raise ShapeError(f"expected exactly one graph output, found {len(g.outputs)}")
    in_name, in_dims = real_inputs[0]
    b = GraphBuilder(_strip_batch(in_dims))
    where: dict[str, int] = {in_name: GRAPH_INPUT}

    def shape_of(ref: int) -> tuple[int, ...]:
        if ref == GRAPH_INPUT:
            return b.input_shape
        return node_shapes(b.nodes[: ref + 1], b.input_shape)[ref]

    consumers: dict[str, int] = {}
    for n in g.nodes:
        for i in n.inputs:
            consumers[i] = consumers.get(i, 0) + 1

    pending = _topo(g.nodes, set(where) | set(consts))
    skip = set()
    for idx, n in enumerate(pending):
        if idx in skip:
            continue
        op = n.op_type
        ins = [i for i in n.inputs if i != ""]
        if op == "Constant":
            val = n.attrs.get("value")
            if not isinstance(val, np.ndarray):
                raise UnsupportedOperator(op, "only tensor-valued constants")
            consts[n.outputs[0]] = val
            continue
        dyn = [i for i in ins if i not in consts]
        for i in dyn:
            if i not in where:
                raise ShapeError(f"node {n.name or op} reads unknown tensor {i!r}")
        out = n.outputs[0]

        if op in ("Gemm", "MatMul"):
            if len(dyn) != 1 or ins[0] != dyn[0]:
                raise UnsupportedOperator(op, "expects activation as first operand and constant weights")
            src = where[dyn[0]]
            if len(shape_of(src)) != 1:
                raise ShapeError(f"{op} on non-vector activation of shape {shape_of(src)}")
            B = consts[ins[1]].astype(np.float64)
            if op == "Gemm":
                if n.attrs.get("transA", 0):
                    raise UnsupportedOperator(op, "transA=1")
                W = B if n.attrs.get("transB", 0) else B.T
                W = W * float(n.attrs.get("alpha", 1.0))
                if len(ins) > 2:
                    bias = np.broadcast_to(consts[ins[2]].astype(np.float64) * float(n.attrs.get("beta", 1.0)),
                                           (1, W.shape[0])).reshape(-1)
                else:
                    bias = np.zeros(W.shape[0])
            else:
                if B.ndim != 2:
                    raise UnsupportedOperator(op, "weight must be a matrix")
                W = B.T
                bias = np.zeros(W.shape[0])
                nxt = _fusable_add(pending, idx, out, consts, consumers)
                if nxt is not None:
                    add_idx, add_const = nxt
                    bias = np.broadcast_to(consts[add_const].astype(np.float64), (1, W.shape[0])).reshape(-1)
                    skip.add(add_idx)
                    out = pending[add_idx].outputs[0]
            where[out] = b.add(OpKind.DENSE, [src], name=n.name, weight=np.ascontiguousarray(W), bias=bias.copy())
        elif op == "Add":
            if len(dyn) == 2:
                where[out] = b.add(OpKind.ADD, [where[dyn[0]], where[dyn[1]]], name=n.name)
            elif len(dyn) == 1:
                c = consts[[i for i in ins if i in consts][0]].astype(np.float64)
                src = where[dyn[0]]
                c = _drop_batch_axis(c, len(shape_of(src)))
                where[out] = b.add(OpKind.ADD, [src], name=n.name, addend=c)
            else:
                raise UnsupportedOperator(op, "constant-only add")
        elif op == "Conv":
            _check_2d(n)
            W = consts[ins[1]].astype(np.float64)
            bias = consts[ins[2]].astype(np.float64) if len(ins) > 2 else np.zeros(W.shape[0])
            strides = tuple(n.attrs.get("strides", [1, 1]))
            where[out] = b.add(OpKind.CONV2D, [where[dyn[0]]], name=n.name, weight=W, bias=bias,
                               strides=strides, pads=_pads2d(n))
        elif op in ("MaxPool", "AveragePool"):
            _check_2d(n)
            kernel = tuple(n.attrs.get("kernel_shape", []))
            if len(kernel) != 2:
                raise UnsupportedOperator(op, "kernel_shape must be 2-D")
            extra = {}
            kind = OpKind.MAXPOOL2D
            if op == "AveragePool":
                kind = OpKind.AVGPOOL2D
                extra["count_include_pad"] = bool(n.attrs.get("count_include_pad", 0))
            where[out] = b.add(kind, [where[dyn[0]]], name=n.name, kernel=kernel,
                               strides=tuple(n.attrs.get("strides", [1, 1])), pads=_pads2d(n), **extra)
        elif op == "BatchNormalization":
            scale, bias, mean, var = (consts[i].astype(np.float64) for i in ins[1:5])
            eps = float(n.attrs.get("epsilon", 1e-5))
            a, shift = fold_batchnorm(scale, bias, mean, var, eps)
            where[out] = b.add(OpKind.BATCHNORM, [where[dyn[0]]], name=n.name, scale=a, shift=shift, epsilon=eps)
        elif op in ("Relu", "Sigmoid", "Tanh"):
            where[out] = b.add(OpKind[op.upper()], [where[dyn[0]]], name=n.name)
        elif op == "Flatten":
            if n.attrs.get("axis", 1) != 1:
                raise UnsupportedOperator(op, "axis other than 1")
            where[out] = b.add(OpKind.FLATTEN, [where[dyn[0]]], name=n.name)
        elif op == "Reshape":
            src = where[dyn[0]]
            target = _reshape_target(shape_of(src), [int(v) for v in consts[ins[1]].ravel()])
            where[out] = b.add(OpKind.RESHAPE, [src], name=n.name, shape=target)

    out_name = g.outputs[0][0]
    if out_name not in where:
        raise ShapeError(f"graph output {out_name!r} is not produced by a supported node")
    net = NetworkGraph(_prune(b.nodes, where[out_name]), b.input_shape)
    return net


def _topo(nodes: list[_Node], available: set[str]) -> list[_Node]:
    have = set(available)
    order, rest = [], list(nodes)
    while rest:
        progressed = False
        for n in list(rest):
            if all(i == "" or i in have for i in n.inputs):
                order.append(n)
                have.update(n.outputs)
                rest.remove(n)
                progressed = True
        if not progressed:
            raise ShapeError("graph has a cycle or reads undefined tensors")
    return order


def _fusable_add(pending, idx, out, consts, consumers):
    if consumers.get(out, 0) != 1:
        return None
    for j in range(idx + 1, len(pending)):
        n = pending[j]
        if out in n.inputs:
            if n.op_type == "Add" and len(n.inputs) == 2:
                other = n.inputs[1] if n.inputs[0] == out else n.inputs[0]
                if other in consts:
                    return j, other
            return None
    return None


def _drop_batch_axis(c: np.ndarray, rank: int) -> np.ndarray:
    if c.ndim == rank + 1 and c.shape[0] == 1:
        return c[0]
    return c


def _reshape_target(in_shape: tuple[int, ...], target: list[int]) -> tuple[int, ...]:
    full = (1,) + tuple(in_shape)
    dims = [full[i] if v == 0 and i < len(full) else v for i, v in enumerate(target)]
    if len(dims) > 1 and dims[0] in (1, -1):
        dims = dims[1:]
    total = int(np.prod(in_shape))
    if dims.count(-1) > 1:
        raise ShapeError(f"reshape target {target} has several -1 entries")
    if -1 in dims:
        known = int(np.prod([d for d in dims if d != -1]))
        if known == 0 or total % known:
            raise ShapeError(f"cannot reshape {in_shape} to {target}")
        dims[dims.index(-1)] = total // known
    return tuple(dims)


def _prune(nodes, out_idx: int):
    """Keep only nodes feeding ``out_idx`` and renumber references."""
    live = {out_idx}
    for i in range(out_idx, -1, -1):
        if i in live:
            live.update(j for j in nodes[i].inputs if j != GRAPH_INPUT)
    keep = sorted(live)
    remap = {old: new for new, old in enumerate(keep)}
    remap[GRAPH_INPUT] = GRAPH_INPUT
    out = []
    for old in keep:
        n = nodes[old]
        n.inputs = tuple(remap[j] for j in n.inputs)
        out.append(n)
    return out


def load_onnx_file(path) -> NetworkGraph:
    with open(path, "rb") as fh:
        return load_onnx(fh.read())
