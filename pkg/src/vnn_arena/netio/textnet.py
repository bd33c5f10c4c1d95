"""Plain-text network format.

Line oriented; ``#`` starts a comment. A header names the input and output
shapes, then one layer per header line. Numeric lines following a layer
header form that layer's parameter block::

    inputs 2
    outputs 2
    dense 2 2          # rows cols; then `rows` lines of `cols` weights, one line of biases
    1 -1
    0.5 2
    0 0
    relu
    dense 2 2
    ...

Layer headers:

    dense R C                      R weight lines of C values, then one line of R biases
    conv CO CI KH KW SH SW [PT PL PB PR]
                                   CO*CI*KH*KW weights (row-major), then CO biases
    maxpool KH KW SH SW [PT PL PB PR]
    avgpool KH KW SH SW [PT PL PB PR [include_pad]]
    batchnorm C EPS                four lines of C values: scale, bias, mean, var
    relu | sigmoid | tanh | flatten
    reshape D1 [D2 ...]
    mark NAME                      remember the current tensor
    add NAME                       residual: current tensor + remembered tensor
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError, VnnSyntaxError
from .graph import GRAPH_INPUT, GraphBuilder, NetworkGraph, OpKind, node_shapes

_NO_PARAMS = {"relu": OpKind.RELU, "sigmoid": OpKind.SIGMOID, "tanh": OpKind.TANH, "flatten": OpKind.FLATTEN}


def fold_batchnorm(scale, bias, mean, var, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode batch normalization as a per-channel affine map."""
    a = np.asarray(scale, dtype=np.float64) / np.sqrt(np.asarray(var, dtype=np.float64) + eps)
    shift = np.asarray(bias, dtype=np.float64) - np.asarray(mean, dtype=np.float64) * a
    return a, shift


def _is_numeric(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _ints(toks: list[str], lineno: int) -> list[int]:
    try:
        return [int(t) for t in toks]
    except ValueError:
        raise VnnSyntaxError(f"expected integers, got {' '.join(toks)!r}", lineno) from None


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def load_network_text(text: str) -> NetworkGraph:
    rows = list(_lines(text))
    # group into (header, params) blocks
    blocks: list[tuple[int, list[str], list[tuple[int, list[float]]]]] = []
    for lineno, toks in rows:
        if _is_numeric(toks[0]):
            if not blocks:
                raise VnnSyntaxError("numbers before any header", lineno)
            try:
                vals = [float(t) for t in toks]
            except ValueError:
                raise VnnSyntaxError("non-numeric value in parameter line", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise VnnSyntaxError("non-finite parameter", lineno)
            blocks[-1][2].append((lineno, vals))
        else:
            blocks.append((lineno, toks, []))

    input_shape = output_shape = None
    b: GraphBuilder | None = None
    marks: dict[str, int] = {}
    for lineno, toks, params in blocks:
        key, args = toks[0].lower(), toks[1:]
        if key in ("inputs", "outputs"):
            if params:
                raise VnnSyntaxError(f"'{key}' takes no parameter block", params[0][0])
            shape = tuple(_ints(args, lineno))
            if not shape or any(v <= 0 for v in shape):
                raise ShapeError(f"line {lineno}: invalid shape {shape}")
            if key == "inputs":
                if b is not None:
                    raise VnnSyntaxError("duplicate 'inputs' header", lineno)
                input_shape = shape
                b = GraphBuilder(shape)
            else:
                output_shape = shape
            continue
        if b is None:
            raise VnnSyntaxError("layer before 'inputs' header", lineno)
        cur = b.last()
        if key in _NO_PARAMS:
            _no_block(params, key)
            b.add(_NO_PARAMS[key], [cur])
        elif key == "dense":
            r, c = _ints(args, lineno) if len(args) == 2 else _bad_header(lineno, "dense R C")
            if len(params) != r + 1:
                raise ShapeError(f"line {lineno}: dense {r}x{c} needs {r} weight rows and a bias row, "
                                 f"got {len(params)} numeric lines")
            for pl, vals in params[:r]:
                if len(vals) != c:
                    raise ShapeError(f"line {pl}: weight row has {len(vals)} values, expected {c}")
            if len(params[r][1]) != r:
                raise ShapeError(f"line {params[r][0]}: bias row has {len(params[r][1])} values, expected {r}")
            W = np.array([v for _, v in params[:r]], dtype=np.float64).reshape(r, c)
            _add_checked(b, lineno, OpKind.DENSE, [cur], weight=W, bias=np.array(params[r][1]))
        elif key == "conv":
            nums = _ints(args, lineno)
            if len(nums) not in (6, 10):
                _bad_header(lineno, "conv CO CI KH KW SH SW [PT PL PB PR]")
            co, ci, kh, kw, sh, sw = nums[:6]
            pads = tuple(nums[6:]) if len(nums) == 10 else (0, 0, 0, 0)
            flat = _flat(params)
            nw = co * ci * kh * kw
            if len(flat) != nw + co:
                raise ShapeError(f"line {lineno}: conv needs {nw + co} parameters, got {len(flat)}")
            _add_checked(b, lineno, OpKind.CONV2D, [cur],
                         weight=np.array(flat[:nw]).reshape(co, ci, kh, kw), bias=np.array(flat[nw:]),
                         strides=(sh, sw), pads=pads)
        elif key in ("maxpool", "avgpool"):
            nums = _ints(args, lineno)
            allowed = (4, 8) if key == "maxpool" else (4, 8, 9)
            if len(nums) not in allowed:
                _bad_header(lineno, f"{key} KH KW SH SW [PT PL PB PR]")
            _no_block(params, key)
            extra = {}
            if key == "avgpool":
                extra["count_include_pad"] = bool(nums[8]) if len(nums) == 9 else False
            kind = OpKind.MAXPOOL2D if key == "maxpool" else OpKind.AVGPOOL2D
            pads = tuple(nums[4:8]) if len(nums) >= 8 else (0, 0, 0, 0)
            _add_checked(b, lineno, kind, [cur], kernel=tuple(nums[0:2]), strides=tuple(nums[2:4]),
                         pads=pads, **extra)
        elif key == "batchnorm":
            if len(args) != 2:
                _bad_header(lineno, "batchnorm C EPS")
            ch = _ints(args[:1], lineno)[0]
            eps = float(args[1])
            if len(params) != 4 or any(len(v) != ch for _, v in params):
                raise ShapeError(f"line {lineno}: batchnorm needs 4 lines of {ch} values")
            a, shift = fold_batchnorm(*(np.array(v) for _, v in params), eps)
            _add_checked(b, lineno, OpKind.BATCHNORM, [cur], scale=a, shift=shift, epsilon=eps)
        elif key == "reshape":
            _no_block(params, key)
            _add_checked(b, lineno, OpKind.RESHAPE, [cur], shape=tuple(_ints(args, lineno)))
        elif key == "mark":
            if len(args) != 1:
                _bad_header(lineno, "mark NAME")
            marks[args[0]] = cur
        elif key == "add":
            if len(args) != 1 or args[0] not in marks:
                raise VnnSyntaxError("'add' needs a previously marked tensor name", lineno)
            _no_block(params, key)
            _add_checked(b, lineno, OpKind.ADD, [cur, marks[args[0]]])
        else:
            raise VnnSyntaxError(f"unknown layer {toks[0]!r}", lineno)

    if b is None or input_shape is None:
        raise VnnSyntaxError("missing 'inputs' header")
    net = b.build()
    if output_shape is not None and tuple(output_shape) != tuple(net.output_shape):
        raise ShapeError(f"declared outputs {output_shape} but network produces {net.output_shape}")
    return net


def _bad_header(lineno: int, usage: str):
    raise VnnSyntaxError(f"malformed layer header, expected '{usage}'", lineno)


def _no_block(params, key: str) -> None:
    if params:
        raise VnnSyntaxError(f"'{key}' takes no parameter block", params[0][0])


def _flat(params) -> list[float]:
    return [v for _, vals in params for v in vals]


def _add_checked(b: GraphBuilder, lineno: int, kind: OpKind, inputs, **params) -> int:
    idx = b.add(kind, inputs, **params)
    try:
        node_shapes(b.nodes, b.input_shape)
    except ShapeError as exc:
        raise ShapeError(f"line {lineno}: {exc}") from None
    return idx


def load_network_text_file(path) -> NetworkGraph:
    with open(path, encoding="utf-8") as fh:
        return load_network_text(fh.read())


# ----------------------------------------------------------------------------
# writer


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def dump_network_text(net: NetworkGraph) -> str:
    """Serialize a graph whose nodes form a chain plus residual adds."""
    out = [f"inputs {' '.join(map(str, net.input_shape))}",
           f"outputs {' '.join(map(str, net.output_shape))}"]
    needed = set()
    for i, node in enumerate(net.nodes):
        if node.inputs and node.inputs[0] != i - 1 and not (i == 0 and node.inputs[0] == GRAPH_INPUT):
            raise ShapeError(f"node {i} does not continue the chain; not representable as text")
        if node.kind is OpKind.ADD and len(node.inputs) == 2:
            needed.add(node.inputs[1])
        elif node.kind is OpKind.ADD:
            raise ShapeError("constant add is not representable as text")
    if GRAPH_INPUT in needed:
        out.append("mark t_in")
    for i, node in enumerate(net.nodes):
        k, c, a = node.kind, node.constants, node.attrs
        if k is OpKind.DENSE:
            W = c["weight"]
            out.append(f"dense {W.shape[0]} {W.shape[1]}")
            out.extend(_fmt(row) for row in W)
            out.append(_fmt(c["bias"]))
        elif k is OpKind.CONV2D:
            W = c["weight"]
            nums = list(W.shape) + list(a["strides"]) + list(a["pads"])
            out.append("conv " + " ".join(map(str, nums)))
            out.append(_fmt(W))
            out.append(_fmt(c["bias"]))
        elif k in (OpKind.MAXPOOL2D, OpKind.AVGPOOL2D):
            nums = list(a["kernel"]) + list(a["strides"]) + list(a["pads"])
            name = "maxpool" if k is OpKind.MAXPOOL2D else "avgpool"
            if k is OpKind.AVGPOOL2D and a.get("count_include_pad"):
                nums.append(1)
            out.append(f"{name} " + " ".join(map(str, nums)))
        elif k is OpKind.BATCHNORM:
            ch = c["scale"].shape[0]
            # folded parameters re-expressed with mean 0, var 1, eps 0
            out += [f"batchnorm {ch} 0.0", _fmt(c["scale"]), _fmt(c["shift"]), _fmt(np.zeros(ch)), _fmt(np.ones(ch))]
        elif k is OpKind.ADD:
            src = node.inputs[1]
            out.append(f"add {'t_in' if src == GRAPH_INPUT else f't{src}'}")
        elif k is OpKind.RESHAPE:
            out.append("reshape " + " ".join(map(str, node.out_shape)))
        else:
            out.append(k.value)
        if i in needed:
            out.append(f"mark t{i}")
    return "\n".join(out) + "\n"
