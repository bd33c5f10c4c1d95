"""Operator graph, exact 64-bit evaluation and reverse-mode input gradients.

Tensors carry no batch dimension in their declared shapes; every kernel here
works on a leading batch axis so that attacks and grid probes can evaluate
many points per call.

Tie-breaking is fixed: ReLU outputs 0 at 0 and back-propagates subgradient 0
there; MaxPool picks the lowest row-major index among equal window entries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import DimensionMismatch, ShapeError

GRAPH_INPUT = -1


class OpKind(enum.Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    MAXPOOL2D = "maxpool2d"
    AVGPOOL2D = "avgpool2d"
    BATCHNORM = "batchnorm"
    ADD = "add"
    FLATTEN = "flatten"
    RESHAPE = "reshape"


ELEMENTWISE = (OpKind.RELU, OpKind.SIGMOID, OpKind.TANH)


@dataclass(eq=False)
class OpNode:
    kind: OpKind
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    out_shape: tuple[int, ...] = ()
    name: str = ""


def _prod(shape: Sequence[int]) -> int:
    out = 1
    for s in shape:
        out *= int(s)
    return out


def _pool_out(h: int, w: int, kernel, strides, pads) -> tuple[int, int]:
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    ho = (h + pt + pb - kh) // sh + 1
    wo = (w + pl + pr - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"window {kernel} does not fit input {h}x{w} with pads {pads}")
    return ho, wo


def infer_shape(node: OpNode, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Validate a node's parameters against its input shapes; return the output shape."""
    k = node.kind
    s = in_shapes[0]
    c = node.constants
    if k is OpKind.DENSE:
        W, b = c["weight"], c["bias"]
        if len(s) != 1:
            raise ShapeError(f"dense layer expects a vector input, got shape {s}")
        if W.ndim != 2 or W.shape[1] != s[0]:
            raise ShapeError(f"dense weight {W.shape} does not match input width {s[0]}")
        if b.shape != (W.shape[0],):
            raise ShapeError(f"dense bias {b.shape} does not match {W.shape[0]} rows")
        return (W.shape[0],)
    if k is OpKind.CONV2D:
        W, b = c["weight"], c["bias"]
        if len(s) != 3 or W.ndim != 4 or W.shape[1] != s[0]:
            raise ShapeError(f"conv weight {W.shape} does not match input {s}")
        if b.shape != (W.shape[0],):
            raise ShapeError(f"conv bias {b.shape} does not match {W.shape[0]} channels")
        ho, wo = _pool_out(s[1], s[2], W.shape[2:], node.attrs["strides"], node.attrs["pads"])
        return (W.shape[0], ho, wo)
    if k in (OpKind.MAXPOOL2D, OpKind.AVGPOOL2D):
        if len(s) != 3:
            raise ShapeError(f"pooling expects (C, H, W), got {s}")
        ho, wo = _pool_out(s[1], s[2], node.attrs["kernel"], node.attrs["strides"], node.attrs["pads"])
        return (s[0], ho, wo)
    if k is OpKind.BATCHNORM:
        a, b = c["scale"], c["shift"]
        if a.shape != (s[0],) or b.shape != (s[0],):
            raise ShapeError(f"batchnorm parameters {a.shape} do not match {s[0]} channels")
        return s
    if k in ELEMENTWISE:
        return s
    if k is OpKind.ADD:
        if len(in_shapes) == 2:
            if in_shapes[0] != in_shapes[1]:
                raise ShapeError(f"add of mismatched shapes {in_shapes[0]} and {in_shapes[1]}")
            return s
        addend = c["addend"]
        try:
            out = np.broadcast_shapes(tuple(s), addend.shape)
        except ValueError as exc:
            raise ShapeError(f"constant of shape {addend.shape} does not broadcast to {s}") from exc
        if tuple(out) != tuple(s):
            raise ShapeError(f"constant of shape {addend.shape} would enlarge {s}")
        return s
    if k is OpKind.FLATTEN:
        return (_prod(s),)
    if k is OpKind.RESHAPE:
        target = tuple(int(v) for v in node.attrs["shape"])
        if _prod(target) != _prod(s) or any(v <= 0 for v in target):
            raise ShapeError(f"cannot reshape {s} to {target}")
        return target
    raise ShapeError(f"unknown op kind {k}")


def _arity(kind: OpKind, node: OpNode) -> int:
    if kind is OpKind.ADD and "addend" not in node.constants:
        return 2
    return 1


def node_shapes(nodes: Sequence[OpNode], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Validate wiring and parameters of ``nodes`` in order; return each output shape."""
    if not input_shape or any(v <= 0 for v in input_shape):
        raise ShapeError(f"invalid input shape {input_shape}")
    shapes: list[tuple[int, ...]] = []
    for i, node in enumerate(nodes):
        if len(node.inputs) != _arity(node.kind, node):
            raise ShapeError(f"node {i} ({node.kind.value}) has {len(node.inputs)} inputs")
        for j in node.inputs:
            if not (j == GRAPH_INPUT or 0 <= j < i):
                raise ShapeError(f"node {i} reads node {j}, which is not earlier in the order")
        for key, arr in node.constants.items():
            if not (isinstance(arr, np.ndarray) and arr.dtype == np.float64 and not arr.flags.writeable):
                arr = np.array(arr, dtype=np.float64)
                arr.setflags(write=False)
                node.constants[key] = arr
        in_shapes = [tuple(input_shape) if j == GRAPH_INPUT else shapes[j] for j in node.inputs]
        node.out_shape = infer_shape(node, in_shapes)
        shapes.append(node.out_shape)
    return shapes


class NetworkGraph:
    """Immutable single-input single-output DAG in topological order.

    Node ``i`` may read the graph input (index ``-1``) or any node ``j < i``;
    the last node is the output.
    """

    def __init__(self, nodes: Sequence[OpNode], input_shape: Sequence[int]):
        self.nodes: tuple[OpNode, ...] = tuple(nodes)
        self.input_shape = tuple(int(v) for v in input_shape)
        shapes = node_shapes(self.nodes, self.input_shape)
        self._check_reachable()
        self.output_shape = shapes[-1] if shapes else self.input_shape

    def _check_reachable(self) -> None:
        if not self.nodes:
            return
        live = {len(self.nodes) - 1}
        for i in range(len(self.nodes) - 1, -1, -1):
            if i in live:
                live.update(j for j in self.nodes[i].inputs if j != GRAPH_INPUT)
        dead = [i for i in range(len(self.nodes)) if i not in live]
        if dead:
            raise ShapeError(f"nodes {dead} do not contribute to the output")

    @property
    def d_in(self) -> int:
        return _prod(self.input_shape)

    @property
    def d_out(self) -> int:
        return _prod(self.output_shape)

    def __len__(self) -> int:
        return len(self.nodes)

    def summary(self) -> str:
        lines = [f"input {self.input_shape} (d_in={self.d_in})"]
        for i, n in enumerate(self.nodes):
            src = ",".join("in" if j == GRAPH_INPUT else str(j) for j in n.inputs)
            lines.append(f"  [{i}] {n.kind.value:<9} <- {src:<6} -> {n.out_shape}")
        lines.append(f"output {self.output_shape} (d_out={self.d_out})")
        return "\n".join(lines)


class GraphBuilder:
    """Incremental construction helper: ``h = b.add(kind, [b.input], ...)``."""

    input = GRAPH_INPUT

    def __init__(self, input_shape: Sequence[int]):
        self.input_shape = tuple(input_shape)
        self.nodes: list[OpNode] = []

    def add(self, kind: OpKind, inputs: Sequence[int], name: str = "", **params) -> int:
        attrs = {k: v for k, v in params.items() if not isinstance(v, np.ndarray)}
        consts = {k: v for k, v in params.items() if isinstance(v, np.ndarray)}
        self.nodes.append(OpNode(kind, tuple(inputs), attrs, consts, name=name))
        return len(self.nodes) - 1

    def last(self) -> int:
        return len(self.nodes) - 1 if self.nodes else GRAPH_INPUT

    def build(self) -> NetworkGraph:
        return NetworkGraph(self.nodes, self.input_shape)


# ----------------------------------------------------------------------------
# concrete kernels (batched)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int):
    """Yield ``(u, v, patch)`` in row-major window order; patch is ``(B, C, ho, wo)``."""
    for u in range(kh):
        for v in range(kw):
            yield u, v, xp[:, :, u:u + sh * (ho - 1) + 1:sh, v:v + sw * (wo - 1) + 1:sw]


def _pad(x: np.ndarray, pads, value: float = 0.0) -> np.ndarray:
    pt, pl, pb, pr = pads
    if not any(pads):
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=value)


def conv2d(x: np.ndarray, W: np.ndarray, b: np.ndarray, strides, pads) -> np.ndarray:
    B, C, H, Wd = x.shape
    co, _, kh, kw = W.shape
    sh, sw = strides
    ho, wo = _pool_out(H, Wd, (kh, kw), strides, pads)
    xp = _pad(x, pads)
    acc = np.zeros((B, co, ho, wo))
    for c in range(C):
        for u, v, patch in _windows(xp[:, c:c + 1], kh, kw, sh, sw, ho, wo):
            acc += W[:, c, u, v][None, :, None, None] * patch
    acc += b[None, :, None, None]
    return acc


def conv2d_interval(L, U, W, b, strides, pads):
    B, C, H, Wd = L.shape
    co, _, kh, kw = W.shape
    sh, sw = strides
    ho, wo = _pool_out(H, Wd, (kh, kw), strides, pads)
    Lp, Up = _pad(L, pads), _pad(U, pads)
    lo = np.zeros((B, co, ho, wo))
    hi = np.zeros((B, co, ho, wo))
    for c in range(C):
        wins_l = _windows(Lp[:, c:c + 1], kh, kw, sh, sw, ho, wo)
        wins_u = _windows(Up[:, c:c + 1], kh, kw, sh, sw, ho, wo)
        for (u, v, pl_), (_, _, pu) in zip(wins_l, wins_u):
            w = W[:, c, u, v][None, :, None, None]
            wl, wu = w * pl_, w * pu
            pos = w >= 0.0
            lo += np.where(pos, wl, wu)
            hi += np.where(pos, wu, wl)
    lo += b[None, :, None, None]
    hi += b[None, :, None, None]
    return lo, hi


def maxpool2d(x: np.ndarray, kernel, strides, pads, return_index: bool = False):
    kh, kw = kernel
    sh, sw = strides
    ho, wo = _pool_out(x.shape[2], x.shape[3], kernel, strides, pads)
    xp = _pad(x, pads, -np.inf)
    stack = np.stack([p for _, _, p in _windows(xp, kh, kw, sh, sw, ho, wo)], axis=-1)
    idx = np.argmax(stack, axis=-1)  # first maximum wins
    out = np.take_along_axis(stack, idx[..., None], axis=-1)[..., 0]
    return (out, idx) if return_index else out


def avgpool2d(x: np.ndarray, kernel, strides, pads, include_pad: bool = False) -> np.ndarray:
    kh, kw = kernel
    sh, sw = strides
    ho, wo = _pool_out(x.shape[2], x.shape[3], kernel, strides, pads)
    xp = _pad(x, pads)
    acc = np.zeros(x.shape[:2] + (ho, wo))
    for _, _, p in _windows(xp, kh, kw, sh, sw, ho, wo):
        acc += p
    return acc / _pool_count(x.shape[2:], kernel, strides, pads, include_pad)


def _pool_count(hw, kernel, strides, pads, include_pad: bool) -> np.ndarray:
    kh, kw = kernel
    sh, sw = strides
    ho, wo = _pool_out(hw[0], hw[1], kernel, strides, pads)
    if include_pad:
        return np.full((1, 1, ho, wo), float(kh * kw))
    mask = _pad(np.ones((1, 1) + tuple(hw)), pads)
    cnt = np.zeros((1, 1, ho, wo))
    for _, _, p in _windows(mask, kh, kw, sh, sw, ho, wo):
        cnt += p
    return cnt


def sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _bn_view(arr: np.ndarray, ndim: int) -> np.ndarray:
    """Per-channel parameters shaped for a batched tensor with ``ndim`` dims."""
    return arr.reshape((1, -1) + (1,) * (ndim - 2))


def _apply(node: OpNode, args: list[np.ndarray]) -> np.ndarray:
    k = node.kind
    x = args[0]
    B = x.shape[0]
    c = node.constants
    a = node.attrs
    if k is OpKind.DENSE:
        return kernels.dense_forward(x, c["weight"], c["bias"])
    if k is OpKind.CONV2D:
        return conv2d(x, c["weight"], c["bias"], a["strides"], a["pads"])
    if k is OpKind.RELU:
        return np.where(x > 0.0, x, 0.0)
    if k is OpKind.SIGMOID:
        return sigmoid(x)
    if k is OpKind.TANH:
        return np.tanh(x)
    if k is OpKind.MAXPOOL2D:
        return maxpool2d(x, a["kernel"], a["strides"], a["pads"])
    if k is OpKind.AVGPOOL2D:
        return avgpool2d(x, a["kernel"], a["strides"], a["pads"], a.get("count_include_pad", False))
    if k is OpKind.BATCHNORM:
        return x * _bn_view(c["scale"], x.ndim) + _bn_view(c["shift"], x.ndim)
    if k is OpKind.ADD:
        other = args[1] if len(args) == 2 else c["addend"][None]
        return x + other
    if k is OpKind.FLATTEN:
        return x.reshape(B, -1)
    if k is OpKind.RESHAPE:
        return x.reshape((B,) + node.out_shape)
    raise AssertionError(k)


def forward(net: NetworkGraph, X: np.ndarray) -> list[np.ndarray]:
    """All intermediate values for a batch ``X`` of shape ``(B, d_in)``; last entry is the output."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_in:
        raise DimensionMismatch(f"expected inputs of width {net.d_in}, got array of shape {X.shape}")
    x0 = X.reshape((X.shape[0],) + net.input_shape)
    values: list[np.ndarray] = []
    for node in net.nodes:
        args = [x0 if j == GRAPH_INPUT else values[j] for j in node.inputs]
        values.append(_apply(node, args))
    if not values:
        values.append(x0)
    return values


def evaluate_batch(net: NetworkGraph, X: np.ndarray) -> np.ndarray:
    out = forward(net, X)[-1]
    return out.reshape(out.shape[0], -1)


def evaluate(net: NetworkGraph, x: Sequence[float]) -> np.ndarray:
    """N(x) for a single input vector of length ``d_in``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.d_in,):
        raise DimensionMismatch(f"expected input of length {net.d_in}, got shape {x.shape}")
    return evaluate_batch(net, x[None, :])[0]


# ----------------------------------------------------------------------------
# reverse mode


def _conv2d_vjp(g: np.ndarray, W: np.ndarray, in_shape, strides, pads) -> np.ndarray:
    B = g.shape[0]
    C, H, Wd = in_shape
    _, _, kh, kw = W.shape
    sh, sw = strides
    pt, pl, pb, pr = pads
    ho, wo = g.shape[2:]
    gp = np.zeros((B, C, H + pt + pb, Wd + pl + pr))
    for u in range(kh):
        for v in range(kw):
            # (B, co, ho, wo) x (co, C) -> (B, C, ho, wo)
            contrib = np.einsum("bohw,oc->bchw", g, W[:, :, u, v])
            gp[:, :, u:u + sh * (ho - 1) + 1:sh, v:v + sw * (wo - 1) + 1:sw] += contrib
    return gp[:, :, pt:pt + H, pl:pl + Wd]


def _pool_vjp(g, x, node: OpNode) -> np.ndarray:
    a = node.attrs
    kh, kw = a["kernel"]
    sh, sw = a["strides"]
    pt, pl, pb, pr = a["pads"]
    B, C, H, Wd = x.shape
    ho, wo = g.shape[2:]
    gp = np.zeros((B, C, H + pt + pb, Wd + pl + pr))
    if node.kind is OpKind.MAXPOOL2D:
        _, idx = maxpool2d(x, a["kernel"], a["strides"], a["pads"], return_index=True)
        k = 0
        for u in range(kh):
            for v in range(kw):
                gp[:, :, u:u + sh * (ho - 1) + 1:sh, v:v + sw * (wo - 1) + 1:sw] += np.where(idx == k, g, 0.0)
                k += 1
    else:
        gd = g / _pool_count((H, Wd), a["kernel"], a["strides"], a["pads"], a.get("count_include_pad", False))
        for u in range(kh):
            for v in range(kw):
                gp[:, :, u:u + sh * (ho - 1) + 1:sh, v:v + sw * (wo - 1) + 1:sw] += gd
    return gp[:, :, pt:pt + H, pl:pl + Wd]


def _vjp(node: OpNode, args: list[np.ndarray], out: np.ndarray, g: np.ndarray) -> list[np.ndarray]:
    k = node.kind
    c = node.constants
    x = args[0]
    if k is OpKind.DENSE:
        return [g @ c["weight"]]
    if k is OpKind.CONV2D:
        return [_conv2d_vjp(g, c["weight"], x.shape[1:], node.attrs["strides"], node.attrs["pads"])]
    if k is OpKind.RELU:
        return [np.where(x > 0.0, g, 0.0)]
    if k is OpKind.SIGMOID:
        return [g * out * (1.0 - out)]
    if k is OpKind.TANH:
        return [g * (1.0 - out * out)]
    if k in (OpKind.MAXPOOL2D, OpKind.AVGPOOL2D):
        return [_pool_vjp(g, x, node)]
    if k is OpKind.BATCHNORM:
        return [g * _bn_view(c["scale"], g.ndim)]
    if k is OpKind.ADD:
        return [g, g] if len(args) == 2 else [g]
    if k in (OpKind.FLATTEN, OpKind.RESHAPE):
        return [g.reshape(x.shape)]
    raise AssertionError(k)


def vjp_batch(net: NetworkGraph, X: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Row-wise ``cotangent @ J(x)`` for a batch; returns ``(B, d_in)``."""
    values = forward(net, X)
    B = values[-1].shape[0]
    x0 = np.asarray(X, dtype=np.float64).reshape((B,) + net.input_shape)
    cot = np.asarray(cotangent, dtype=np.float64).reshape(values[-1].shape)
    if not net.nodes:
        return cot.reshape(B, -1)
    grads: list[np.ndarray | None] = [None] * len(net.nodes)
    grads[-1] = cot
    g_in = np.zeros_like(x0)
    for i in range(len(net.nodes) - 1, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = net.nodes[i]
        args = [x0 if j == GRAPH_INPUT else values[j] for j in node.inputs]
        for j, gj in zip(node.inputs, _vjp(node, args, values[i], g)):
            if j == GRAPH_INPUT:
                g_in += gj
            elif grads[j] is None:
                grads[j] = gj
            else:
                grads[j] = grads[j] + gj
    return g_in.reshape(B, -1)


def objective_vector(net: NetworkGraph, objective) -> np.ndarray:
    """Output-space coefficients of an objective: an output index or a linear constraint's left side."""
    vec = np.zeros(net.d_out)
    if isinstance(objective, (int, np.integer)):
        if not 0 <= objective < net.d_out:
            raise DimensionMismatch(f"output index {objective} out of range for {net.d_out} outputs")
        vec[int(objective)] = 1.0
        return vec
    for coef, var in objective.terms:
        if var.index >= net.d_out:
            raise DimensionMismatch(f"{var} out of range for {net.d_out} outputs")
        vec[var.index] += coef
    return vec


def input_gradient(net: NetworkGraph, x: Sequence[float], objective) -> np.ndarray:
    """Gradient w.r.t. ``x`` of an output index or of a constraint's left-hand side."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.d_in,):
        raise DimensionMismatch(f"expected input of length {net.d_in}, got shape {x.shape}")
    return vjp_batch(net, x[None, :], objective_vector(net, objective)[None, :])[0]
