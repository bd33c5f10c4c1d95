"""Interval bound propagation and interval refutation of output constraints."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import DimensionMismatch
from ..netio.graph import (
    GRAPH_INPUT,
    NetworkGraph,
    OpKind,
    _bn_view,
    avgpool2d,
    conv2d_interval,
    maxpool2d,
    sigmoid,
)
from ..speclang import InputBox, LinearConstraint, Relation

_EPS = 2.0 ** -53


@dataclass(frozen=True)
class IntervalVector:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise DimensionMismatch("interval bounds differ in shape")

    def __len__(self) -> int:
        return len(self.lower)

    def contains(self, y: np.ndarray, slack: float = 0.0) -> bool:
        return bool(np.all(y >= self.lower - slack) and np.all(y <= self.upper + slack))


def _interval_op(node, args):
    k = node.kind
    c = node.constants
    a = node.attrs
    L, U = args[0]
    if k is OpKind.DENSE:
        return kernels.dense_interval(L, U, c["weight"], c["bias"])
    if k is OpKind.CONV2D:
        return conv2d_interval(L, U, c["weight"], c["bias"], a["strides"], a["pads"])
    if k is OpKind.RELU:
        return np.maximum(L, 0.0), np.maximum(U, 0.0)
    if k is OpKind.SIGMOID:
        return sigmoid(L), sigmoid(U)
    if k is OpKind.TANH:
        return np.tanh(L), np.tanh(U)
    if k is OpKind.MAXPOOL2D:
        return (maxpool2d(L, a["kernel"], a["strides"], a["pads"]),
                maxpool2d(U, a["kernel"], a["strides"], a["pads"]))
    if k is OpKind.AVGPOOL2D:
        inc = a.get("count_include_pad", False)
        return (avgpool2d(L, a["kernel"], a["strides"], a["pads"], inc),
                avgpool2d(U, a["kernel"], a["strides"], a["pads"], inc))
    if k is OpKind.BATCHNORM:
        s = _bn_view(c["scale"], L.ndim)
        t = _bn_view(c["shift"], L.ndim)
        lo, hi = L * s + t, U * s + t
        return np.where(s >= 0.0, lo, hi), np.where(s >= 0.0, hi, lo)
    if k is OpKind.ADD:
        if len(args) == 2:
            return L + args[1][0], U + args[1][1]
        return L + c["addend"][None], U + c["addend"][None]
    if k is OpKind.FLATTEN:
        return L.reshape(L.shape[0], -1), U.reshape(U.shape[0], -1)
    if k is OpKind.RESHAPE:
        shape = (L.shape[0],) + node.out_shape
        return L.reshape(shape), U.reshape(shape)
    raise AssertionError(k)


def ibp_batch(net: NetworkGraph, L: np.ndarray, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Output bounds for a batch of input boxes given as ``(B, d_in)`` arrays."""
    L = np.asarray(L, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if L.ndim != 2 or L.shape[1] != net.d_in or U.shape != L.shape:
        raise DimensionMismatch(f"expected boxes of width {net.d_in}, got {L.shape} / {U.shape}")
    B = L.shape[0]
    x0 = (L.reshape((B,) + net.input_shape), U.reshape((B,) + net.input_shape))
    vals = []
    for node in net.nodes:
        args = [x0 if j == GRAPH_INPUT else vals[j] for j in node.inputs]
        vals.append(_interval_op(node, args))
    lo, hi = vals[-1] if vals else x0
    return lo.reshape(B, -1), hi.reshape(B, -1)


def ibp_bounds(net: NetworkGraph, box: InputBox) -> IntervalVector:
    """Sound elementwise output intervals for every input in ``box``."""
    if box.dim != net.d_in:
        raise DimensionMismatch(f"box has dimension {box.dim}, network expects {net.d_in}")
    lo, hi = box.arrays()
    L, U = ibp_batch(net, lo[None], hi[None])
    return IntervalVector(L[0], U[0])


def max_slack_exact(A_row: np.ndarray, c: float, lo: np.ndarray, hi: np.ndarray) -> Fraction:
    """Exact rational maximum of ``A_row @ y - c`` over the box ``[lo, hi]``."""
    total = Fraction(0)
    for a, l, u in zip(A_row, lo, hi):
        if a > 0:
            total += Fraction(float(a)) * Fraction(float(u))
        elif a < 0:
            total += Fraction(float(a)) * Fraction(float(l))
    return total - Fraction(float(c))


def refuted_mask(lo: np.ndarray, hi: np.ndarray, A: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Per box (rows of ``lo``/``hi``): does interval arithmetic prove some slack row negative?

    Slack rows are ``A @ y - c >= 0``. The float estimate is trusted only
    outside a rounding-error margin; borderline cases are settled exactly.
    """
    B = lo.shape[0]
    if A.shape[0] == 0:
        return np.zeros(B, dtype=bool)
    Ap = np.maximum(A, 0.0)
    An = np.minimum(A, 0.0)
    terms = hi[:, None, :] * Ap[None] + lo[:, None, :] * An[None]  # (B, K, d)
    est = terms.sum(axis=2) - c[None]
    margin = (A.shape[1] + 2) * 4 * _EPS * (np.abs(terms).sum(axis=2) + np.abs(c)[None])
    neg = est < -margin
    unsure = ~neg & (est <= margin)
    for b, k in zip(*np.nonzero(unsure)):
        neg[b, k] = max_slack_exact(A[k], c[k], lo[b], hi[b]) < 0
    return neg.any(axis=1)


def decide_disjunct_unsat(bounds: IntervalVector, constraints: Sequence[LinearConstraint]) -> bool:
    """True when the output box provably violates some constraint (sound); False is inconclusive."""
    d_out = len(bounds)
    A = np.zeros((len(constraints), d_out))
    c = np.zeros(len(constraints))
    for k, con in enumerate(constraints):
        sign = 1.0 if con.relation is Relation.GE else -1.0
        for coef, var in con.terms:
            if var.index >= d_out:
                raise DimensionMismatch(f"{var} out of range for {d_out} outputs")
            A[k, var.index] += sign * coef
        c[k] = sign * con.bound
    return bool(refuted_mask(bounds.lower[None], bounds.upper[None], A, c)[0])
