"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import re
from fractions import Fraction
from pathlib import Path

import numpy as np

from vnn_arena.netio import GraphBuilder, OpKind

FIXTURES = Path(__file__).parent / "fixtures"
NETS = FIXTURES / "nets"
VNNLIB = FIXTURES / "vnnlib"

ACTS = {"relu": OpKind.RELU, "sigmoid": OpKind.SIGMOID, "tanh": OpKind.TANH}


def random_mlp(rng, d_in, widths, d_out, acts=("relu",), scale=1.0):
    """Dense layers of the given widths, each followed by an activation drawn from ``acts``."""
    b = GraphBuilder((d_in,))
    prev, width = -1, d_in
    for h in widths:
        prev = b.add(OpKind.DENSE, [prev], weight=rng.normal(size=(h, width)) * scale / np.sqrt(width),
                     bias=rng.normal(size=h) * 0.3)
        prev = b.add(ACTS[acts[int(rng.integers(len(acts)))]], [prev])
        width = h
    b.add(OpKind.DENSE, [prev], weight=rng.normal(size=(d_out, width)) / np.sqrt(width),
          bias=rng.normal(size=d_out) * 0.3)
    return b.build()


def dense_net(W, b=None):
    W = np.asarray(W, dtype=float)
    g = GraphBuilder((W.shape[1],))
    g.add(OpKind.DENSE, [-1], weight=W, bias=np.zeros(W.shape[0]) if b is None else np.asarray(b, float))
    return g.build()


# ----------------------------------------------------------------------------
# independent VNN-LIB semantics: evaluates the original assertions directly


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _read(text):
    text = "\n".join(line.split(";", 1)[0] for line in text.splitlines())
    toks = _TOKEN.findall(text)
    pos = 0

    def form():
        nonlocal pos
        t = toks[pos]
        pos += 1
        if t != "(":
            return t
        out = []
        while toks[pos] != ")":
            out.append(form())
        pos += 1
        return out

    forms = []
    while pos < len(toks):
        forms.append(form())
    return forms


def assertions(text):
    return [f[1] for f in _read(text) if isinstance(f, list) and f[0] == "assert"]


def _term(t, env):
    if isinstance(t, str):
        # literals are binary64, matching the parser
        return env[t] if t in env else Fraction(float(t))
    op, args = t[0], [_term(a, env) for a in t[1:]]
    if op == "+":
        return sum(args, Fraction(0))
    if op == "-":
        return -args[0] if len(args) == 1 else args[0] - sum(args[1:], Fraction(0))
    if op == "*":
        out = Fraction(1)
        for a in args:
            out *= a
        return out
    raise ValueError(op)


def holds(f, env):
    op = f[0]
    if op == "and":
        return all(holds(g, env) for g in f[1:])
    if op == "or":
        return any(holds(g, env) for g in f[1:])
    vals = [_term(a, env) for a in f[1:]]
    if op == "<=":
        return all(a <= b for a, b in zip(vals, vals[1:]))
    if op == ">=":
        return all(a >= b for a, b in zip(vals, vals[1:]))
    raise ValueError(op)


def text_satisfied(text, x, y):
    """Exact rational evaluation of every top-level assertion."""
    env = {f"X_{i}": Fraction(float(v)) for i, v in enumerate(x)}
    env.update({f"Y_{j}": Fraction(float(v)) for j, v in enumerate(y)})
    return all(holds(f, env) for f in assertions(text))


# ----------------------------------------------------------------------------
# smooth-region detection for finite-difference checks


def kink_distance(net, x):
    """Smallest distance of any ReLU pre-activation from 0 or MaxPool top-2 gap at ``x``."""
    from vnn_arena.netio import GRAPH_INPUT, forward

    vals = forward(net, np.asarray(x, float)[None])
    x0 = np.asarray(x, float).reshape((1,) + net.input_shape)
    best = np.inf
    for i, node in enumerate(net.nodes):
        arg = x0 if node.inputs[0] == GRAPH_INPUT else vals[node.inputs[0]]
        if node.kind is OpKind.RELU:
            best = min(best, float(np.min(np.abs(arg))))
        elif node.kind is OpKind.MAXPOOL2D:
            kh, kw = node.attrs["kernel"]
            sh, sw = node.attrs["strides"]
            pt, pl, pb, pr = node.attrs["pads"]
            a = np.pad(arg[0], ((0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
            _, ho, wo = node.out_shape
            for c in range(a.shape[0]):
                for r in range(ho):
                    for s in range(wo):
                        win = np.sort(a[c, r * sh:r * sh + kh, s * sw:s * sw + kw].ravel())[::-1]
                        if len(win) > 1 and np.isfinite(win[1]):
                            best = min(best, float(win[0] - win[1]))
    return best


def central_difference(net, x, c, h=1e-6):
    from vnn_arena.netio import evaluate_batch

    x = np.asarray(x, float)
    E = np.eye(len(x)) * h
    Xp, Xm = x + E, x - E
    return (evaluate_batch(net, Xp) @ c - evaluate_batch(net, Xm) @ c) / (2 * h)


# ----------------------------------------------------------------------------
# random scoring scenarios

SCORING = FIXTURES / "scoring"


def random_scenario(rng):
    """Random verdict records plus instance metadata for one campaign."""
    from vnn_arena.runner import InstanceRecord, RunStatus, VerdictRecord

    tools = [f"t{i}" for i in range(int(rng.integers(1, 6)))]
    benches = [f"b{i}" for i in range(int(rng.integers(1, 4)))]
    statuses = list(RunStatus)
    verdicts = ["Valid", "InvalidOutput", "InvalidInput", "Malformed"]
    records, instances = [], []
    for b in benches:
        for i in range(int(rng.integers(1, 7))):
            oracle = str(rng.choice(["", "", "sat", "unsat"]))
            instances.append(InstanceRecord(b, i, simple_sat=bool(rng.random() < 0.3), oracle=oracle))
            for t in tools:
                if rng.random() < 0.1:
                    continue
                st = statuses[int(rng.integers(len(statuses)))]
                # coarse times so that ties and near-ties are common
                adj = float(rng.choice([0.1, 0.5, 0.95, 1.0, 1.1, 1.25, 2.0, 5.0]))
                wv = str(rng.choice(verdicts)) if st is RunStatus.SAT else ""
                records.append(VerdictRecord(t, b, i, st, adj + 0.2, adj, 0.2, witness_verdict=wv))
    return tools, benches, records, instances
