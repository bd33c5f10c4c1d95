"""Seeded 2-input ReLU verification suite with exact ground truth.

Ground truth comes from enumerating the linear regions of the network over
the input box: the box polygon is clipped neuron by neuron into pieces on
which every pre-activation has a fixed sign. A continuous piecewise-linear
function attains its maximum over a polygon at a vertex of one of its pieces,
so evaluating the network at all piece vertices gives the exact maximum up to
float rounding. Instances whose margin is within 1e-6 of zero are redrawn.
"""

from dataclasses import dataclass

import numpy as np

from vnn_arena.netio import GraphBuilder, OpKind, evaluate_batch
from vnn_arena.speclang import RobustnessParams, make_robustness_query

MARGIN = 1e-6


def clip(poly, a, b):
    """Sutherland-Hodgman: part of convex ``poly`` where ``a @ x + b >= 0``."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = a @ p + b, a @ q + b
        if fp >= 0:
            out.append(p)
        if (fp >= 0) != (fq >= 0):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return out


def region_vertices(layers, lo, hi):
    """Vertices of all linear pieces of a Dense/ReLU stack over the box ``[lo, hi]``."""
    box = [np.array(v, float) for v in [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]]
    pieces = [(box, np.eye(2), np.zeros(2))]
    for W, bias in layers[:-1]:
        nxt = []
        for poly, A, c in pieces:
            sub = [(poly, W @ A, W @ c + bias)]
            for j in range(W.shape[0]):
                split = []
                for p, M, m in sub:
                    pos = clip(p, M[j], m[j])
                    neg = clip(p, -M[j], -m[j])
                    if len(pos) >= 3:
                        split.append((pos, M, m))
                    if len(neg) >= 3:
                        M2, m2 = M.copy(), m.copy()
                        M2[j] = 0.0
                        m2[j] = 0.0
                        split.append((neg, M2, m2))
                sub = split
            nxt += sub
        pieces = nxt
    V = np.array([v for poly, _, _ in pieces for v in poly])
    return np.clip(V, lo, hi)


@dataclass
class SuiteInstance:
    net: object
    query: object
    layers: list
    sat: bool
    margin: float
    seed: int


def exact_margin(net, layers, query):
    """max over disjuncts of the exact max slack (>= 0 means SAT)."""
    best = -np.inf
    for d in query.disjuncts:
        lo, hi = d.box.arrays()
        V = region_vertices(layers, lo, hi)
        Y = evaluate_batch(net, V)
        A, c = d.constraint_matrix(query.num_outputs)
        best = max(best, float(np.max(np.min(Y @ A.T - c, axis=1))))
    return best


def build(layers):
    b = GraphBuilder((2,))
    prev = -1
    for i, (W, bias) in enumerate(layers):
        prev = b.add(OpKind.DENSE, [prev], weight=W, bias=bias)
        if i < len(layers) - 1:
            prev = b.add(OpKind.RELU, [prev])
    return b.build()


def draw(seed):
    rng = np.random.default_rng([seed, 5])
    while True:
        n_hidden = int(rng.integers(1, 3))  # 1-2 hidden layers: at most 3 dense layers
        widths = [2] + [int(w) for w in rng.integers(3, 9, size=n_hidden)] + [3]
        layers = [(rng.normal(size=(o, i)) / np.sqrt(i), rng.normal(size=o) * 0.2)
                  for i, o in zip(widths, widths[1:])]
        net = build(layers)
        center = rng.uniform(-1, 1, size=2)
        target = int(np.argmax(evaluate_batch(net, center[None])[0]))
        eps = float(rng.choice([0.05, 0.1, 0.2, 0.4, 0.8, 1.2]))
        query = make_robustness_query(RobustnessParams(tuple(center), eps, target), 2, 3)
        m = exact_margin(net, layers, query)
        if abs(m) >= MARGIN:
            return SuiteInstance(net, query, layers, m >= 0, m, seed)


def suite(n=50):
    return [draw(s) for s in range(n)]


def grid_sat(inst, n=201):
    """Does any point of an n x n grid over some disjunct box satisfy the query?"""
    q = inst.query
    for d in q.disjuncts:
        lo, hi = d.box.arrays()
        g0, g1 = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
        X = np.array(np.meshgrid(g0, g1)).reshape(2, -1).T
        A, c = d.constraint_matrix(q.num_outputs)
        if np.any(np.min(evaluate_batch(inst.net, X) @ A.T - c, axis=1) >= 0):
            return True
    return False
