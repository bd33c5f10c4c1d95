from fractions import Fraction

import numpy as np
import pytest

from helpers import NETS, dense_net, random_mlp
from vnn_arena.errors import DimensionMismatch
from vnn_arena.netio import evaluate_batch, load_network
from vnn_arena.refverify import IntervalVector, decide_disjunct_unsat, ibp_batch, ibp_bounds
from vnn_arena.refverify.ibp import max_slack_exact, refuted_mask
from vnn_arena.speclang import InputBox, LinearConstraint, Relation, VariableRef


def y0_ge(v):
    return LinearConstraint.make([(1.0, VariableRef.y(0))], Relation.GE, v)


def test_identity_box():
    b = ibp_bounds(load_network(NETS / "identity2.txt"), InputBox((0.0, 0.0), (1.0, 1.0)))
    assert list(b.lower) == [0.0, 0.0] and list(b.upper) == [1.0, 1.0]


def test_sign_split_dense():
    b = ibp_bounds(dense_net([[2.0, -1.0]], [0.0]), InputBox((0.0, 0.0), (1.0, 1.0)))
    assert (b.lower[0], b.upper[0]) == (-1.0, 2.0)


def test_222_grid_containment():
    net = load_network(NETS / "ffnn_222.txt")
    b = ibp_bounds(net, InputBox((0.0, 0.0), (1.0, 1.0)))
    g = np.linspace(0.0, 1.0, 101)
    X = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    Y = evaluate_batch(net, X)
    assert np.all(Y >= b.lower) and np.all(Y <= b.upper)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        ibp_bounds(load_network(NETS / "identity2.txt"), InputBox((0.0,), (1.0,)))


def test_decide_examples():
    assert decide_disjunct_unsat(IntervalVector(np.array([0.0]), np.array([0.4])), [y0_ge(0.5)])
    assert not decide_disjunct_unsat(IntervalVector(np.array([0.0]), np.array([0.6])), [y0_ge(0.5)])


def test_decide_le_form():
    le = LinearConstraint.make([(1.0, VariableRef.y(0))], Relation.LE, -0.1)
    assert decide_disjunct_unsat(IntervalVector(np.array([0.0]), np.array([1.0])), [le])
    assert not decide_disjunct_unsat(IntervalVector(np.array([-0.2]), np.array([1.0])), [le])


def test_decide_boundary_is_not_refuted():
    # the upper bound touches the constraint exactly: still feasible
    assert not decide_disjunct_unsat(IntervalVector(np.array([0.0]), np.array([0.5])), [y0_ge(0.5)])


def test_decide_agrees_with_exact_arithmetic():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        d, k = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        lo = rng.normal(size=d)
        hi = lo + np.abs(rng.normal(size=d)) * (rng.random() < 0.9)
        A = rng.normal(size=(k, d)) * (rng.random((k, d)) < 0.8)
        # aim some offsets right at the float maximum to exercise the exact path
        cmax = np.where(A > 0, A * hi, A * lo).sum(axis=1)
        c = cmax + rng.choice([0.0, 1e-17, -1e-17, 1e-3, -1e-3], size=k)
        expected = any(
            sum((Fraction(float(a)) * Fraction(float(u if a > 0 else l)) for a, l, u in zip(A[j], lo, hi)),
                Fraction(0)) - Fraction(float(c[j])) < 0
            for j in range(k)
        )
        assert bool(refuted_mask(lo[None], hi[None], A, c)[0]) == expected


def test_max_slack_exact_matches_hand_value():
    v = max_slack_exact(np.array([2.0, -1.0]), 0.5, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert v == Fraction(3, 2)


def test_random_net_soundness_small():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d_in = int(rng.integers(1, 5))
        widths = [int(w) for w in rng.integers(1, 17, size=int(rng.integers(0, 4)))]
        net = random_mlp(rng, d_in, widths, int(rng.integers(1, 4)), acts=("relu", "sigmoid", "tanh"))
        lo = rng.uniform(-1, 1, size=d_in)
        hi = lo + rng.uniform(0, 1, size=d_in)
        b = ibp_bounds(net, InputBox(tuple(lo), tuple(hi)))
        Y = evaluate_batch(net, rng.uniform(lo, hi, size=(500, d_in)))
        assert np.all(Y - b.lower >= -1e-9) and np.all(b.upper - Y >= -1e-9)


@pytest.mark.parametrize("name", ["conv_stride2.onnx", "residual.onnx", "mixed_ops.onnx"])
def test_graph_fixture_soundness(name):
    net = load_network(NETS / name)
    rng = np.random.default_rng(2)
    lo = rng.uniform(-1, 0, size=net.d_in)
    hi = lo + rng.uniform(0, 1, size=net.d_in)
    b = ibp_bounds(net, InputBox(tuple(lo), tuple(hi)))
    X = np.vstack([rng.uniform(lo, hi, size=(1000, net.d_in)), lo, hi])
    Y = evaluate_batch(net, X)
    assert np.all(Y - b.lower >= -1e-9) and np.all(b.upper - Y >= -1e-9)


def test_shrinking_box_never_widens():
    rng = np.random.default_rng(3)
    for _ in range(30):
        net = random_mlp(rng, 3, [8, 8], 2, acts=("relu", "tanh"))
        lo = rng.uniform(-1, 0, size=3)
        hi = lo + 1.0
        parent = ibp_bounds(net, InputBox(tuple(lo), tuple(hi)))
        a = rng.uniform(lo, hi)
        bb = rng.uniform(lo, hi)
        child = ibp_bounds(net, InputBox(tuple(np.minimum(a, bb)), tuple(np.maximum(a, bb))))
        assert np.all(child.lower >= parent.lower) and np.all(child.upper <= parent.upper)


def test_batch_matches_single():
    rng = np.random.default_rng(4)
    net = random_mlp(rng, 4, [10, 10], 3)
    L = rng.uniform(-1, 0, size=(16, 4))
    U = L + 0.3
    lo, hi = ibp_batch(net, L, U)
    for i in range(16):
        b = ibp_bounds(net, InputBox(tuple(L[i]), tuple(U[i])))
        assert np.array_equal(b.lower, lo[i]) and np.array_equal(b.upper, hi[i])
