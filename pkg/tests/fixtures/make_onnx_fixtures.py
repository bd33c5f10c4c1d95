"""Regenerate the binary ONNX fixtures and their text-format twins.

Models are emitted with the ``onnx`` package (independent of the loader
under test) and each one is executed once with onnxruntime so the fixture
is known to be a valid model before it is committed. Run from the repo root:

    python tests/fixtures/make_onnx_fixtures.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import onnx
import onnxruntime as ort
from onnx import TensorProto, helper, numpy_helper

HERE = Path(__file__).parent / "nets"


def _f32(a):
    return np.asarray(a, dtype=np.float32)


def _txt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=np.float32).ravel())


def _model(nodes, inits, in_shape, out_shape, name):
    graph = helper.make_graph(
        nodes,
        name,
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, in_shape)],
        [helper.make_tensor_value_info("y", TensorProto.FLOAT, out_shape)],
        initializer=[numpy_helper.from_array(v, k) for k, v in inits.items()],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    return model


def _save(model, stem: str, in_shape) -> None:
    path = HERE / f"{stem}.onnx"
    path.write_bytes(model.SerializeToString())
    sess = ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
    x = np.random.default_rng(0).uniform(-1, 1, size=in_shape).astype(np.float32)
    sess.run(None, {"x": x})


def ffnn_222():
    W1, b1 = _f32([[1, -1], [0.5, 2]]), _f32([0, 0])
    W2, b2 = _f32([[1, 1], [-1, 1]]), _f32([0, 0.5])
    nodes = [
        helper.make_node("Gemm", ["x", "W1", "b1"], ["h"], transB=1),
        helper.make_node("Relu", ["h"], ["r"]),
        helper.make_node("Gemm", ["r", "W2", "b2"], ["y"], transB=1),
    ]
    _save(_model(nodes, {"W1": W1, "b1": b1, "W2": W2, "b2": b2}, [1, 2], [1, 2], "ffnn_222"), "ffnn_222", (1, 2))
    # MatMul + Add spelling of the same network
    nodes = [
        helper.make_node("MatMul", ["x", "W1t"], ["m1"]),
        helper.make_node("Add", ["m1", "b1"], ["h"]),
        helper.make_node("Relu", ["h"], ["r"]),
        helper.make_node("MatMul", ["r", "W2t"], ["m2"]),
        helper.make_node("Add", ["m2", "b2"], ["y"]),
    ]
    inits = {"W1t": W1.T.copy(), "b1": b1, "W2t": W2.T.copy(), "b2": b2}
    _save(_model(nodes, inits, [1, 2], [1, 2], "ffnn_222_matmul"), "ffnn_222_matmul", (1, 2))


def conv_stride2():
    K = _f32([[[[1, 2], [3, 4]]]])
    nodes = [
        helper.make_node("Conv", ["x", "K", "kb"], ["c"], strides=[2, 2], kernel_shape=[2, 2]),
        helper.make_node("Flatten", ["c"], ["y"], axis=1),
    ]
    _save(_model(nodes, {"K": K, "kb": _f32([0.5])}, [1, 1, 4, 4], [1, 4], "conv"), "conv_stride2", (1, 1, 4, 4))
    text = "\n".join(["inputs 1 4 4", "outputs 4", "conv 1 1 2 2 2 2", _txt(K), _txt([0.5]), "flatten"]) + "\n"
    (HERE / "conv_stride2.txt").write_text(text)


def residual():
    rng = np.random.default_rng(7)
    K1 = _f32(rng.normal(size=(2, 1, 3, 3)) * 0.5)
    c1 = _f32(rng.normal(size=2) * 0.1)
    K2 = _f32(rng.normal(size=(1, 2, 3, 3)) * 0.5)
    c2 = _f32(rng.normal(size=1) * 0.1)
    W = _f32(rng.normal(size=(3, 16)) * 0.3)
    b = _f32(rng.normal(size=3) * 0.1)
    nodes = [
        helper.make_node("Conv", ["x", "K1", "c1"], ["a"], kernel_shape=[3, 3], pads=[1, 1, 1, 1]),
        helper.make_node("Relu", ["a"], ["ar"]),
        helper.make_node("Conv", ["ar", "K2", "c2"], ["bb"], kernel_shape=[3, 3], pads=[1, 1, 1, 1]),
        helper.make_node("Add", ["bb", "x"], ["s"]),
        helper.make_node("Relu", ["s"], ["sr"]),
        helper.make_node("Flatten", ["sr"], ["f"]),
        helper.make_node("Gemm", ["f", "W", "b"], ["y"], transB=1),
    ]
    inits = {"K1": K1, "c1": c1, "K2": K2, "c2": c2, "W": W, "b": b}
    _save(_model(nodes, inits, [1, 1, 4, 4], [1, 3], "residual"), "residual", (1, 1, 4, 4))
    text = "\n".join([
        "inputs 1 4 4", "outputs 3", "mark skip",
        "conv 2 1 3 3 1 1 1 1 1 1", _txt(K1), _txt(c1), "relu",
        "conv 1 2 3 3 1 1 1 1 1 1", _txt(K2), _txt(c2), "add skip", "relu", "flatten",
        "dense 3 16", *(_txt(row) for row in W), _txt(b),
    ]) + "\n"
    (HERE / "residual.txt").write_text(text)


def mixed_ops():
    """Every supported operator at least once, smooth activations for gradient checks."""
    rng = np.random.default_rng(11)
    K = _f32(rng.normal(size=(2, 1, 2, 2)))
    kb = _f32(rng.normal(size=2) * 0.1)
    scale, bias = _f32([1.5, 0.7]), _f32([0.1, -0.2])
    mean, var = _f32([0.05, -0.1]), _f32([0.9, 1.3])
    W = _f32(rng.normal(size=(8, 3)) * 0.4)
    bW = _f32(rng.normal(size=3) * 0.1)
    nodes = [
        helper.make_node("Conv", ["x", "K", "kb"], ["c"], kernel_shape=[2, 2], pads=[0, 0, 1, 1]),
        helper.make_node("BatchNormalization", ["c", "scale", "bias", "mean", "var"], ["bn"], epsilon=1e-3),
        helper.make_node("Tanh", ["bn"], ["t"]),
        helper.make_node("AveragePool", ["t"], ["ap"], kernel_shape=[2, 2], strides=[1, 1]),
        helper.make_node("MaxPool", ["ap"], ["mp"], kernel_shape=[2, 2], strides=[1, 1]),
        helper.make_node("Sigmoid", ["mp"], ["s"]),
        helper.make_node("Reshape", ["s", "shape"], ["r"]),
        helper.make_node("MatMul", ["r", "W"], ["m"]),
        helper.make_node("Add", ["m", "bW"], ["y"]),
    ]
    inits = {"K": K, "kb": kb, "scale": scale, "bias": bias, "mean": mean, "var": var,
             "shape": np.array([1, 8], dtype=np.int64), "W": W, "bW": bW}
    _save(_model(nodes, inits, [1, 1, 4, 4], [1, 3], "mixed"), "mixed_ops", (1, 1, 4, 4))


def softmax():
    nodes = [
        helper.make_node("Gemm", ["x", "W", "b"], ["h"], transB=1),
        helper.make_node("Softmax", ["h"], ["y"], axis=1),
    ]
    inits = {"W": _f32(np.eye(2)), "b": _f32([0, 0])}
    _save(_model(nodes, inits, [1, 2], [1, 2], "softmax"), "softmax", (1, 2))


if __name__ == "__main__":
    HERE.mkdir(exist_ok=True)
    ffnn_222()
    conv_stride2()
    residual()
    mixed_ops()
    softmax()
    print("fixtures written to", HERE)
