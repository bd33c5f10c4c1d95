"""Seeded generator for a small desk-scale benchmark.

Four random ReLU networks (2 to 5 inputs, two hidden layers, three outputs)
each get a tight and a loose robustness property plus an ACAS-style
"output 0 is minimal" unsafe-set property, for twelve instances in total.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .netio import GraphBuilder, NetworkGraph, OpKind, evaluate, save_onnx
from .speclang import (
    InputBox,
    RobustnessParams,
    make_robustness_query,
    make_unsafe_set_query,
    minimal_output_conjunct,
    print_vnnlib,
)

DESK_INPUT_DIMS = (2, 3, 4, 5)
DESK_HIDDEN = 10
DESK_OUTPUTS = 3


def random_relu_net(rng: np.random.Generator, d_in: int, hidden: list[int], d_out: int) -> NetworkGraph:
    b = GraphBuilder((d_in,))
    prev, width = -1, d_in
    for h in hidden:
        W = rng.normal(size=(h, width)) / np.sqrt(width)
        prev = b.add(OpKind.DENSE, [prev], weight=W, bias=rng.normal(size=h) * 0.1)
        prev = b.add(OpKind.RELU, [prev])
        width = h
    b.add(OpKind.DENSE, [prev], weight=rng.normal(size=(d_out, width)) / np.sqrt(width),
          bias=rng.normal(size=d_out) * 0.1)
    return b.build()


def write_desk_benchmark(directory, seed: int = 0, timeout: float = 30.0) -> Path:
    """Write networks, properties and ``instances.csv``; returns the CSV path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 2022])
    lines = ["# desk benchmark: network,property,timeout"]
    for n, d_in in enumerate(DESK_INPUT_DIMS):
        net = random_relu_net(rng, d_in, [DESK_HIDDEN, DESK_HIDDEN], DESK_OUTPUTS)
        net_name = f"net{n}.onnx"
        save_onnx(net, out / net_name)
        center = tuple(float(v) for v in np.round(rng.uniform(-1, 1, size=d_in), 3))
        target = int(np.argmax(evaluate(net, center)))
        props = {
            "tight": make_robustness_query(RobustnessParams(center, 0.005, target), d_in, DESK_OUTPUTS),
            "loose": make_robustness_query(RobustnessParams(center, 0.5, target), d_in, DESK_OUTPUTS),
            "minimal0": make_unsafe_set_query(InputBox((-1.0,) * d_in, (1.0,) * d_in),
                                              [minimal_output_conjunct(0, range(DESK_OUTPUTS))], DESK_OUTPUTS),
        }
        for tag, query in props.items():
            prop_name = f"net{n}_{tag}.vnnlib"
            (out / prop_name).write_text(print_vnnlib(query))
            lines.append(f"{net_name},{prop_name},{timeout:g}")
    csv_path = out / "instances.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    return csv_path
