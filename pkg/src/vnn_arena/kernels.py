"""Backend selection for the dense hot loops.

The compiled extension is used when it was built; set
``VNN_ARENA_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels as fallback

compiled = None
if os.environ.get("VNN_ARENA_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else fallback
BACKEND = "compiled" if compiled is not None else "python"


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def dense_forward(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched ``X @ W.T + b`` with index-ascending accumulation."""
    return _impl.dense_forward(_c(X), _c(W), _c(b))


def dense_interval(L: np.ndarray, U: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Sign-split interval image of the box ``[L, U]`` (row-batched) under ``W x + b``."""
    return _impl.dense_interval(_c(L), _c(U), _c(W), _c(b))
