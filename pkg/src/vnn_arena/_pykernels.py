"""Numpy fallback for the compiled dense kernels.

Loops over input columns so every output accumulates its products in
index-ascending order; results are bitwise identical to ``_ckernels``.
"""

from __future__ import annotations

import numpy as np


def dense_forward(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    B, n = X.shape
    m = W.shape[0]
    if W.shape[1] != n or b.shape[0] != m:
        raise ValueError("dense_forward: shape mismatch")
    acc = np.zeros((B, m))
    for j in range(n):
        acc += X[:, j, None] * W[:, j]
    acc += b
    return acc


def dense_interval(
    L: np.ndarray, U: np.ndarray, W: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    B, n = L.shape
    m = W.shape[0]
    if U.shape != L.shape or W.shape[1] != n or b.shape[0] != m:
        raise ValueError("dense_interval: shape mismatch")
    lo = np.zeros((B, m))
    hi = np.zeros((B, m))
    nonneg = W >= 0.0
    for j in range(n):
        w = W[:, j]
        p = nonneg[:, j]
        wl = L[:, j, None] * w
        wu = U[:, j, None] * w
        lo += np.where(p, wl, wu)
        hi += np.where(p, wu, wl)
    lo += b
    hi += b
    return lo, hi
