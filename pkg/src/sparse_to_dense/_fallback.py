"""Pure numpy versions of the hot kernels.

Same signatures and row-independence guarantee as the compiled module:
each row goes through its own 1-D BLAS call, so a row's result never
depends on how many rows share the block.
"""

from __future__ import annotations

import numpy as np


def linear(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], w.shape[1]), dtype=np.float64)
    for r in range(x.shape[0]):
        out[r] = x[r] @ w
    return out


def rmsnorm(x: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    out = np.empty_like(x)
    dim = x.shape[1]
    for r in range(x.shape[0]):
        row = x[r]
        inv = 1.0 / np.sqrt(np.dot(row, row) / dim + eps)
        out[r] = row * inv * weight
    return out


def attend(q, k, v, index, counts, scale, probs_from=-1):
    rows, q_heads, d = q.shape
    kv_heads, n = index.shape
    group = q_heads // kv_heads
    out = np.zeros((rows, q_heads, d), dtype=np.float64)
    probs = None
    if probs_from >= 0:
        probs = np.zeros((max(rows - probs_from, 0), q_heads, n), dtype=np.float64)
    for h in range(kv_heads):
        for r in range(rows):
            c = int(counts[h, r])
            if c == 0:
                continue
            sel = index[h, :c]
            keys = k[h, sel]
            values = v[h, sel]
            for hq in range(h * group, (h + 1) * group):
                scores = (keys @ q[r, hq]) * scale
                e = np.exp(scores - scores.max())
                total = e.sum()
                out[r, hq] = (e @ values) / total
                if probs is not None and r >= probs_from:
                    probs[r - probs_from, hq, :c] = e / total
    return out, probs
