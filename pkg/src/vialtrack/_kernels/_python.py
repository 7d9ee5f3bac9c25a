"""NumPy/SciPy kernels: gated overlap matrix and dense optimal assignment.

This is the fallback lane used when the compiled extension is not built.
Both lanes implement the same contract and are cross-checked in the tests.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

BACKEND = "python"

# Stages 0..2 (larva, full pupa, empty pupa) chain pairwise; the adult
# fly (3) is adjacent only to itself.
_LAST_CHAINED_STAGE = 2


def gated_scores(boxes_a, boxes_b, stages_a, stages_b, gate):
    """Pairwise IoU of two box sets, zeroed at or below the gate and across
    non-adjacent stages.

    Boxes are float64 arrays of (x, y, w, h) rows; stages are integer rank
    arrays (out-of-focus objects must already be removed). Returns an
    (len(a), len(b)) float64 matrix.
    """
    a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    m, n = a.shape[0], b.shape[0]
    if m == 0 or n == 0:
        return np.zeros((m, n), dtype=np.float64)

    ax1 = a[:, 0:1]
    ay1 = a[:, 1:2]
    ax2 = ax1 + a[:, 2:3]
    ay2 = ay1 + a[:, 3:4]
    bx1 = b[None, :, 0]
    by1 = b[None, :, 1]
    bx2 = bx1 + b[None, :, 2]
    by2 = by1 + b[None, :, 3]

    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    scores = inter / union

    sa = np.asarray(stages_a, dtype=np.int64)[:, None]
    sb = np.asarray(stages_b, dtype=np.int64)[None, :]
    adjacent = (sa == sb) | (
        (np.abs(sa - sb) == 1) & (np.maximum(sa, sb) <= _LAST_CHAINED_STAGE)
    )
    keep = adjacent & (scores > gate)
    return np.where(keep, scores, 0.0)


def solve_dense_max(matrix):
    """Exact maximum-total-score assignment on a square matrix.

    Returns an int64 array ``col_of_row`` describing the bijection.
    """
    m = np.ascontiguousarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"assignment matrix must be square, got shape {m.shape}")
    if m.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    rows, cols = linear_sum_assignment(m, maximize=True)
    out = np.empty(m.shape[0], dtype=np.int64)
    out[rows] = cols
    return out
