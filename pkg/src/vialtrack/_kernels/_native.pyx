# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: gated overlap matrix and dense optimal assignment.

Mirrors the contract of the NumPy lane in ``_python.py``; the assignment
solver is a potential-based Hungarian algorithm (shortest augmenting
paths with dual updates), exact for arbitrary real scores.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"

DEF LAST_CHAINED_STAGE = 2


def gated_scores(boxes_a, boxes_b, stages_a, stages_b, double gate):
    """Pairwise IoU of two box sets, zeroed at or below the gate and across
    non-adjacent stages. Same contract as the NumPy lane."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(
        boxes_a, dtype=np.float64).reshape(-1, 4)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(
        boxes_b, dtype=np.float64).reshape(-1, 4)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sa = np.ascontiguousarray(
        stages_a, dtype=np.int64).reshape(-1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sb = np.ascontiguousarray(
        stages_b, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((m, n), dtype=np.float64)
    if m == 0 or n == 0:
        return out

    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, aw, ah
    cdef double bx1, by1, bx2, by2
    cdef double iw, ih, inter, union, score
    cdef cnp.int64_t si, sj, lo, hi
    for i in range(m):
        ax1 = a[i, 0]
        ay1 = a[i, 1]
        aw = a[i, 2]
        ah = a[i, 3]
        ax2 = ax1 + aw
        ay2 = ay1 + ah
        si = sa[i]
        for j in range(n):
            sj = sb[j]
            if si == sj:
                pass
            else:
                lo = si if si < sj else sj
                hi = si if si > sj else sj
                if hi - lo != 1 or hi > LAST_CHAINED_STAGE:
                    continue
            bx1 = b[j, 0]
            by1 = b[j, 1]
            bx2 = bx1 + b[j, 2]
            by2 = by1 + b[j, 3]
            iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
            if iw <= 0.0:
                continue
            ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = aw * ah + b[j, 2] * b[j, 3] - inter
            score = inter / union
            if score > gate:
                out[i, j] = score
    return out


def solve_dense_max(matrix):
    """Exact maximum-total-score assignment on a square matrix.

    Returns an int64 array ``col_of_row`` describing the bijection.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.ascontiguousarray(
        matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"assignment matrix must be square, got shape {matrix.shape}")
    cdef Py_ssize_t n = m.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out

    # Hungarian algorithm with row/column potentials on the negated matrix
    # (minimisation), 1-indexed with column 0 as the virtual root.
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.zeros(n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.zeros(n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] match_row = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] way = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] minv = np.empty(n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.empty(n + 1, dtype=np.uint8)

    cdef double INF = np.inf
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur

    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        minv[:] = INF
        used[:] = 0
        while True:
            used[j0] = 1
            i0 = match_row[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = -m[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match_row[j0] = match_row[j1]
            j0 = j1

    for j in range(1, n + 1):
        out[match_row[j] - 1] = j - 1
    return out
