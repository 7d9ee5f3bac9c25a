"""Gated, dummy-augmented optimal assignment between two frames.

The score matrix pairs ``m`` active tracks with ``n`` new detections.
Real-real entries hold the pairwise IoU, zeroed when the overlap does not
exceed the gate or the stages are not adjacent. The matrix is padded to
(m+n) x (m+n): every real row/column can escape to a dummy partner so
objects may appear or disappear instead of being force-matched.

Each dummy entry is worth half the gate. Leaving a (track, detection)
pair unmatched therefore costs exactly one gate worth of score across its
two dummy matches, so under total-score maximisation a real pair wins
against its dummies precisely when its overlap exceeds the gate, and a
gated-out pair (entry 0) always loses. Dummy-dummy entries are 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum
from types import ModuleType

import numpy as np

from . import _kernels

#: Fraction of the IoU gate charged per dummy entry.
DUMMY_SCORE_FACTOR = 0.5


@dataclass(frozen=True)
class AssignmentProblem:
    """A padded score matrix plus its block dimensions."""

    matrix: np.ndarray
    n_tracks: int
    n_detections: int
    dummy_score: float

    @property
    def size(self) -> int:
        return self.n_tracks + self.n_detections


@dataclass(frozen=True)
class Matching:
    """A solved assignment over a padded matrix.

    ``col_of_row`` is the full bijection; ``associations`` keeps only the
    real-real pairs whose score beats a dummy match. All other real rows
    are track deaths, all other real columns track births.
    """

    col_of_row: np.ndarray
    associations: tuple[tuple[int, int], ...]
    unmatched_tracks: tuple[int, ...]
    unmatched_detections: tuple[int, ...]
    total_score: float


def build_score_matrix(
    track_boxes,
    track_stages,
    det_boxes,
    det_stages,
    gate: float = 0.6,
    kernel: ModuleType | None = None,
) -> AssignmentProblem:
    """Build the padded assignment problem for one frame transition.

    Boxes are (k, 4) arrays of (x, y, w, h) rows, stages integer rank
    arrays; out-of-focus objects must already be removed.
    """
    if not 0.0 < gate < 1.0:
        raise ValueError(f"iou gate must be in (0, 1), got {gate}")
    k = kernel if kernel is not None else _kernels.get_backend()
    scores = k.gated_scores(track_boxes, det_boxes, track_stages, det_stages, gate)
    m, n = scores.shape
    dummy = gate * DUMMY_SCORE_FACTOR
    matrix = np.zeros((m + n, m + n), dtype=np.float64)
    matrix[:m, :n] = scores
    matrix[:m, n:] = dummy
    matrix[m:, :n] = dummy
    return AssignmentProblem(matrix=matrix, n_tracks=m, n_detections=n, dummy_score=dummy)


def solve_assignment(
    problem: AssignmentProblem, kernel: ModuleType | None = None
) -> Matching:
    """Solve the padded problem to a total-score-maximal bijection."""
    k = kernel if kernel is not None else _kernels.get_backend()
    col_of_row = k.solve_dense_max(problem.matrix)
    _canonicalize_ties(problem.matrix, col_of_row)
    return _interpret(problem, col_of_row)


def _canonicalize_ties(matrix: np.ndarray, col_of_row: np.ndarray) -> None:
    """Normalise the matching among equal-total alternatives, in place.

    Among optimal matchings the solver's pick is implementation-defined;
    repeatedly applying score-neutral two-swaps that lower the column
    sequence lexicographically yields the same result on either kernel
    lane for the ties that occur in practice (exactly equal scores).
    """
    n = len(col_of_row)
    changed = True
    while changed:
        changed = False
        for i in range(n):
            ji = col_of_row[i]
            for k in range(i + 1, n):
                jk = col_of_row[k]
                if jk < ji and (
                    matrix[i, jk] + matrix[k, ji] == matrix[i, ji] + matrix[k, jk]
                ):
                    col_of_row[i], col_of_row[k] = jk, ji
                    ji = jk
                    changed = True


def _interpret(problem: AssignmentProblem, col_of_row: np.ndarray) -> Matching:
    m, n = problem.n_tracks, problem.n_detections
    matrix = problem.matrix
    associations = []
    unmatched_tracks = []
    for i in range(m):
        j = int(col_of_row[i])
        if j < n and matrix[i, j] > problem.dummy_score:
            associations.append((i, j))
        else:
            unmatched_tracks.append(i)
    matched_dets = {j for _, j in associations}
    unmatched_dets = [j for j in range(n) if j not in matched_dets]
    total = float(fsum(matrix[i, int(col_of_row[i])] for i in range(m + n)))
    return Matching(
        col_of_row=col_of_row,
        associations=tuple(associations),
        unmatched_tracks=tuple(unmatched_tracks),
        unmatched_detections=tuple(unmatched_dets),
        total_score=total,
    )


def associate(
    track_boxes,
    track_stages,
    det_boxes,
    det_stages,
    gate: float = 0.6,
    kernel: ModuleType | None = None,
) -> tuple[tuple[tuple[int, int], ...], tuple[int, ...], tuple[int, ...]]:
    """Fast association path used by the tracker.

    Decomposes the gated score matrix into connected components of its
    positive entries and solves a padded problem per component. Rows and
    columns without any gated candidate are unmatched outright. The
    result is identical to solving the full padded matrix (zero-score
    pairs never beat their dummies), which the tests verify.

    Returns (associations, unmatched_track_idx, unmatched_det_idx).
    """
    k = kernel if kernel is not None else _kernels.get_backend()
    scores = k.gated_scores(track_boxes, det_boxes, track_stages, det_stages, gate)
    m, n = scores.shape
    if m == 0 or n == 0 or not scores.any():
        return (), tuple(range(m)), tuple(range(n))

    associations: list[tuple[int, int]] = []
    matched_rows: set[int] = set()
    matched_cols: set[int] = set()
    for rows, cols in _components(scores):
        sub = scores[np.ix_(rows, cols)]
        a, b = sub.shape
        dummy = gate * DUMMY_SCORE_FACTOR
        padded = np.zeros((a + b, a + b), dtype=np.float64)
        padded[:a, :b] = sub
        padded[:a, b:] = dummy
        padded[a:, :b] = dummy
        col_of_row = k.solve_dense_max(padded)
        _canonicalize_ties(padded, col_of_row)
        for i in range(a):
            j = int(col_of_row[i])
            if j < b and padded[i, j] > dummy:
                associations.append((int(rows[i]), int(cols[j])))
                matched_rows.add(int(rows[i]))
                matched_cols.add(int(cols[j]))

    associations.sort()
    unmatched_tracks = tuple(i for i in range(m) if i not in matched_rows)
    unmatched_dets = tuple(j for j in range(n) if j not in matched_cols)
    return tuple(associations), unmatched_tracks, unmatched_dets


def _components(scores: np.ndarray):
    """Connected components of the bipartite graph of positive entries.

    Yields (row_indices, col_indices) pairs in ascending order of their
    smallest row, each as sorted int arrays.
    """
    m, n = scores.shape
    row_nonzero = [np.nonzero(scores[i])[0] for i in range(m)]
    col_nonzero: list[list[int]] = [[] for _ in range(n)]
    for i in range(m):
        for j in row_nonzero[i]:
            col_nonzero[j].append(i)

    seen_rows = np.zeros(m, dtype=bool)
    for start in range(m):
        if seen_rows[start] or row_nonzero[start].size == 0:
            continue
        rows = [start]
        cols: list[int] = []
        seen_rows[start] = True
        seen_cols = set()
        stack = [("r", start)]
        while stack:
            side, idx = stack.pop()
            if side == "r":
                for j in row_nonzero[idx]:
                    if j not in seen_cols:
                        seen_cols.add(int(j))
                        cols.append(int(j))
                        stack.append(("c", int(j)))
            else:
                for i in col_nonzero[idx]:
                    if not seen_rows[i]:
                        seen_rows[i] = True
                        rows.append(i)
                        stack.append(("r", i))
        yield np.array(sorted(rows)), np.array(sorted(cols))
