"""Minimum-cost bipartite matching of predicted vs. reference boxes.

The box-set loss is the minimum over partial one-to-one matchings of the
summed squared distances between matched 5-parameter vectors. The solver
is the O(n^3) shortest-augmenting-path formulation with dual potentials;
ties among optimal matchings are broken to the lexicographically smallest
pair list so results are reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import OrientedBox

_TIE_TOL = 1e-9


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    """Partial one-to-one matching: |pairs| = min(L, K), cost minimal."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def _box_array(boxes) -> np.ndarray:
    if len(boxes) and isinstance(boxes[0], OrientedBox):
        return np.array([b.as_tuple() for b in boxes], dtype=float)
    return np.asarray(boxes, dtype=float).reshape(len(boxes), -1)


def cost_matrix(pred, ref) -> np.ndarray:
    """Entry (i, j) = squared Euclidean distance between the 5-parameter
    vectors of prediction i and reference j."""
    if len(pred) == 0 or len(ref) == 0:
        raise AssignmentError("cost_matrix requires at least one box on each side")
    p = _box_array(pred)
    r = _box_array(ref)
    diff = p[:, None, :] - r[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _augmenting_path(cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Core LSAP solve for an n x m matrix with n <= m.

    Returns (total cost, column assigned to each row). Column m acts as the
    virtual start of each augmenting path.
    """
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m + 1)
    col_row = np.full(m + 1, -1, dtype=np.intp)
    for i in range(n):
        col_row[m] = i
        j0 = m
        minv = np.full(m, np.inf)
        way = np.full(m, m, dtype=np.intp)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            idx = np.flatnonzero(~used[:m])
            cur = cost[i0, idx] - u[i0] - v[idx]
            better = cur < minv[idx]
            if better.any():
                bidx = idx[better]
                minv[bidx] = cur[better]
                way[bidx] = j0
            k = int(np.argmin(minv[idx]))
            j1 = int(idx[k])
            delta = minv[j1]
            used_cols = np.flatnonzero(used)
            u[col_row[used_cols]] += delta
            v[used_cols] -= delta
            minv[idx] -= delta
            j0 = j1
            if col_row[j0] < 0:
                break
        while j0 != m:
            j1 = int(way[j0])
            col_row[j0] = col_row[j1]
            j0 = j1
    row_col = np.full(n, -1, dtype=np.intp)
    for j in range(m):
        if col_row[j] >= 0:
            row_col[col_row[j]] = j
    total = float(cost[np.arange(n), row_col].sum())
    return total, row_col


def _optimal_cost(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    if cost.shape[0] > cost.shape[1]:
        cost = cost.T
    return _augmenting_path(np.ascontiguousarray(cost))[0]


def hungarian(c: np.ndarray) -> Assignment:
    """Minimal-cost partial matching of size min(L, K).

    Among equal-cost optima, returns the lexicographically smallest pair
    list (up to a 1e-9 cost tolerance), found by greedily fixing each row
    to the smallest column that still admits an optimal completion.
    """
    a = np.asarray(c, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise AssignmentError(f"cost matrix must be 2-D and nonempty, got shape {a.shape}")
    if np.isnan(a).any():
        raise AssignmentError("cost matrix contains NaN")
    if np.isinf(a).any():
        raise AssignmentError("cost matrix contains non-finite entries")
    L, K = a.shape
    base = _optimal_cost(a)
    tol = _TIE_TOL * max(1.0, abs(base))

    pairs: list[tuple[int, int]] = []
    cols = list(range(K))
    need = min(L, K)
    total = 0.0
    for i in range(L):
        if need == 0:
            break
        chosen = -1
        for j in cols:
            rest = [cc for cc in cols if cc != j]
            comp = _optimal_cost(a[i + 1 :, rest]) if need > 1 else 0.0
            if total + a[i, j] + comp <= base + tol:
                chosen = j
                break
        if chosen >= 0:
            pairs.append((i, chosen))
            cols.remove(chosen)
            total += float(a[i, chosen])
            need -= 1
        # otherwise every optimal completion leaves row i unmatched
    assert len(pairs) == min(L, K)
    return Assignment(tuple(pairs), total)


def grounding_loss(pred, ref) -> tuple[float, Assignment]:
    """Summed squared distance over the optimal matching (0 if either side
    is empty; the matching then has no pairs)."""
    if len(pred) == 0 or len(ref) == 0:
        return 0.0, Assignment((), 0.0)
    assignment = hungarian(cost_matrix(pred, ref))
    return assignment.total_cost, assignment


def grounding_loss_grad(pred, ref, assignment: Assignment, check: bool = True) -> np.ndarray:
    """Gradient of the matched loss w.r.t. each prediction, holding the
    matching fixed: 2*(pred_i - ref_j) for matched rows, zero otherwise."""
    p = _box_array(pred)
    grads = np.zeros_like(p)
    if len(pred) == 0 or len(ref) == 0:
        if assignment.pairs:
            raise AssignmentError("assignment has pairs but a side is empty")
        return grads
    r = _box_array(ref)
    if check:
        c = cost_matrix(pred, ref)
        rows = [i for i, _ in assignment.pairs]
        colsj = [j for _, j in assignment.pairs]
        if len(set(rows)) != len(rows) or len(set(colsj)) != len(colsj):
            raise AssignmentError("assignment is not one-to-one")
        stated = float(c[rows, colsj].sum())
        best = _optimal_cost(c)
        if abs(stated - best) > _TIE_TOL * max(1.0, abs(best)):
            raise AssignmentError(
                f"stale assignment: cost {stated} but optimum is {best}"
            )
    for i, j in assignment.pairs:
        grads[i] = 2.0 * (p[i] - r[j])
    return grads
