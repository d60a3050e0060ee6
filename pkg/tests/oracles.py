"""Independent reference implementations used only to check the library.

Everything here is deliberately brute force: exhaustive enumeration for
matchings, Monte Carlo for rotated-rectangle IoU, central differences for
gradients. None of it shares code with the implementations under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_assignment(cost: np.ndarray) -> tuple[float, tuple[tuple[int, int], ...]]:
    """Exhaustive minimum over all partial matchings of size min(L, K).

    Returns (min cost, lexicographically smallest optimal pair list).
    Ties are resolved exactly, so use integer-valued costs when checking
    tie-breaking.
    """
    cost = np.asarray(cost, dtype=float)
    L, K = cost.shape
    m = min(L, K)
    best_cost = math.inf
    best_pairs = None
    if L <= K:
        candidates = (
            tuple(zip(range(L), cols)) for cols in itertools.permutations(range(K), L)
        )
    else:
        candidates = (
            tuple(zip(rows, cols))
            for rows in itertools.combinations(range(L), m)
            for cols in itertools.permutations(range(K))
        )
    for pairs in candidates:
        c = sum(cost[i, j] for i, j in pairs)
        if c < best_cost or (c == best_cost and pairs < best_pairs):
            best_cost = c
            best_pairs = pairs
    return best_cost, best_pairs


def _inside(points: np.ndarray, box) -> np.ndarray:
    """Point-in-rotated-rectangle test by rotating into the box frame."""
    cx = (box.x1 + box.x2) / 2.0
    cy = (box.y1 + box.y2) / 2.0
    ang = box.theta_radians()
    c, s = math.cos(ang), math.sin(ang)
    dx = points[:, 0] - cx
    dy = points[:, 1] - cy
    # inverse rotation
    rx = c * dx + s * dy
    ry = -s * dx + c * dy
    hw = (box.x2 - box.x1) / 2.0
    hh = (box.y2 - box.y1) / 2.0
    return (np.abs(rx) <= hw) & (np.abs(ry) <= hh)


def mc_rotated_iou(a, b, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo IoU over the joint bounding region of both rectangles.

    Returns (estimate, standard error). The estimate conditions on the
    number of samples that landed in the union, so the error is the
    binomial one for intersection-given-union.
    """
    from tinyground.geometry import corners

    pts = np.array(corners(a) + corners(b))
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    samples = lo + rng.random((n, 2)) * span
    in_a = _inside(samples, a)
    in_b = _inside(samples, b)
    n_union = int((in_a | in_b).sum())
    if n_union == 0:
        return 0.0, 0.0
    n_inter = int((in_a & in_b).sum())
    est = n_inter / n_union
    se = math.sqrt(max(est * (1.0 - est), 0.0) / n_union)
    return est, se


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x, dtype=float)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[k] += step
        xm.flat[k] -= step
        g.flat[k] = (f(xp) - f(xm)) / (2.0 * step)
    return g
