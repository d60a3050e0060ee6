import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyground import geometry as G

from oracles import mc_rotated_iou


def box(x1, y1, x2, y2, theta=0.0):
    return G.OrientedBox(x1, y1, x2, y2, theta)


def random_box(rng, max_theta=100.0):
    x = np.sort(rng.uniform(0, 100, 2))
    y = np.sort(rng.uniform(0, 100, 2))
    return box(x[0], y[0], x[1], y[1], rng.uniform(0, max_theta))


# --- normalization -------------------------------------------------------

def test_normalize_examples():
    b = G.normalize(G.PixelBox(50, 50, 250, 250, 0.0), 500, 500)
    assert b.as_tuple() == (10, 10, 50, 50, 0)
    b = G.normalize(G.PixelBox(0, 0, 640, 480, 0.0), 640, 480)
    assert b.as_tuple() == (0, 0, 100, 100, 0)
    b = G.normalize(G.PixelBox(0, 0, 10, 10, math.pi), 100, 100)
    assert b.as_tuple() == pytest.approx((0, 0, 10, 10, 50))


def test_denormalize_examples():
    p = G.denormalize(box(0, 0, 100, 100, 0), 640, 480)
    assert p.as_tuple() == (0, 0, 640, 480, 0)
    p = G.denormalize(box(25, 25, 75, 75, 25), 200, 200)
    assert p.as_tuple() == pytest.approx((50, 50, 150, 150, math.pi / 2))


def test_normalize_rejects_bad_dims():
    with pytest.raises(G.GeometryError):
        G.normalize(G.PixelBox(0, 0, 1, 1, 0), 0, 10)
    with pytest.raises(G.GeometryError):
        G.denormalize(box(0, 0, 1, 1, 0), 10, -1)


@given(st.integers(1, 10**4), st.integers(1, 10**4), st.data())
@settings(max_examples=200)
def test_roundtrip_within_tolerance(W, H, data):
    x = sorted([data.draw(st.floats(0, W)), data.draw(st.floats(0, W))])
    y = sorted([data.draw(st.floats(0, H)), data.draw(st.floats(0, H))])
    theta = data.draw(st.floats(0, 2 * math.pi, exclude_max=True))
    p = G.PixelBox(x[0], y[0], x[1], y[1], theta)
    q = G.denormalize(G.normalize(p, W, H), W, H)
    assert np.allclose(q.as_tuple(), p.as_tuple(), atol=1e-6)


# --- corners -------------------------------------------------------------

def test_corners_zero_rotation():
    assert G.corners(box(0, 0, 2, 2, 0)) == [(0, 0), (2, 0), (2, 2), (0, 2)]


def test_corners_square_symmetry():
    base = {tuple(np.round(p, 9)) for p in G.corners(box(0, 0, 2, 2, 0))}
    quarter = {tuple(np.round(p, 9)) for p in G.corners(box(0, 0, 2, 2, 25))}
    assert base == quarter


def test_corners_45_degrees():
    got = G.corners(box(0, 0, 4, 2, 12.5))
    ang = math.pi / 4
    c, s = math.cos(ang), math.sin(ang)
    expect = [
        (2 + c * dx - s * dy, 1 + s * dx + c * dy)
        for dx, dy in [(-2, -1), (2, -1), (2, 1), (-2, 1)]
    ]
    assert np.allclose(got, expect)


# --- rotated IoU ---------------------------------------------------------

def test_iou_identical():
    b = box(10, 20, 40, 70, 33.0)
    assert G.rotated_iou(b, b) == pytest.approx(1.0, abs=1e-12)


def test_iou_disjoint():
    assert G.rotated_iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0


def test_iou_axis_aligned_third():
    assert G.rotated_iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) == pytest.approx(
        1 / 3, abs=1e-12
    )


def test_iou_square_vs_rotated_square():
    # square against itself rotated 45 degrees about the center: the
    # intersection is a regular octagon of area 2*(sqrt(2)-1)*a^2, so
    # IoU = oct / (2a^2 - oct) = 1/sqrt(2). Cross-checked by Monte Carlo
    # and shapely during development.
    got = G.rotated_iou(box(0, 0, 10, 10, 0), box(0, 0, 10, 10, 25 / 2))
    assert got == pytest.approx(1 / math.sqrt(2), abs=1e-9)


def test_iou_degenerate_boxes():
    line = box(5, 0, 5, 10)
    assert G.rotated_iou(line, line) == 0.0
    assert G.rotated_iou(line, box(0, 0, 10, 10)) == 0.0


def test_iou_theta_period():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = random_box(rng)
        b = random_box(rng)
        shifted = G.OrientedBox(b.x1, b.y1, b.x2, b.y2, (b.theta + 100) % 100)
        assert G.rotated_iou(a, b) == pytest.approx(G.rotated_iou(a, shifted), abs=1e-12)


def test_iou_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = random_box(rng)
        b = random_box(rng)
        assert G.rotated_iou(a, b) == pytest.approx(G.rotated_iou(b, a), abs=1e-12)


def _axis_aligned_iou(a, b):
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


def test_iou_matches_axis_aligned_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(300):
        a = random_box(rng, max_theta=0.0)
        b = random_box(rng, max_theta=0.0)
        assert G.rotated_iou(a, b) == pytest.approx(_axis_aligned_iou(a, b), abs=1e-12)


def test_iou_against_monte_carlo_smoke():
    # the heavyweight 1000-pair check lives in the acceptance suite
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = random_box(rng)
        b = random_box(rng)
        exact = G.rotated_iou(a, b)
        est, se = mc_rotated_iou(a, b, 200_000, rng)
        assert abs(exact - est) <= max(3 * se, 5e-3)


# --- size buckets --------------------------------------------------------

def test_size_bucket_defaults():
    t = G.DEFAULT_SIZE_THRESHOLDS
    assert t == pytest.approx((39.0625, 351.5625))
    assert G.size_bucket(box(0, 0, 2, 5)) == "small"       # area 10
    assert G.size_bucket(box(0, 0, 10, 10)) == "medium"    # area 100
    assert G.size_bucket(box(0, 0, 50, 100)) == "large"    # area 5000


def test_size_bucket_bad_thresholds():
    with pytest.raises(G.GeometryError):
        G.size_bucket(box(0, 0, 1, 1), thresholds=(5.0, 5.0))


def test_box_from_params_canonicalizes():
    b = G.box_from_params([60, 10, 40, -5, 130])
    assert b.as_tuple() == (40, 0, 60, 10, 30)
