"""Oriented 5-parameter boxes, [0,100] normalization, and exact rotated IoU.

A box is two corners plus a rotation angle about the box center. Stored
coordinates are normalized so that both image axes span [0,100] and the
angle maps [0,2pi) -> [0,100). Rotation is counter-clockwise in the stored
(x, y) plane; because rasters index y downward, this appears clockwise on
screen, but every component in this package shares the convention so the
geometry is self-consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

# COCO-style 32px/96px area cutoffs rescaled to normalized units at a
# 512px reference resolution: (32*100/512)^2, (96*100/512)^2.
DEFAULT_SIZE_THRESHOLDS = (39.0625, 351.5625)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class OrientedBox:
    """Corners (x1,y1)-(x2,y2) plus rotation theta, all in [0,100] units."""

    x1: float
    y1: float
    x2: float
    y2: float
    theta: float

    def __post_init__(self):
        if not (0.0 <= self.x1 <= self.x2 <= 100.0 and 0.0 <= self.y1 <= self.y2 <= 100.0):
            raise GeometryError(f"non-canonical corners {self.as_tuple()}")
        if not (0.0 <= self.theta < 100.0):
            raise GeometryError(f"theta {self.theta} outside [0,100)")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2, self.theta)

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def theta_radians(self) -> float:
        return self.theta * TWO_PI / 100.0


@dataclass(frozen=True)
class PixelBox:
    """Same five fields in pixel units, angle in radians."""

    x1: float
    y1: float
    x2: float
    y2: float
    theta: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2, self.theta)


def box_from_params(params) -> OrientedBox:
    """Canonicalizes an arbitrary 5-vector (e.g. a regression output):
    corners sorted, coordinates clipped to [0,100], theta wrapped."""
    x1, y1, x2, y2, theta = (float(p) for p in params)
    xa, xb = sorted((min(max(x1, 0.0), 100.0), min(max(x2, 0.0), 100.0)))
    ya, yb = sorted((min(max(y1, 0.0), 100.0), min(max(y2, 0.0), 100.0)))
    return OrientedBox(xa, ya, xb, yb, theta % 100.0)


def normalize(b: PixelBox, W: float, H: float) -> OrientedBox:
    """Pixel coordinates -> [0,100] units; angle wrapped to [0,2pi) then scaled."""
    if W <= 0 or H <= 0:
        raise GeometryError(f"nonpositive image dimensions {W}x{H}")
    if not (0.0 <= b.x1 <= b.x2 <= W and 0.0 <= b.y1 <= b.y2 <= H):
        raise GeometryError(f"pixel box {b.as_tuple()} outside {W}x{H} image")
    theta = b.theta % TWO_PI
    return OrientedBox(
        b.x1 * 100.0 / W,
        b.y1 * 100.0 / H,
        b.x2 * 100.0 / W,
        b.y2 * 100.0 / H,
        theta * 100.0 / TWO_PI,
    )


def denormalize(b: OrientedBox, W: float, H: float) -> PixelBox:
    if W <= 0 or H <= 0:
        raise GeometryError(f"nonpositive image dimensions {W}x{H}")
    return PixelBox(
        b.x1 * W / 100.0,
        b.y1 * H / 100.0,
        b.x2 * W / 100.0,
        b.y2 * H / 100.0,
        b.theta * TWO_PI / 100.0,
    )


def corners(b: OrientedBox) -> list[tuple[float, float]]:
    """Four vertices of the rectangle rotated about its center, CCW order."""
    cx, cy = b.center()
    hw = (b.x2 - b.x1) / 2.0
    hh = (b.y2 - b.y1) / 2.0
    ang = b.theta_radians()
    c, s = math.cos(ang), math.sin(ang)
    pts = []
    for dx, dy in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        pts.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return pts


def _polygon_area(points: list[tuple[float, float]]) -> float:
    if len(points) < 3:
        return 0.0
    acc = 0.0
    for i in range(len(points)):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % len(points)]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def _clip(subject: list[tuple[float, float]], clip_poly: list[tuple[float, float]]):
    """Sutherland-Hodgman: clip a convex subject by a convex CCW polygon."""
    output = subject
    n = len(clip_poly)
    for i in range(n):
        if not output:
            return []
        ax, ay = clip_poly[i]
        bx, by = clip_poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        input_pts = output
        output = []
        sx, sy = input_pts[-1]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= 0.0
        for px, py in input_pts:
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            if p_in != s_in:
                # segment crosses the clip edge line
                dx, dy = px - sx, py - sy
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = (ex * (ay - sy) - ey * (ax - sx)) / denom
                    output.append((sx + t * dx, sy + t * dy))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
    return output


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection-over-union of two rotated rectangles.

    Intersection by convex polygon clipping, areas by the shoelace formula.
    Returns 0 when the union has zero area (covers degenerate operands).
    """
    pa = corners(a)
    pb = corners(b)
    area_a = a.area()
    area_b = b.area()
    # corners() orders vertices CCW in the stored plane, as _clip expects;
    # note image renderers display this mirrored (y down).
    inter = _polygon_area(_clip(pa, pb))
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def size_bucket(
    b: OrientedBox, thresholds: tuple[float, float] = DEFAULT_SIZE_THRESHOLDS
) -> str:
    """'small' / 'medium' / 'large' by normalized area (full image = 10000)."""
    t_small, t_large = thresholds
    if not (0.0 < t_small < t_large):
        raise GeometryError(f"bad size thresholds {thresholds}")
    area = b.area()
    if area < t_small:
        return "small"
    if area >= t_large:
        return "large"
    return "medium"
