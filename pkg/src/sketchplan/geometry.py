"""Planar geometry primitives: poses, axis-aligned rectangles, approach corridors.

All lengths are meters, all angles radians. Poses carry a heading but most
collision queries treat entities as discs or axis-aligned boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    t = math.fmod(theta + math.pi, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    return t - math.pi


@dataclass(frozen=True)
class Pose2:
    """A planar pose (x, y, theta) with theta normalized to [-pi, pi)."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def dist(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.theta]

    @staticmethod
    def from_list(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by center and positive half-extents."""

    cx: float
    cy: float
    hx: float
    hy: float

    def __post_init__(self):
        if self.hx <= 0.0 or self.hy <= 0.0:
            raise ValueError("rectangle half-extents must be positive")

    @property
    def x_min(self) -> float:
        return self.cx - self.hx

    @property
    def x_max(self) -> float:
        return self.cx + self.hx

    @property
    def y_min(self) -> float:
        return self.cy - self.hy

    @property
    def y_max(self) -> float:
        return self.cy + self.hy

    @property
    def area(self) -> float:
        return 4.0 * self.hx * self.hy

    def shrunk(self, margin: float) -> "Rect":
        """Rectangle inset by `margin` on every side."""
        return Rect(self.cx, self.cy, self.hx - margin, self.hy - margin)

    def contains_point(self, x: float, y: float) -> bool:
        return abs(x - self.cx) <= self.hx and abs(y - self.cy) <= self.hy

    def contains_disc(self, x: float, y: float, radius: float) -> bool:
        return (abs(x - self.cx) <= self.hx - radius) and (abs(y - self.cy) <= self.hy - radius)

    def dist_to_point(self, x: float, y: float) -> float:
        """Distance from a point to the rectangle (0 inside)."""
        dx = max(abs(x - self.cx) - self.hx, 0.0)
        dy = max(abs(y - self.cy) - self.hy, 0.0)
        return math.hypot(dx, dy)

    def intersects_disc(self, x: float, y: float, radius: float) -> bool:
        return self.dist_to_point(x, y) < radius

    def overlaps(self, other: "Rect") -> bool:
        return (abs(self.cx - other.cx) < self.hx + other.hx
                and abs(self.cy - other.cy) < self.hy + other.hy)

    def to_json(self) -> dict:
        return {"center": [self.cx, self.cy], "half_extents": [self.hx, self.hy]}

    @staticmethod
    def from_json(d) -> "Rect":
        return Rect(float(d["center"][0]), float(d["center"][1]),
                    float(d["half_extents"][0]), float(d["half_extents"][1]))


def seg_point_dist(ax: float, ay: float, bx: float, by: float, px: float, py: float) -> float:
    """Distance from point p to segment ab."""
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    if L2 <= 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * vx + (py - ay) * vy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def seg_seg_dist(ax, ay, bx, by, cx, cy, dx, dy) -> float:
    """Distance between segments ab and cd (0 when they intersect)."""
    if _segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
        return 0.0
    return min(seg_point_dist(ax, ay, bx, by, cx, cy),
               seg_point_dist(ax, ay, bx, by, dx, dy),
               seg_point_dist(cx, cy, dx, dy, ax, ay),
               seg_point_dist(cx, cy, dx, dy, bx, by))


def seg_rect_dist(ax: float, ay: float, bx: float, by: float, rect: Rect) -> float:
    """Distance from segment ab to the rectangle (0 when they touch).

    Exact for swept-disc collision: a disc of radius r moving along ab hits
    the rectangle iff this distance is below r (the Minkowski sum of a rect
    and a disc has rounded corners, so inflating the rect as a rect would
    over-block diagonal corner passages).
    """
    if rect.contains_point(ax, ay) or rect.contains_point(bx, by):
        return 0.0
    corners = [(rect.x_min, rect.y_min), (rect.x_max, rect.y_min),
               (rect.x_max, rect.y_max), (rect.x_min, rect.y_max)]
    best = math.inf
    for i in range(4):
        cx1, cy1 = corners[i]
        cx2, cy2 = corners[(i + 1) % 4]
        best = min(best, seg_seg_dist(ax, ay, bx, by, cx1, cy1, cx2, cy2))
        if best == 0.0:
            return 0.0
    return best


def seg_rect_intersects(ax: float, ay: float, bx: float, by: float, rect: Rect,
                        inflate: float = 0.0) -> bool:
    """True iff segment ab comes within `inflate` of the rectangle."""
    return seg_rect_dist(ax, ay, bx, by, rect) < inflate if inflate > 0.0 \
        else seg_rect_dist(ax, ay, bx, by, rect) <= 0.0


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_intersect(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    d1 = _orient(cx, cy, dx, dy, ax, ay)
    d2 = _orient(cx, cy, dx, dy, bx, by)
    d3 = _orient(ax, ay, bx, by, cx, cy)
    d4 = _orient(ax, ay, bx, by, dx, dy)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    # collinear touching counts as intersection
    for (d, px, py, qx, qy, rx, ry) in ((d1, cx, cy, dx, dy, ax, ay),
                                        (d2, cx, cy, dx, dy, bx, by),
                                        (d3, ax, ay, bx, by, cx, cy),
                                        (d4, ax, ay, bx, by, dx, dy)):
        if d == 0 and min(px, qx) <= rx <= max(px, qx) and min(py, qy) <= ry <= max(py, qy):
            return True
    return False


@dataclass(frozen=True)
class Corridor:
    """Oriented rectangle swept from a start point to a target point.

    The axis runs start -> target; `half_width` is the lateral reach on each
    side. Membership tests treat the corridor as the closed rectangle
    [0, length] x [-half_width, half_width] in axis coordinates.
    """

    sx: float
    sy: float
    tx: float
    ty: float
    half_width: float

    @property
    def length(self) -> float:
        return math.hypot(self.tx - self.sx, self.ty - self.sy)

    def _axis_coords(self, px: float, py: float) -> tuple[float, float]:
        ux, uy = self.tx - self.sx, self.ty - self.sy
        L = math.hypot(ux, uy)
        if L <= 0.0:
            return (0.0, math.hypot(px - self.sx, py - self.sy))
        ux, uy = ux / L, uy / L
        dx, dy = px - self.sx, py - self.sy
        return (dx * ux + dy * uy, abs(-dx * uy + dy * ux))

    def contains_point(self, px: float, py: float) -> bool:
        a, b = self._axis_coords(px, py)
        return -1e-12 <= a <= self.length + 1e-12 and b <= self.half_width + 1e-12

    def dist_to_point(self, px: float, py: float) -> float:
        a, b = self._axis_coords(px, py)
        da = max(-a, a - self.length, 0.0)
        db = max(b - self.half_width, 0.0)
        return math.hypot(da, db)

    def intersects_disc(self, px: float, py: float, radius: float) -> bool:
        return self.dist_to_point(px, py) < radius

    def points_inside(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized contains_point over arrays of coordinates."""
        ux, uy = self.tx - self.sx, self.ty - self.sy
        L = math.hypot(ux, uy)
        if L <= 0.0:
            d = np.hypot(xs - self.sx, ys - self.sy)
            return d <= self.half_width + 1e-12
        ux, uy = ux / L, uy / L
        dx, dy = xs - self.sx, ys - self.sy
        a = dx * ux + dy * uy
        b = np.abs(-dx * uy + dy * ux)
        return (a >= -1e-12) & (a <= L + 1e-12) & (b <= self.half_width + 1e-12)

    def dists(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized dist_to_point over arrays of coordinates."""
        ux, uy = self.tx - self.sx, self.ty - self.sy
        L = math.hypot(ux, uy)
        if L <= 0.0:
            return np.maximum(np.hypot(xs - self.sx, ys - self.sy) - self.half_width, 0.0)
        ux, uy = ux / L, uy / L
        dx, dy = xs - self.sx, ys - self.sy
        a = dx * ux + dy * uy
        b = np.abs(-dx * uy + dy * ux)
        da = np.maximum(np.maximum(-a, a - L), 0.0)
        db = np.maximum(b - self.half_width, 0.0)
        return np.hypot(da, db)


def polyline_length(points: list[Pose2]) -> float:
    return sum(points[i].dist(points[i + 1]) for i in range(len(points) - 1))


CORRIDOR_CLEARANCE = 0.01     # m added to the target radius for corridor width
GRASP_CONE = math.pi / 4.0    # max angle between grasp and base-approach direction;
                              # four evenly spaced grasps tile the full circle


def grasp_compatible(base: Pose2, target: Pose2, grasp: float) -> bool:
    """The approach direction (target -> base) matches the grasp angle within
    the grasp cone. This is what makes distinct grasps geometrically distinct."""
    d = math.atan2(base.y - target.y, base.x - target.x)
    diff = abs(d - grasp) % TWO_PI
    if diff > math.pi:
        diff = TWO_PI - diff
    return diff <= GRASP_CONE + 1e-12


def approach_corridor(base: Pose2, target: Pose2, target_radius: float,
                      reach_min: float) -> Corridor:
    """Swept rectangle from the gripper start point (reach_min out from the
    base toward the target) to the target."""
    d = base.dist(target)
    if d <= reach_min:
        sx, sy = base.x, base.y
    else:
        f = reach_min / d
        sx = base.x + f * (target.x - base.x)
        sy = base.y + f * (target.y - base.y)
    return Corridor(sx, sy, target.x, target.y, target_radius + CORRIDOR_CLEARANCE)
