"""Rotated rectangles in pixel coordinates (x right, y down).

The angle rotates the +x axis toward +y in the pixel frame, i.e. the major
axis direction is ``(cos theta, sin theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon

HALF_PI = math.pi / 2


def wrap_angle(theta: float) -> float:
    """Map an undirected axis angle into (-pi/2, pi/2]."""
    t = math.fmod(theta, math.pi)
    if t <= -HALF_PI:
        t += math.pi
    elif t > HALF_PI:
        t -= math.pi
    return t


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([c, s]), np.array([-s, c])

    def normalized(self) -> "RotatedBox":
        """Same rectangle with ``w >= h`` and the angle in (-pi/2, pi/2].

        Squares keep the axis closer to horizontal as the major one.
        """
        w, h, theta = self.w, self.h, self.theta
        if h > w:
            w, h, theta = h, w, theta + HALF_PI
        theta = wrap_angle(theta)
        if w == h and abs(theta) > math.pi / 4:
            theta = wrap_angle(theta - HALF_PI)
        return RotatedBox(self.cx, self.cy, w, h, theta)

    def corners(self) -> np.ndarray:
        u, v = self.axes
        a, b = self.w / 2 * u, self.h / 2 * v
        c = self.center
        return np.array([c + a + b, c + a - b, c - a - b, c - a + b])

    @classmethod
    def from_corners(cls, pts) -> "RotatedBox":
        p = np.asarray(pts, dtype=np.float64).reshape(4, 2)
        center = p.mean(axis=0)
        major = p[0] - p[3]
        minor = p[0] - p[1]
        w, h = float(np.hypot(*major)), float(np.hypot(*minor))
        theta = math.atan2(major[1], major[0])
        return cls(float(center[0]), float(center[1]), w, h, theta).normalized()

    def local(self, points) -> np.ndarray:
        """Coordinates of ``points`` along the box's own (major, minor) axes."""
        u, v = self.axes
        d = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.center
        return np.stack([d @ u, d @ v], axis=1)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        loc = self.local(points)
        return (np.abs(loc[:, 0]) <= self.w / 2 + tol) & (np.abs(loc[:, 1]) <= self.h / 2 + tol)

    def polygon(self) -> Polygon:
        return Polygon(self.corners())

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "theta": self.theta}

    @classmethod
    def from_json(cls, data: dict) -> "RotatedBox":
        return cls(float(data["cx"]), float(data["cy"]), float(data["w"]), float(data["h"]), float(data.get("theta", 0.0)))

    def same_as(self, other: "RotatedBox", tol: float = 1e-6) -> bool:
        """Geometric equality up to corner ordering."""
        a, b = self.corners(), other.corners()
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        return bool(np.all(d.min(axis=1) <= tol) and np.all(d.min(axis=0) <= tol))


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    pa, pb = a.polygon(), b.polygon()
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return float(inter / union) if union > 0 else 0.0
