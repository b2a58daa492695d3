"""2D geometry: frame transforms, polyline routes, oriented rectangles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = float(a) % TWO_PI
    if a > np.pi:
        a -= TWO_PI
    return a


def to_ego_frame(point_xy, ego_xy, ego_heading: float) -> tuple[float, float]:
    """Global point -> (rel_x, rel_y) with +x along the ego heading."""
    dx = point_xy[0] - ego_xy[0]
    dy = point_xy[1] - ego_xy[1]
    c, s = np.cos(ego_heading), np.sin(ego_heading)
    return (float(c * dx + s * dy), float(-s * dx + c * dy))


def from_ego_frame(rel_xy, ego_xy, ego_heading: float) -> tuple[float, float]:
    """Inverse of :func:`to_ego_frame`."""
    c, s = np.cos(ego_heading), np.sin(ego_heading)
    return (
        float(ego_xy[0] + c * rel_xy[0] - s * rel_xy[1]),
        float(ego_xy[1] + s * rel_xy[0] + c * rel_xy[1]),
    )


class Route:
    """Polyline route with arc-length queries.

    Points are stored as an immutable (n, 2) array; consecutive segments must
    have strictly positive length.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("route needs at least two 2D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("route segments must have positive length")
        self.points = pts
        self.points.setflags(write=False)
        self._seg = seg
        self._seg_len = seg_len
        self.cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.length = float(self.cum[-1])

    def point_at(self, s: float) -> tuple[float, float]:
        """Point at arc length s; clamps to the endpoints."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self._seg_len) - 1)
        t = (s - self.cum[i]) / self._seg_len[i]
        p = self.points[i] + t * self._seg[i]
        return (float(p[0]), float(p[1]))

    def tangent_at(self, s: float) -> float:
        """Heading of the route at arc length s."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        d = self._seg[i]
        return float(np.arctan2(d[1], d[0]))

    def project(self, point_xy) -> tuple[float, float]:
        """Project a point onto the route.

        Returns (arc length of the closest point, signed lateral offset);
        lateral is positive to the left of the travel direction.
        """
        p = np.asarray(point_xy, dtype=np.float64)
        a = self.points[:-1]
        rel = p[None, :] - a
        t = np.einsum("ij,ij->i", rel, self._seg) / (self._seg_len**2)
        t = np.clip(t, 0.0, 1.0)
        closest = a + t[:, None] * self._seg
        d2 = np.sum((p[None, :] - closest) ** 2, axis=1)
        i = int(np.argmin(d2))
        s = float(self.cum[i] + t[i] * self._seg_len[i])
        # signed lateral via the segment normal
        cross = self._seg[i, 0] * (p[1] - a[i, 1]) - self._seg[i, 1] * (p[0] - a[i, 0])
        lateral = float(cross / self._seg_len[i])
        return s, lateral


def straight_route(origin, heading: float, length: float, spacing: float) -> Route:
    n = max(2, int(np.ceil(length / spacing)) + 1)
    s = np.linspace(0.0, length, n)
    direction = np.array([np.cos(heading), np.sin(heading)])
    pts = np.asarray(origin, dtype=np.float64)[None, :] + s[:, None] * direction[None, :]
    return Route(pts)


def curved_route(
    origin, heading: float, length: float, spacing: float, amplitude: float, period: float
) -> Route:
    """Gently weaving route: heading oscillates sinusoidally along the arc."""
    n = max(2, int(np.ceil(length / spacing)) + 1)
    ds = length / (n - 1)
    s = np.arange(n) * ds
    # peak heading offset chosen so the lateral swing is roughly `amplitude`
    peak = amplitude * TWO_PI / max(period, 1e-6)
    headings = heading + peak * np.sin(TWO_PI * s / max(period, 1e-6))
    start = np.asarray(origin, dtype=np.float64)
    steps = np.stack([np.cos(headings[:-1]), np.sin(headings[:-1])], axis=1) * ds
    pts = np.concatenate([start[None, :], start[None, :] + np.cumsum(steps, axis=0)])
    return Route(pts)


@dataclass(frozen=True)
class Rect:
    """Oriented rectangle footprint (center, heading, length along heading, width)."""

    cx: float
    cy: float
    heading: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        c, s = np.cos(self.heading), np.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])


def rects_overlap(a: Rect, b: Rect) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts as overlap)."""
    ca, cb = a.corners(), b.corners()
    for rect in (ca, cb):
        edges = np.roll(rect, -1, axis=0) - rect
        for k in range(2):  # two unique edge normals per rectangle
            axis = np.array([-edges[k, 1], edges[k, 0]])
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True
