"""Planar geometry helpers: rectangles, polygons, ray casting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon, box


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return ((p[:, 0] >= self.xmin) & (p[:, 0] <= self.xmax)
                & (p[:, 1] >= self.ymin) & (p[:, 1] <= self.ymax))

    def clamp(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        return np.array([min(max(p[0], self.xmin), self.xmax),
                         min(max(p[1], self.ymin), self.ymax)])

    def to_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    @classmethod
    def from_size(cls, width: float, height: float) -> "Rect":
        return cls(0.0, 0.0, float(width), float(height))


def as_polygon(vertices) -> Polygon:
    poly = Polygon(np.asarray(vertices, dtype=float))
    if not poly.is_valid:
        poly = shapely.make_valid(poly)
    return poly


def rect_vertices(x0, y0, x1, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def polygon_segments(polygons) -> np.ndarray:
    """All polygon edges as an ``(n, 2, 2)`` array of endpoints."""
    segs = []
    for verts in polygons:
        v = np.asarray(verts, dtype=float)
        segs.append(np.stack([v, np.roll(v, -1, axis=0)], axis=1))
    if not segs:
        return np.zeros((0, 2, 2))
    return np.concatenate(segs, axis=0)


def points_in_polygons(points, polygons) -> np.ndarray:
    """Boolean mask: point lies inside (or on) any polygon."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    inside = np.zeros(len(pts), dtype=bool)
    for verts in polygons:
        poly = as_polygon(verts)
        inside |= shapely.intersects_xy(poly, pts[:, 0], pts[:, 1])
    return inside


def inflate(polygons, radius: float):
    """Union of polygons dilated by ``radius`` (a shapely geometry, maybe empty)."""
    geoms = [as_polygon(v).buffer(radius, quad_segs=8) for v in polygons]
    if not geoms:
        return shapely.Polygon()
    return shapely.union_all(geoms)


def point_segment_distance(points, segments) -> np.ndarray:
    """Distance from each point to each segment, shape ``(n_points, n_segments)``."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a = segments[:, 0, :]
    b = segments[:, 1, :]
    ab = b - a
    denom = np.maximum((ab ** 2).sum(axis=1), 1e-300)
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None]).sum(axis=-1) / denom[None], 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(p[:, None, :] - closest, axis=-1)


def cast_rays(origin, angles, segments, circles=None, max_range=np.inf) -> np.ndarray:
    """Distance along each ray to the first hit; ``inf`` when nothing is hit.

    ``segments`` is ``(n, 2, 2)``; ``circles`` is ``(m, 3)`` rows of (x, y, r).
    """
    o = np.asarray(origin, dtype=float)
    ang = np.asarray(angles, dtype=float)
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    best = np.full(len(ang), np.inf)
    if len(segments):
        a = segments[:, 0, :]
        e = segments[:, 1, :] - a
        # o + t d = a + u e
        denom = d[:, 0, None] * e[None, :, 1] - d[:, 1, None] * e[None, :, 0]
        ao = a - o
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]) / denom
            u = (ao[None, :, 0] * d[:, 1, None] - ao[None, :, 1] * d[:, 0, None]) / denom
        ok = (np.abs(denom) > 1e-12) & (t >= 0) & (u >= 0) & (u <= 1)
        t = np.where(ok, t, np.inf)
        best = np.minimum(best, t.min(axis=1))
    if circles is not None and len(circles):
        c = np.asarray(circles, dtype=float)
        oc = o - c[:, :2]
        b = d @ oc.T
        cc = (oc ** 2).sum(axis=1) - c[:, 2] ** 2
        disc = b ** 2 - cc[None, :]
        with np.errstate(invalid="ignore"):
            root = np.sqrt(disc)
        t0 = -b - root
        t1 = -b + root
        t = np.where(t0 >= 0, t0, np.where(t1 >= 0, 0.0, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        best = np.minimum(best, t.min(axis=1))
    return np.where(best <= max_range, best, np.inf)


def cell_boxes(origin, cell_size: float, shape):
    """Shapely boxes for every cell of a grid, as an array indexed ``[row, col]``."""
    rows, cols = shape
    x0, y0 = origin
    out = np.empty((rows, cols), dtype=object)
    for r in range(rows):
        for c in range(cols):
            out[r, c] = box(x0 + c * cell_size, y0 + r * cell_size,
                            x0 + (c + 1) * cell_size, y0 + (r + 1) * cell_size)
    return out


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi
