"""Evaluation metrics: field error, source error, hot-spot width, coverage, CIs."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import shapely
from scipy import stats
from scipy.spatial import cKDTree

from .coverage import FREE, OccupancyGrid
from .field import BasisLayout, GasFieldSpec, eval_field
from .geometry import Rect

MSE_RESOLUTION = 0.25


class MetricWarning(UserWarning):
    pass


def lattice_points(arena: Rect, resolution: float = MSE_RESOLUTION) -> np.ndarray:
    """Cell-centred lattice, row-major (y outer, x inner), spacing at most ``resolution``."""
    nx = max(1, math.ceil(arena.width / resolution - 1e-9))
    ny = max(1, math.ceil(arena.height / resolution - 1e-9))
    xs = arena.xmin + (np.arange(nx) + 0.5) * (arena.width / nx)
    ys = arena.ymin + (np.arange(ny) + 0.5) * (arena.height / ny)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass
class FieldLattice:
    """Cached basis activations for repeated error evaluation on one lattice."""

    layout: BasisLayout
    points: np.ndarray
    truth: np.ndarray | None = None

    @classmethod
    def build(cls, layout: BasisLayout, arena: Rect, truth: GasFieldSpec | None = None,
              resolution: float = MSE_RESOLUTION) -> "FieldLattice":
        pts = lattice_points(arena, resolution)
        lat = cls(layout, pts, None if truth is None else eval_field(truth, pts))
        lat._features = layout.features(pts)
        return lat

    def field(self, gains) -> np.ndarray:
        return self._features @ np.asarray(gains, float)

    def mse(self, gains) -> float:
        if self.truth is None:
            return float("nan")
        d = self.field(gains) - self.truth
        return float(d @ d / len(d))


def mse(gains, truth: GasFieldSpec | None, layout: BasisLayout, arena: Rect,
        resolution: float = MSE_RESOLUTION) -> float:
    """Lattice mean of squared error between truth and the template field with ``gains``.

    Returns NaN (and warns) when no ground truth exists, as with a radio source.
    """
    if truth is None:
        warnings.warn("no ground-truth field: MSE unavailable", MetricWarning, stacklevel=2)
        return float("nan")
    gains = getattr(gains, "gains_hat", gains)
    return FieldLattice.build(layout, arena, truth, resolution).mse(gains)


def anmse(per_agent) -> tuple[float, bool]:
    """Average of MSE over agents and measurement epochs.

    ``per_agent`` maps agent id to its sequence of per-epoch MSE values.
    Returns ``(value, ragged)``; ragged logs are averaged over what exists.
    """
    series = [np.asarray(v, float) for v in (per_agent.values() if isinstance(per_agent, dict) else per_agent)]
    series = [s for s in series if len(s)]
    if not series:
        return float("nan"), True
    lengths = {len(s) for s in series}
    ragged = len(lengths) > 1
    flat = np.concatenate(series)
    return float(flat.sum() / len(flat)), ragged


def estimated_source(gains, layout: BasisLayout, points: np.ndarray) -> tuple[np.ndarray, bool]:
    """Lattice argmax of the estimated field; flags a flat field."""
    gains = getattr(gains, "gains_hat", gains)
    values = layout.features(points) @ np.asarray(gains, float)
    k = int(np.argmax(values))
    flat = bool(values.max() - values.min() < 1e-12)
    return points[k].copy(), flat


def source_error(est, true) -> float:
    return float(np.linalg.norm(np.asarray(est, float) - np.asarray(true, float)))


def whca(gains, layout: BasisLayout, points: np.ndarray, level: float = 1.0) -> tuple[float, bool]:
    """Diameter of the smallest circle enclosing lattice points at or above ``level``.

    Returns ``(diameter, empty)``.
    """
    gains = getattr(gains, "gains_hat", gains)
    values = layout.features(points) @ np.asarray(gains, float)
    hot = points[values >= level]
    if len(hot) == 0:
        return 0.0, True
    if len(hot) == 1:
        return 0.0, False
    r = shapely.minimum_bounding_radius(shapely.multipoints(hot))
    return 2.0 * float(r), False


def coverage_percentage(trajectories, grid: OccupancyGrid, t: float = math.inf,
                        footprint: float = 0.0) -> tuple[float, float, float]:
    """Percent of free cells covered by time ``t``: (total, direct, indirect).

    A cell is covered directly when a robot position falls inside it and
    indirectly when its centre lies within ``footprint`` of a robot position.
    ``trajectories`` is a list of ``(k, 3)`` arrays of (time, x, y).
    """
    free = grid.cells == FREE
    n_free = int(free.sum())
    if n_free == 0:
        return 0.0, 0.0, 0.0
    pts = []
    for tr in trajectories:
        tr = np.asarray(tr, float).reshape(-1, 3)
        pts.append(tr[tr[:, 0] <= t, 1:])
    pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    direct = np.zeros_like(free)
    if len(pts):
        cols = np.floor((pts[:, 0] - grid.origin[0]) / grid.cell_size).astype(int)
        rows = np.floor((pts[:, 1] - grid.origin[1]) / grid.cell_size).astype(int)
        ok = (rows >= 0) & (rows < grid.rows) & (cols >= 0) & (cols < grid.cols)
        direct[rows[ok], cols[ok]] = True
    direct &= free
    indirect = np.zeros_like(free)
    if footprint > 0 and len(pts):
        centers = grid.cell_centers().reshape(-1, 2)
        d, _ = cKDTree(pts).query(centers)
        indirect = (d <= footprint).reshape(free.shape) & free & ~direct
    nd, ni = int(direct.sum()), int(indirect.sum())
    return 100.0 * (nd + ni) / n_free, 100.0 * nd / n_free, 100.0 * ni / n_free


def densify(path, spacing: float = 0.05) -> np.ndarray:
    """Points every ``spacing`` metres along a polyline (endpoints kept)."""
    p = np.asarray(path, float)
    out = [p[:1]]
    for a, b in zip(p[:-1], p[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        s = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + s * (b - a))
    return np.vstack(out)


def student_t_ci(values, confidence: float = 0.95) -> tuple[float, float]:
    """Mean and half-width of the two-sided Student-t interval."""
    x = np.asarray(values, float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return float("nan"), float("nan")
    m = float(x.mean())
    if len(x) < 2:
        return m, 0.0
    se = float(x.std(ddof=1)) / math.sqrt(len(x))
    return m, float(stats.t.ppf(0.5 + confidence / 2, len(x) - 1)) * se


def path_length(traj) -> float:
    p = np.asarray(traj, float).reshape(-1, 3)[:, 1:]
    if len(p) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())
