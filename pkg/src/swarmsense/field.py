"""Radial-basis concentration field and the binary sensor model.

The field is a sum of isotropic Gaussian bumps,

    c(l) = sum_i gain_i * exp(-||center_i - l||^2 / width_i)

where ``width_i`` is stored as a squared length (m^2). A noisy reading
``y = c(l) + N(0, noise_std^2)`` is reduced to one bit by ``y > threshold``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Rect


@dataclass(frozen=True)
class BasisLayout:
    """Fixed centers (m) and squared widths (m^2) shared by truth and estimator."""

    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        widths = np.asarray(self.widths, dtype=float).reshape(-1)
        if len(centers) != len(widths):
            raise ValueError(
                f"{len(centers)} centers but {len(widths)} widths")
        if len(centers) == 0:
            raise ValueError("basis layout needs at least one function")
        if np.any(widths <= 0) or not np.all(np.isfinite(widths)):
            raise ValueError("basis widths must be positive and finite")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)

    @property
    def count(self) -> int:
        return len(self.widths)

    def features(self, points) -> np.ndarray:
        """Basis activations, shape ``(n_points, count)``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        d2 = ((pts[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-d2 / self.widths[None, :])

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "widths": self.widths.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisLayout":
        return cls(np.asarray(d["centers"], float), np.asarray(d["widths"], float))


@dataclass(frozen=True)
class GasFieldSpec:
    layout: BasisLayout
    gains: np.ndarray
    noise_std: float
    threshold: float = 1.0

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float).reshape(-1)
        if len(gains) != self.layout.count:
            raise ValueError(
                f"{len(gains)} gains for {self.layout.count} basis functions")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "gains", gains)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "gains": self.gains.tolist(),
            "noise_std": float(self.noise_std),
            "threshold": float(self.threshold),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GasFieldSpec":
        return cls(BasisLayout.from_dict(d["layout"]), np.asarray(d["gains"], float),
                   float(d["noise_std"]), float(d.get("threshold", 1.0)))


@dataclass
class BinaryObservation:
    location: np.ndarray
    bit: int
    time: float = 0.0
    agent_id: int = 0

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float).reshape(2)
        if self.bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {self.bit!r}")


def default_width(arena: Rect, count: int) -> float:
    """Squared width giving ~exp(-1) overlap between lattice neighbours."""
    side = math.isqrt(count)
    return (min(arena.width, arena.height) / side) ** 2


def make_basis_grid(arena: Rect, count: int = 16, width: float | None = None) -> BasisLayout:
    """Square lattice of ``count`` centers, inset half a cell from each edge.

    Centers are ordered row-major by y, then x.
    """
    side = math.isqrt(count)
    if count < 1 or side * side != count:
        raise ValueError(f"count must be a perfect square, got {count}")
    if arena.width <= 0 or arena.height <= 0:
        raise ValueError("arena must have positive extent")
    xs = arena.xmin + (np.arange(side) + 0.5) * arena.width / side
    ys = arena.ymin + (np.arange(side) + 0.5) * arena.height / side
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    w = default_width(arena, count) if width is None else float(width)
    return BasisLayout(centers, np.full(count, w))


def eval_field(spec: GasFieldSpec, points) -> np.ndarray | float:
    """Concentration at one point (returns float) or many (returns array)."""
    pts = np.asarray(points, dtype=float)
    values = spec.layout.features(pts) @ spec.gains
    if pts.ndim == 1:
        return float(values[0])
    return values


def sample_measurement(spec: GasFieldSpec, point, rng: np.random.Generator) -> float:
    return eval_field(spec, point) + spec.noise_std * rng.standard_normal()


def binarize(y: float, threshold: float) -> int:
    # strict inequality: y == threshold reads as 0
    return int(y > threshold)
