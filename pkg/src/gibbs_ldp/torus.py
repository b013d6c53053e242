"""Periodic cube geometry: windows, configurations and cell-list neighbour search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import (
    ConfigError,
    DuplicatePoints,
    PointOutsideWindow,
    RadiusTooLarge,
    SideTooLarge,
)


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class TorusWindow:
    """Centered cube of volume ``n / intensity`` with opposite faces identified.

    ``point_budget`` is the number of points of the canonical ensemble living
    in the window; the side length follows from it.
    """

    dim: int
    intensity: float
    point_budget: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ConfigError(f"dimension must be an integer >= 2, got {self.dim}")
        if not (self.intensity > 0 and math.isfinite(self.intensity)):
            raise ConfigError(f"intensity must be positive, got {self.intensity}")
        if int(self.point_budget) != self.point_budget or self.point_budget < 1:
            raise ConfigError(f"point budget must be a positive integer, got {self.point_budget}")

    @property
    def side(self) -> float:
        return (self.point_budget / self.intensity) ** (1.0 / self.dim)

    @property
    def volume(self) -> float:
        return self.side ** self.dim

    @property
    def half(self) -> float:
        return 0.5 * self.side

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return x.shape == (self.dim,) and bool(np.all((x >= -self.half) & (x < self.half)))

    def check_radius(self, rho: float) -> None:
        if not rho > 0:
            raise ConfigError(f"radius must be positive, got {rho}")
        if 2.0 * rho >= self.side:
            raise RadiusTooLarge(
                f"radius {rho} too large for window side {self.side:.6g} (need 2*radius < side)"
            )

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map coordinates into the half-open cube [-side/2, side/2)."""
        w = self.side
        y = np.mod(np.asarray(x, dtype=float) + self.half, w) - self.half
        # np.mod can round up to exactly +half for tiny negative inputs
        return np.where(y >= self.half, y - w, y)


@dataclass(frozen=True, eq=False)
class Configuration:
    """A finite simple point set inside a :class:`TorusWindow`.

    Points are stored as a read-only ``(N, d)`` array; point ids are row
    positions.
    """

    window: TorusWindow
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = self.window
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, w.dim)
        if pts.size and not np.all((pts >= -w.half) & (pts < w.half)):
            raise PointOutsideWindow("configuration has points outside the half-open window")
        if len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
            raise DuplicatePoints("configuration points must be pairwise distinct")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"Configuration(n_points={len(self)}, window={self.window})"

    def replace_points(self, points) -> "Configuration":
        return Configuration(self.window, points)

    def cell_index(self, cell_side: float) -> "CellIndex":
        return CellIndex.build(self.points, self.window.side, cell_side)

    def neighbor_lists(self, rho: float) -> tuple[np.ndarray, np.ndarray]:
        """CSR ``(indptr, indices)`` of periodic closed-ball neighbours, self excluded."""
        self.window.check_radius(rho)
        return self._neighbor_cache(rho)

    def _neighbor_cache(self, rho):
        cache = self.__dict__.setdefault("_nbr_cache", {})
        if rho not in cache:
            cache[rho] = self.cell_index(rho).neighbor_csr(rho)
        return cache[rho]

    def neighbor_counts(self, rho: float) -> np.ndarray:
        indptr, _ = self.neighbor_lists(rho)
        return np.diff(indptr)


@dataclass(frozen=True, eq=False)
class CellIndex:
    """Cell list over a periodic box: points bucketed into cubic cells of side >= ``cell_side``."""

    pts: np.ndarray = field(repr=False)
    side: float
    cell_side: float
    g: int
    order: np.ndarray = field(repr=False)
    starts: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, pts, side: float, cell_side: float) -> "CellIndex":
        pts = np.ascontiguousarray(pts, dtype=float)
        n, d = pts.shape
        g = K.grid_size(side, cell_side, n, d)
        ids = K.cell_ids(pts, side, g) if n else np.empty(0, dtype=np.int64)
        order = np.argsort(ids, kind="stable")
        starts = np.searchsorted(ids[order], np.arange(g**d + 1))
        return cls(pts, float(side), float(cell_side), g, order, starts, K.neighbor_offsets(g, d))

    @property
    def actual_cell_side(self) -> float:
        return self.side / self.g

    def query(self, center, rho: float, exclude: int = -1) -> np.ndarray:
        if rho > self.actual_cell_side and self.g > 1:
            raise ConfigError("query radius exceeds the cell side of this index")
        center = np.ascontiguousarray(center, dtype=float)
        if len(self.pts) == 0:
            return np.empty(0, dtype=np.int64)
        ids = K.ball_query(center, self.pts, self.side, float(rho), self.g, self.order,
                           self.starts, self.offsets, exclude)
        return np.sort(ids)

    def neighbor_csr(self, rho: float):
        if rho > self.actual_cell_side and self.g > 1:
            raise ConfigError("query radius exceeds the cell side of this index")
        n = len(self.pts)
        if n == 0:
            return np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64)
        return K.neighbor_csr(self.pts, self.side, float(rho), self.g, self.order,
                              self.starts, self.offsets)


def torus_distance(x, y, w: TorusWindow) -> float:
    """Euclidean distance under coordinate-wise wraparound."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (w.contains(x) and w.contains(y)):
        raise PointOutsideWindow(f"points {x}, {y} must lie in the window")
    dx = y - x
    dx = dx - w.side * np.floor(dx / w.side + 0.5)
    return float(math.sqrt(float(np.dot(dx, dx))))


def periodic_ball_points(omega: Configuration, center, rho: float) -> np.ndarray:
    """Ids of points within closed torus distance ``rho`` of ``center``, ascending."""
    w = omega.window
    w.check_radius(rho)
    center = np.asarray(center, dtype=float)
    if not w.contains(center):
        raise PointOutsideWindow(f"center {center} outside window")
    if len(omega) == 0:
        return np.empty(0, dtype=np.int64)
    return omega.cell_index(rho).query(center, rho)


def periodic_cube_count(omega: Configuration, center, s: float) -> int:
    """Number of points in the periodized half-open cube ``center + [-s/2, s/2)^d``."""
    w = omega.window
    if not s > 0:
        raise ConfigError("cube side must be positive")
    if s > w.side:
        raise SideTooLarge(f"cube side {s} exceeds window side {w.side}")
    if len(omega) == 0:
        return 0
    rel = w.wrap(omega.points - np.asarray(center, dtype=float))
    inside = np.all((rel >= -0.5 * s) & (rel < 0.5 * s), axis=1)
    return int(np.count_nonzero(inside))
