"""Parabolic metric, past-looking balls, nested cylinders and space-time grids.

Points are written ``(t, x)`` with ``x`` a length-``d`` vector.  Distances use
the parabolic scaling of the heat operator, so one unit of space costs the
same as one unit of *squared* time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    t: float
    x: tuple

    def __init__(self, t: float, x: float | Sequence[float]):
        xs = tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))
        if len(xs) < 1:
            raise GeometryError("a point needs at least one spatial coordinate")
        if not (np.isfinite(t) and all(np.isfinite(xs))):
            raise GeometryError("point coordinates must be finite")
        object.__setattr__(self, "t", float(t))
        object.__setattr__(self, "x", xs)

    @property
    def d(self) -> int:
        return len(self.x)


def parabolic_distance(z1: Point, z2: Point) -> float:
    """max(|x1 - x2|, sqrt|t1 - t2|)."""
    if z1.d != z2.d:
        raise GeometryError(f"dimension mismatch: {z1.d} vs {z2.d}")
    dx = np.asarray(z1.x) - np.asarray(z2.x)
    return float(max(np.sqrt(np.dot(dx, dx)), np.sqrt(abs(z1.t - z2.t))))


def parabolic_distance_array(dt, dx_norm):
    """Vectorised distance from a time gap and a Euclidean spatial gap."""
    return np.maximum(np.abs(dx_norm), np.sqrt(np.abs(dt)))


@dataclass(frozen=True)
class ParabolicBall:
    """Ball of the parabolic metric that only looks into the past of its center."""

    center: Point
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise GeometryError("radius must be nonnegative")


def ball_membership(ball: ParabolicBall, z: Point) -> bool:
    if z.d != ball.center.d:
        raise GeometryError(f"dimension mismatch: {z.d} vs {ball.center.d}")
    return parabolic_distance(z, ball.center) < ball.radius and z.t < ball.center.t


@dataclass(frozen=True)
class Cylinder:
    """P_R = (R^2, 1) x (-(1-R), 1-R)^d for 0 <= R <= 1/2.  ``Cylinder(0, d)`` is the unit cylinder."""

    R: float
    d: int = 1

    def __post_init__(self):
        if not (0.0 <= self.R <= 0.5):
            raise GeometryError(f"cylinder offset R={self.R} outside [0, 1/2]")
        if self.d < 1:
            raise GeometryError("d must be >= 1")

    @property
    def t_lo(self) -> float:
        return self.R**2

    @property
    def half_width(self) -> float:
        return 1.0 - self.R

    def contains(self, t, x, tol_t: float = 0.0, tol_x: float = 0.0):
        """Strict membership, shrunk inward by the given tolerances.

        ``x`` may carry a trailing axis of length d; a scalar or an array
        without that axis is read as d = 1.
        """
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        ok_t = (t > self.t_lo + tol_t) & (t < 1.0 - tol_t)
        ok_x = np.all(np.abs(x) < self.half_width - tol_x, axis=-1)
        return ok_t & ok_x


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform lattice with dt = dx^2 over [t0, t1] x [x_lo, x_hi]^d.

    ``nx`` counts points per spatial axis including both end points.  The
    number of time levels follows from ``dt = dx**2``.
    """

    d: int = 1
    nx: int = 257
    t_range: tuple = (0.0, 1.0)
    x_range: tuple = (-1.0, 1.0)
    dx: float = field(init=False)
    dt: float = field(init=False)
    nt: int = field(init=False)

    def __post_init__(self):
        if self.d < 1 or self.d > 3:
            raise GeometryError("only 1 <= d <= 3 is supported")
        if self.nx < 3:
            raise GeometryError("need at least 3 points per axis")
        x_lo, x_hi = map(float, self.x_range)
        t0, t1 = map(float, self.t_range)
        if not (x_hi > x_lo and t1 > t0):
            raise GeometryError("empty grid range")
        dx = (x_hi - x_lo) / (self.nx - 1)
        dt = dx * dx
        steps = (t1 - t0) / dt
        nsteps = int(round(steps))
        if abs(steps - nsteps) > 1e-6 * max(1.0, steps):
            raise GeometryError("time range is not a whole number of steps dt = dx^2")
        object.__setattr__(self, "t_range", (t0, t1))
        object.__setattr__(self, "x_range", (x_lo, x_hi))
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "nt", nsteps + 1)

    @classmethod
    def default(cls, d: int = 1, nx: int | None = None) -> "SpaceTimeGrid":
        # d = 1 uses 257 points; d = 2 keeps a similar node budget with 65
        if nx is None:
            nx = {1: 257, 2: 65, 3: 17}[d]
        return cls(d=d, nx=nx)

    @property
    def t(self) -> np.ndarray:
        return self.t_range[0] + self.dt * np.arange(self.nt)

    @property
    def x(self) -> np.ndarray:
        return self.x_range[0] + self.dx * np.arange(self.nx)

    @property
    def shape(self) -> tuple:
        return (self.nt,) + (self.nx,) * self.d

    @property
    def spatial_shape(self) -> tuple:
        return (self.nx,) * self.d

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self):
        """Broadcastable (t, x_1, ..., x_d) coordinate arrays."""
        out = [self.t.reshape((-1,) + (1,) * self.d)]
        for ax in range(self.d):
            shp = [1] * (self.d + 1)
            shp[ax + 1] = -1
            out.append(self.x.reshape(shp))
        return out

    def extended(self, margin: float = 1.0) -> "SpaceTimeGrid":
        """Same spacing, widened by ``margin`` in space and ``margin**2`` into the past."""
        k = int(round(margin / self.dx))
        if abs(k * self.dx - margin) > 1e-9:
            raise GeometryError("margin must be a multiple of dx")
        kt = k * k
        return SpaceTimeGrid(
            d=self.d,
            nx=self.nx + 2 * k,
            t_range=(self.t_range[0] - kt * self.dt, self.t_range[1]),
            x_range=(self.x_range[0] - k * self.dx, self.x_range[1] + k * self.dx),
        )

    def offset_in(self, outer: "SpaceTimeGrid") -> tuple:
        """Index offsets (time, space) of this grid's origin inside ``outer``."""
        if abs(outer.dx - self.dx) > 1e-12 or outer.d != self.d:
            raise GeometryError("grids have different spacing or dimension")
        it = (self.t_range[0] - outer.t_range[0]) / self.dt
        ix = (self.x_range[0] - outer.x_range[0]) / self.dx
        it_r, ix_r = int(round(it)), int(round(ix))
        if abs(it - it_r) > 1e-6 or abs(ix - ix_r) > 1e-6 or it_r < 0 or ix_r < 0:
            raise GeometryError("grid is not aligned inside the outer grid")
        if it_r + self.nt > outer.nt or ix_r + self.nx > outer.nx:
            raise GeometryError("grid does not fit inside the outer grid")
        return it_r, ix_r

    def sub_slices(self, outer: "SpaceTimeGrid") -> tuple:
        it, ix = self.offset_in(outer)
        return (slice(it, it + self.nt),) + (slice(ix, ix + self.nx),) * self.d

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "nx": self.nx,
            "nt": self.nt,
            "dx": self.dx,
            "dt": self.dt,
            "t_range": list(self.t_range),
            "x_range": list(self.x_range),
        }


def region_mask(region, grid: SpaceTimeGrid) -> np.ndarray:
    """Boolean node mask for a Cylinder, or pass a mask through after a shape check."""
    if isinstance(region, Cylinder):
        if region.d != grid.d:
            raise GeometryError("cylinder and grid dimensions differ")
        coords = grid.coordinates()
        t = coords[0]
        ok = (t > region.t_lo + grid.dt / 2) & (t < 1.0 - grid.dt / 2)
        lim = region.half_width - grid.dx / 2
        for xc in coords[1:]:
            ok = ok & (np.abs(xc) < lim)
        return np.broadcast_to(ok, grid.shape).copy()
    mask = np.asarray(region, dtype=bool)
    if mask.shape != grid.shape:
        raise GeometryError(f"region mask shape {mask.shape} != grid shape {grid.shape}")
    return mask


def cylinder_region(R: float, grid: SpaceTimeGrid) -> np.ndarray:
    """Grid nodes strictly inside P_R, with a half-cell tolerance on each face."""
    return region_mask(Cylinder(R, grid.d), grid)
