"""Past-supported mollifiers, scalar fields with support tracking, and the norms.

Three quantities are computed on space-time fields:

* ``sup_norm`` over a region,
* ``holder_seminorm`` in the parabolic metric (exact pair sweep with pruning),
* ``neg_holder_norm``: ``max_T T**(2-alpha) * ||zeta_T||`` over dyadic scales.

Mollification reads only the past within parabolic distance ``T``.  Each call
shrinks the region where values are meaningful; ``ScalarField.valid`` tracks
that box and everything outside it is NaN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, signal
from scipy.special import gamma as gamma_fn

from .geometry import Cylinder, GeometryError, SpaceTimeGrid, region_mask


class NormError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernel


@lru_cache(maxsize=None)
def _unit_bump_integral(d: int) -> float:
    # The unit bump lives in a (d+1)-ball after the substitution sigma = 2s - 1
    # (ds = dsigma / 2), so its integral is half the radial bump integral.
    area = 2.0 * math.pi ** ((d + 1) / 2) / gamma_fn((d + 1) / 2)
    radial, _ = integrate.quad(lambda r: r**d * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0, epsabs=1e-14)
    return 0.5 * area * radial


def _support_extent(T: float, dx: float, dt: float) -> tuple[int, int]:
    """Largest time lag J and spatial lag K with j*dt < T^2 and k*dx < T."""
    J = int(math.ceil(T * T / dt - 1e-9)) - 1
    K = int(math.ceil(T / dx - 1e-9)) - 1
    return max(J, 0), max(K, 0)


@dataclass(frozen=True)
class MollifierKernel:
    """Discrete Psi_T.

    ``weights[j, k_1, ..., k_d]`` multiplies ``h(t - j*dt, x - (k - K)*dx)``.
    ``values`` holds the kernel density (weights / cell volume), ``raw_mass``
    the quadrature of the analytically normalised bump before renormalising.
    """

    T: float
    d: int
    dx: float
    dt: float
    weights: np.ndarray
    values: np.ndarray
    raw_mass: float
    kind: str = "bump"

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def J(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def K(self) -> int:
        return (self.weights.shape[1] - 1) // 2

    def lag_coordinates(self):
        """Broadcastable (s, y_1..y_d) arrays: s >= 0 is the look-back time."""
        J, K = self.J, self.K
        out = [(self.dt * np.arange(J + 1)).reshape((-1,) + (1,) * self.d)]
        for ax in range(self.d):
            shp = [1] * (self.d + 1)
            shp[ax + 1] = -1
            out.append((self.dx * np.arange(-K, K + 1)).reshape(shp))
        return out

    def spatial_moment(self, power: int, axis: int = 0) -> float:
        """sum_w w * (-y)^power: the moment seen by h(z - y) when h is a monomial in x."""
        coords = self.lag_coordinates()
        return float(np.sum(self.weights * (-coords[1 + axis]) ** power))

    def distance_moment(self, alpha: float) -> float:
        coords = self.lag_coordinates()
        ynorm = np.sqrt(sum(c * c for c in coords[1:]))
        dist = np.maximum(ynorm, np.sqrt(coords[0]))
        return float(np.sum(self.weights * dist**alpha))


def _bump_kernel(T: float, d: int, dx: float, dt: float) -> MollifierKernel:
    J, K = _support_extent(T, dx, dt)
    s = (dt * np.arange(J + 1)).reshape((-1,) + (1,) * d)
    rho2 = (2.0 * s / (T * T) - 1.0) ** 2
    for ax in range(d):
        shp = [1] * (d + 1)
        shp[ax + 1] = -1
        y = (dx * np.arange(-K, K + 1)).reshape(shp)
        rho2 = rho2 + (y / T) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        bump = np.where(rho2 < 1.0, np.exp(-1.0 / (1.0 - np.minimum(rho2, 1.0 - 1e-300))), 0.0)
    dens = bump / (_unit_bump_integral(d) * T ** (d + 2))
    cell = dt * dx**d
    raw = float(dens.sum() * cell)
    if raw <= 0:
        raise NormError(f"kernel at T={T} has no grid support")
    weights = dens * cell / raw
    return MollifierKernel(T, d, dx, dt, weights, weights / cell, raw, "bump")


def make_kernel(T: float, d: int, grid: SpaceTimeGrid, kind: str = "bump") -> MollifierKernel:
    """Psi_T on the lattice of ``grid``.

    kind="bump" is the smooth bump on the past half of the parabolic ball;
    kind="double" is Psi_{T/2} convolved with itself, still past-supported.
    """
    if d != grid.d:
        raise NormError("kernel dimension differs from grid dimension")
    if not (0 < T <= 1.0 + 1e-12):
        raise NormError(f"scale T={T} outside (0, 1]")
    if T < 4 * grid.dx - 1e-12:
        raise NormError(f"scale T={T} below grid resolution 4*dx={4 * grid.dx}")
    if kind == "bump":
        return _bump_kernel(T, d, grid.dx, grid.dt)
    if kind == "double":
        half = _bump_kernel(T / 2, d, grid.dx, grid.dt)
        w = signal.fftconvolve(half.weights, half.weights, mode="full")
        w = np.clip(w, 0.0, None)
        w /= w.sum()
        cell = grid.dt * grid.dx**d
        return MollifierKernel(T, d, grid.dx, grid.dt, w, w / cell, half.raw_mass**2, "double")
    raise NormError(f"unknown kernel kind {kind!r}")


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class ScalarField:
    """Values on a grid plus the box where they are meaningful.

    ``valid`` is ``(t_lo, x_lo, x_hi)`` in node indices, half open in x and
    extending to the last time level; the same spatial bounds apply on every
    axis.  ``margin`` records the accumulated mollification scale.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    margin: float = 0.0
    valid: tuple | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GeometryError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", vals)
        if self.valid is None:
            object.__setattr__(self, "valid", (0, 0, self.grid.nx))
        if self.margin < 0:
            raise NormError("support margin must be nonnegative")

    def valid_mask(self) -> np.ndarray:
        t_lo, x_lo, x_hi = self.valid
        m = np.zeros(self.grid.shape, dtype=bool)
        m[(slice(t_lo, None),) + (slice(x_lo, x_hi),) * self.grid.d] = True
        return m

    def __neg__(self):
        return replace(self, values=-self.values)

    def scaled(self, c: float) -> "ScalarField":
        return replace(self, values=c * self.values)

    def restrict(self, sub: SpaceTimeGrid) -> "ScalarField":
        """View on an aligned sub-grid, keeping the valid box consistent."""
        sl = sub.sub_slices(self.grid)
        it, ix = sl[0].start, sl[1].start
        t_lo, x_lo, x_hi = self.valid
        valid = (max(t_lo - it, 0), max(x_lo - ix, 0), min(x_hi - ix, sub.nx))
        return ScalarField(sub, self.values[sl], self.margin, valid)


def field_from_function(grid: SpaceTimeGrid, fn) -> ScalarField:
    coords = grid.coordinates()
    vals = np.broadcast_to(np.asarray(fn(*coords), dtype=float), grid.shape).copy()
    return ScalarField(grid, vals)


def _region_inside_valid(h: ScalarField, mask: np.ndarray) -> None:
    if not mask.any():
        raise NormError("empty region")
    if np.any(mask & ~h.valid_mask()):
        raise NormError("region reaches outside the meaningful support of the field")


def _convolve_past(vals: np.ndarray, w: np.ndarray, d: int, method: str) -> np.ndarray:
    """out[n, i] = sum_{j,k} w[j, k] vals[n - j, i - k + K] (zero outside)."""
    J = w.shape[0] - 1
    K = (w.shape[1] - 1) // 2
    nt = vals.shape[0]
    nx = vals.shape[1]
    if method == "direct":
        out = np.zeros_like(vals)
        taps = np.argwhere(w > 0)
        for tap in taps:
            j = tap[0]
            ks = tap[1:] - K
            src = [slice(0, nt - j)]
            dst = [slice(j, nt)]
            for k in ks:
                if k >= 0:
                    src.append(slice(0, nx - k))
                    dst.append(slice(k, nx))
                else:
                    src.append(slice(-k, nx))
                    dst.append(slice(0, nx + k))
            out[tuple(dst)] += w[tuple(tap)] * vals[tuple(src)]
        return out
    full = signal.oaconvolve(vals, w, mode="full")
    sl = (slice(0, nt),) + (slice(K, K + nx),) * d
    return full[sl]


def mollify(h: ScalarField, T: float, kind: str = "bump", method: str = "auto",
            kernel: MollifierKernel | None = None) -> ScalarField:
    """Convolution with Psi_T; the valid box shrinks by the kernel footprint."""
    grid = h.grid
    ker = kernel if kernel is not None else make_kernel(T, grid.d, grid, kind)
    J, K = ker.J, ker.K
    t_lo, x_lo, x_hi = h.valid
    new_valid = (t_lo + J, x_lo + K, x_hi - K)
    if new_valid[0] >= grid.nt or new_valid[1] >= new_valid[2]:
        raise NormError(f"insufficient support margin for T={T}")
    vals = np.where(h.valid_mask(), h.values, 0.0)
    if method == "auto":
        ntaps = int(np.count_nonzero(ker.weights))
        method = "direct" if ntaps <= 48 else "fft"
    out = _convolve_past(vals, ker.weights, grid.d, method)
    res = ScalarField(grid, out, h.margin + T, new_valid)
    return replace(res, values=np.where(res.valid_mask(), out, np.nan))


def sup_norm(h: ScalarField, region) -> float:
    mask = region_mask(region, h.grid)
    _region_inside_valid(h, mask)
    return float(np.max(np.abs(h.values[mask])))


# ---------------------------------------------------------------------------
# regions enlarged by a past ball


def _window_any(mask: np.ndarray, axis: int, before: int, after: int) -> np.ndarray:
    """out[i] = any(mask[i - before : i + after + 1]) along ``axis``."""
    n = mask.shape[axis]
    c = np.cumsum(mask, axis=axis, dtype=np.int64)
    c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
    idx = np.arange(n)
    hi = np.clip(idx + after + 1, 0, n)
    lo = np.clip(idx - before, 0, n)
    return (np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)) > 0


def enlarge_region(region, grid: SpaceTimeGrid, T: float) -> np.ndarray:
    """region + B(0, T): every node some region node reads within a past ball of radius T.

    In d >= 2 the spatial disc is replaced by its bounding box, which only
    ever enlarges the result.
    """
    mask = region_mask(region, grid)
    J, K = _support_extent(T, grid.dx, grid.dt)
    out = _window_any(mask, 0, 0, J)
    for ax in range(1, grid.d + 1):
        out = _window_any(out, ax, K, K)
    return out


# ---------------------------------------------------------------------------
# Hoelder seminorms


def _lag_list(shape, spacing_t, spacing_x, min_dist, max_dist):
    nt = shape[0]
    ns = shape[1:]
    kt = np.arange(nt)
    axes = [kt] + [np.arange(-(n - 1), n) for n in ns]
    grids = np.meshgrid(*axes, indexing="ij")
    lags = np.stack([g.ravel() for g in grids], axis=1)
    # keep one representative of each +-lag pair
    first_nonzero = np.zeros(len(lags), dtype=bool)
    decided = np.zeros(len(lags), dtype=bool)
    for c in range(lags.shape[1]):
        col = lags[:, c]
        first_nonzero |= ~decided & (col > 0)
        decided |= col != 0
    lags = lags[first_nonzero]
    xs = lags[:, 1:] * spacing_x
    dist = np.maximum(np.sqrt((xs * xs).sum(axis=1)), np.sqrt(lags[:, 0] * spacing_t))
    keep = dist >= min_dist * (1 - 1e-12)
    if max_dist is not None:
        keep &= dist <= max_dist * (1 + 1e-12)
    lags, dist = lags[keep], dist[keep]
    order = np.argsort(dist, kind="stable")
    return lags[order], dist[order]


def _pair_slices(lag, shape):
    a, b = [], []
    for k, n in zip(lag, shape):
        k = int(k)
        if k >= 0:
            a.append(slice(k, n))
            b.append(slice(0, n - k))
        else:
            a.append(slice(0, n + k))
            b.append(slice(-k, n))
    return tuple(a), tuple(b)


def holder_seminorm(h: ScalarField, alpha: float, region, stride: int = 1,
                    max_distance: float | None = None, min_distance: float | None = None) -> float:
    """Parabolic alpha-Hoelder seminorm over pairs of region nodes.

    Pairs closer than ``2*dx`` are ignored.  ``stride`` restricts to a
    sub-lattice (every stride^2 time levels, every stride-th point in space),
    which can only lower the value.  ``max_distance`` keeps pairs at most
    that far apart (local seminorms).
    """
    if not (0 < alpha < 1):
        raise NormError("alpha must lie in (0, 1)")
    grid = h.grid
    mask = region_mask(region, grid)
    _region_inside_valid(h, mask)
    idx = np.nonzero(mask)
    lo = [int(i.min()) for i in idx]
    hi = [int(i.max()) + 1 for i in idx]
    s = int(stride)
    sl = (slice(lo[0], hi[0], s * s),) + tuple(slice(lo[a], hi[a], s) for a in range(1, grid.d + 1))
    vals = h.values[sl]
    m = mask[sl]
    min_d = 2 * grid.dx if min_distance is None else min_distance
    lags, dist = _lag_list(vals.shape, s * s * grid.dt, s * grid.dx, min_d, max_distance)
    if len(lags) == 0 or m.sum() < 2:
        raise NormError("region has fewer than 2 admissible pairs")
    inside = vals[m]
    osc = float(inside.max() - inside.min())
    if osc == 0.0:
        return 0.0
    # one-step increments along each axis of the bounding box give a
    # telescoping bound; only usable when the whole box is finite
    box_finite = bool(np.all(np.isfinite(vals)))
    steps = []
    for ax in range(vals.ndim):
        if box_finite and vals.shape[ax] > 1:
            steps.append(float(np.max(np.abs(np.diff(vals, axis=ax)))))
        else:
            steps.append(np.inf)
    steps = np.asarray(steps)
    best = 0.0
    da_all = dist**alpha
    tele_all = np.abs(lags) @ np.where(np.isfinite(steps), steps, 0.0) if box_finite else None
    chunk = 4096
    for c0 in range(0, len(lags), chunk):
        if osc / da_all[c0] <= best:
            break
        sel = np.arange(c0, min(c0 + chunk, len(lags)))
        bound = osc / da_all[sel]
        if tele_all is not None:
            bound = np.minimum(osc, tele_all[sel]) / da_all[sel]
        for i in sel[bound > best]:
            if (tele_all is not None and min(osc, tele_all[i]) / da_all[i] <= best) or osc / da_all[i] <= best:
                continue
            a, b = _pair_slices(lags[i], vals.shape)
            both = m[a] & m[b]
            if not both.any():
                continue
            q = np.abs(vals[a][both] - vals[b][both]).max() / da_all[i]
            if q > best:
                best = float(q)
    return best


def path_holder_seminorm(paths: np.ndarray, dt: float, alpha: float) -> np.ndarray:
    """Time-Hoelder seminorm sup |w(t) - w(s)| / |t - s|^alpha of sampled paths.

    ``paths`` has shape (n_paths, n_points); returns one value per path.
    Lags are visited shortest first and a path drops out once its
    oscillation can no longer beat its running maximum.
    """
    w = np.atleast_2d(np.asarray(paths, dtype=float))
    n = w.shape[1]
    osc = w.max(axis=1) - w.min(axis=1)
    best = np.zeros(w.shape[0])
    active = np.arange(w.shape[0])
    for lag in range(1, n):
        da = (lag * dt) ** alpha
        active = active[osc[active] / da > best[active]]
        if active.size == 0:
            break
        sub = w[active]
        q = np.abs(sub[:, lag:] - sub[:, :-lag]).max(axis=1) / da
        best[active] = np.maximum(best[active], q)
    return best


# ---------------------------------------------------------------------------
# negative Hoelder norm


def dyadic_scales(dx: float, T_max: float = 1.0) -> list[float]:
    out = []
    k = 0
    while 2.0**-k >= 4 * dx - 1e-12:
        if 2.0**-k <= T_max + 1e-12:
            out.append(2.0**-k)
        k += 1
    return out


def block_average(h: ScalarField, b: int) -> ScalarField:
    """Average over blocks of b^2 time levels and b nodes per axis.

    Blocks are aligned to end at the last time level and to start at the
    first valid spatial index; the coarse lattice again has dt = dx^2.
    Cell averages of white noise map to cell averages on the coarse grid.
    """
    g = h.grid
    if b == 1:
        return h
    bt = b * b
    t_lo, x_lo, x_hi = h.valid
    n_tb = (g.nt - t_lo) // bt
    n_xb = (x_hi - x_lo) // b
    if n_tb < 2 or n_xb < 3:
        raise NormError("field too small to coarsen by this factor")
    t0 = g.nt - n_tb * bt
    vals = h.values[(slice(t0, g.nt),) + (slice(x_lo, x_lo + n_xb * b),) * g.d]
    shp = [n_tb, bt]
    for _ in range(g.d):
        shp += [n_xb, b]
    vals = vals.reshape(shp).mean(axis=tuple(range(1, 2 * g.d + 2, 2)))
    tc0 = g.t[t0] + (bt - 1) * g.dt / 2
    xc0 = g.x[x_lo] + (b - 1) * g.dx / 2
    dxc = b * g.dx
    coarse = SpaceTimeGrid(
        d=g.d,
        nx=n_xb,
        t_range=(tc0, tc0 + (n_tb - 1) * dxc * dxc),
        x_range=(xc0, xc0 + (n_xb - 1) * dxc),
    )
    return ScalarField(coarse, vals, h.margin)


def neg_holder_profile(zeta: ScalarField, alpha: float, region, scales=None,
                       coarsen: bool = False, points_per_scale: int = 16,
                       kind: str = "bump") -> dict:
    """T -> T^(2-alpha) * sup_region |zeta_T| for each scale.

    With ``coarsen=True`` and a Cylinder region, scales with
    T / dx >= 2 * points_per_scale are evaluated after block-averaging so
    that at least ``points_per_scale`` coarse cells span T.  The default is
    the exact fine-grid computation.
    """
    grid = zeta.grid
    if scales is None:
        scales = dyadic_scales(grid.dx)
    scales = [float(T) for T in scales if T >= 4 * grid.dx - 1e-12 and T <= 1 + 1e-12]
    if not scales:
        raise NormError("no admissible scale between 4*dx and 1")
    if coarsen and not isinstance(region, Cylinder):
        raise NormError("coarsened evaluation needs a Cylinder region")
    out = {}
    for T in scales:
        b = 1
        if coarsen:
            b = max(1, int(T / (points_per_scale * grid.dx)))
        if b > 1:
            hc = block_average(zeta, b)
            hT = mollify(hc, T, kind=kind)
            mask = region_mask(region, hc.grid)
            mask &= hT.valid_mask()
            val = float(np.max(np.abs(hT.values[mask]))) if mask.any() else 0.0
        else:
            hT = mollify(zeta, T, kind=kind)
            val = sup_norm(hT, region)
        out[T] = T ** (2 - alpha) * val
    return out


def neg_holder_norm(zeta: ScalarField, alpha: float, region, scales=None,
                    coarsen: bool = False, points_per_scale: int = 16,
                    kind: str = "bump") -> float:
    """[zeta]_{alpha-2} on a region from dyadic mollification scales."""
    if not (0 < alpha < 1):
        raise NormError("alpha must lie in (0, 1)")
    prof = neg_holder_profile(zeta, alpha, region, scales, coarsen, points_per_scale, kind)
    return max(prof.values())


def dense_scales(dx: float, n: int = 64) -> np.ndarray:
    return np.geomspace(4 * dx, 1.0, n)


def mollification_error(h: ScalarField, T: float, alpha: float, region) -> float:
    """sup_region |h_T - h|."""
    hT = mollify(h, T)
    mask = region_mask(region, h.grid)
    _region_inside_valid(hT, mask)
    return float(np.max(np.abs(hT.values[mask] - h.values[mask])))


def mollification_error_bound(h: ScalarField, T: float, alpha: float, region, stride: int = 1) -> float:
    """T^alpha times the Hoelder seminorm over pairs at most 2T apart in region + B(0,T)."""
    big = enlarge_region(region, h.grid, T)
    return T**alpha * holder_seminorm(h, alpha, big, stride=stride, max_distance=2 * T)
