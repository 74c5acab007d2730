"""Time integrators for the reaction ODE and the reaction-diffusion equation.

The reaction part u' = -f(u) is always advanced exactly (closed form for
powers, an Osgood-integral table otherwise), so arbitrarily large data
never destabilise the scheme.  One grid step of ``solve_rd_batch`` is

    half reaction -> diffusion -> + g dt + sigma zeta dt -> half reaction

with Dirichlet data written on the lateral faces after every sub-step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, sparse
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .geometry import SpaceTimeGrid
from .kernels import ScalarField
from .nonlinearity import Nonlinearity


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# reaction flow


class _OsgoodTable:
    """x(tau) = G^{-1}(G(x0) + tau) with G(x) = int_x^inf du / f(u).

    G is tabulated in log x and inverted with monotone cubic interpolation.
    Below the table the flow is linearised at 0.
    """

    def __init__(self, nl: Nonlinearity, lo: float = 1e-8, hi: float = 1e12, n: int = 20001):
        self.nl = nl
        if nl.kind == "sinh":
            hi = min(hi, 600.0)
        self.logx = np.linspace(math.log(lo), math.log(hi), n)
        x = np.exp(self.logx)
        # G(x) = tail + int_{log x}^{log hi} u/f(u) dlog u.  Between nodes the
        # integrand is taken log-linear, which is exact for exponential decay
        # and never produces negative increments.
        h = 1.0 / nl.rate_from_log(self.logx)
        lh = np.log(h)
        ds = np.diff(self.logx)
        dl = np.diff(lh)
        with np.errstate(divide="ignore", invalid="ignore"):
            piece = np.where(np.abs(dl) > 1e-8, ds * (h[1:] - h[:-1]) / dl, ds * 0.5 * (h[1:] + h[:-1]))
        tail, _ = integrate.quad(lambda s: 1.0 / float(nl.rate_from_log(s)), self.logx[-1], np.inf, limit=400)
        G = tail + np.concatenate([np.cumsum(piece[::-1])[::-1], [0.0]])
        self.logG = np.log(np.maximum(G, 1e-300))
        self.fwd = PchipInterpolator(self.logx, self.logG)
        self.inv = PchipInterpolator(self.logG[::-1], self.logx[::-1])
        self.slope0 = float(nl.df(0.0))
        self.lo, self.hi = lo, hi

    def G(self, a):
        out = np.exp(self.fwd(np.log(np.clip(a, self.lo, self.hi))))
        big = a > self.hi
        if np.any(big):
            out = np.array(out, dtype=float)
            out[big] = [integrate.quad(lambda s: 1.0 / float(self.nl.rate_from_log(s)), math.log(v), np.inf)[0]
                        for v in a[big]]
        return out

    def flow(self, x0, tau):
        x0 = np.asarray(x0, dtype=float)
        a = np.abs(x0)
        small = a < self.lo
        target = self.G(np.where(small, self.lo, a)) + tau
        logx = self.inv(np.log(target))
        out = np.exp(logx)
        lin = a * math.exp(-self.slope0 * tau)
        out = np.where(small, lin, np.minimum(out, a))
        return np.sign(x0) * out


@lru_cache(maxsize=16)
def _table(nl: Nonlinearity) -> _OsgoodTable:
    return _OsgoodTable(nl)


def _osgood_between(nl: Nonlinearity, s_lo: float, s_hi: float) -> float:
    """int du/f(u) for log u in [s_lo, s_hi], summed over unit pieces in log u."""
    inv = lambda s: 1.0 / float(nl.rate_from_log(s))
    total = 0.0
    s = s_lo
    with np.errstate(over="ignore"):
        while s < s_hi:
            e = min(s + 1.0, s_hi)
            if inv(s) == 0.0:
                break
            total += integrate.quad(inv, s, e, epsrel=1e-13, epsabs=0, limit=200)[0]
            s = e
    return total


def _flow_scalar_exact(nl: Nonlinearity, x0: float, tau: float) -> float:
    """Root of int_x^x0 du/f(u) = tau, by quadrature and bracketing in log x."""
    a = abs(x0)
    if a == 0 or tau == 0:
        return float(x0)
    la = math.log(a)
    lo = la - 1.0
    while _osgood_between(nl, lo, la) < tau:
        lo -= 2.0 * (la - lo)
        if lo < -690.0:
            return 0.0
    s = brentq(lambda v: _osgood_between(nl, v, la) - tau, lo, la, xtol=1e-14, rtol=1e-14, maxiter=500)
    return math.copysign(math.exp(s), x0)


def reaction_flow(nl: Nonlinearity, x0, tau: float, exact: bool = False):
    """Solution at time tau of x' = -f(x), x(0) = x0 (elementwise on arrays).

    Powers use the closed form.  Other families use the tabulated Osgood
    integral, or ``exact=True`` for a quadrature-and-root solve per value.
    """
    if tau < 0:
        raise SolverError("tau must be nonnegative")
    x0a = np.asarray(x0, dtype=float)
    if tau == 0:
        return x0a.copy() if x0a.ndim else float(x0a)
    if nl.is_polynomial:
        m = nl.m
        with np.errstate(divide="ignore", over="ignore"):
            a = np.abs(x0a)
            out = np.sign(x0a) * (a ** (1 - m) + (m - 1) * tau) ** (-1.0 / (m - 1))
        out = np.where(a == 0, 0.0, out)
    elif exact or x0a.ndim == 0:
        out = np.vectorize(lambda v: _flow_scalar_exact(nl, float(v), tau))(x0a)
    else:
        out = _table(nl).flow(x0a, tau)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# ODE


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray   # (n_points,) or (n_paths, n_points)


def solve_ode(nl: Nonlinearity, x0, w, n_steps: int) -> Trajectory:
    """x(t) = x0 - int_0^t f(x) + w(t) on [0, 1] by reaction flow plus increments.

    ``w`` holds the path at the n_steps+1 step times (leading axis = paths),
    or is None / 0 for the pure ODE.  Vectorised over paths.
    """
    if n_steps < 100:
        raise SolverError("n_steps must be at least 100")
    dt = 1.0 / n_steps
    x = np.asarray(x0, dtype=float).copy()
    if w is None or np.isscalar(w) and w == 0:
        inc = None
    else:
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != n_steps + 1:
            raise SolverError("w must be sampled at the n_steps + 1 step times")
        inc = np.diff(w, axis=-1)
        x = np.broadcast_to(x, w.shape[:-1]).copy()
    out = np.empty(x.shape + (n_steps + 1,))
    out[..., 0] = x
    if nl.is_polynomial:
        # same closed-form step as reaction_flow, without its per-call overhead;
        # x = 0 maps to sign(0) * inf^(-1/(m-1)) = 0
        p, c, e = 1.0 - nl.m, (nl.m - 1.0) * dt, -1.0 / (nl.m - 1.0)

        def flow(v):
            return np.sign(v) * (np.abs(v) ** p + c) ** e
    else:
        def flow(v):
            return reaction_flow(nl, v, dt)
    with np.errstate(divide="ignore", over="ignore"):
        for k in range(n_steps):
            x = flow(x)
            if inc is not None:
                x = x + inc[..., k]
            out[..., k + 1] = x
    return Trajectory(np.linspace(0.0, 1.0, n_steps + 1), out)


def brownian_paths(n_paths: int, n_steps: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((n_paths, n_steps)) * math.sqrt(1.0 / n_steps)
    return np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)


# ---------------------------------------------------------------------------
# boundary data


def boundary_mask(grid: SpaceTimeGrid) -> np.ndarray:
    m = np.zeros(grid.spatial_shape, dtype=bool)
    for ax in range(grid.d):
        idx = [slice(None)] * grid.d
        idx[ax] = 0
        m[tuple(idx)] = True
        idx[ax] = -1
        m[tuple(idx)] = True
    return m


@dataclass
class BoundaryData:
    """Initial slice and lateral values.

    ``lateral(t)`` returns a spatial array whose boundary entries are used;
    if it is None the boundary values of ``initial`` are held fixed.
    """

    initial: np.ndarray
    lateral: Callable | None = None
    magnitude_tag: float | None = None
    family: str = "custom"

    def lateral_at(self, t: float) -> np.ndarray:
        if self.lateral is None:
            return self.initial
        return np.asarray(self.lateral(t), dtype=float)

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, M: float) -> "BoundaryData":
        return cls(np.full(grid.spatial_shape, float(M)), None, float(M), "constant")

    @classmethod
    def zero(cls, grid: SpaceTimeGrid) -> "BoundaryData":
        return cls.constant(grid, 0.0)

    @classmethod
    def oscillating(cls, grid: SpaceTimeGrid, M: float, freq: float = 8.0) -> "BoundaryData":
        """Lateral trace M cos(2 pi freq t) with opposite signs on opposite faces."""
        x = grid.coordinates()[1:]
        sgn = np.sign(np.broadcast_to(x[0][0], grid.spatial_shape))
        init = np.full(grid.spatial_shape, float(M)) * np.where(sgn == 0, 1.0, sgn)
        return cls(init, lambda t: init * math.cos(2 * math.pi * freq * t), float(M), "oscillating")

    @classmethod
    def random_trace(cls, grid: SpaceTimeGrid, M: float, seed: int, n_modes: int = 6) -> "BoundaryData":
        """Random initial slice in [-M, M] and a random smooth lateral trace."""
        rng = np.random.default_rng(seed)
        init = M * rng.uniform(-1, 1, grid.spatial_shape)
        amp = rng.uniform(-1, 1, (n_modes,) + grid.spatial_shape) / n_modes
        freq = rng.uniform(0.5, 20, n_modes)
        phase = rng.uniform(0, 2 * np.pi, n_modes)

        def lateral(t):
            return M * np.tensordot(np.cos(freq * t + phase), amp, axes=1)

        return cls(init, lateral, float(M), "random")


# ---------------------------------------------------------------------------
# diffusion


class _Diffusion:
    """Monotone diffusion step of length dt with Dirichlet faces.

    d = 1: four explicit sub-steps with mesh ratio 1/4.  d >= 2: backward
    Euler with a cached sparse LU of the interior operator.
    """

    def __init__(self, grid: SpaceTimeGrid, substeps: int = 4):
        self.grid = grid
        self.d = grid.d
        self.substeps = substeps
        self.r = grid.dt / grid.dx**2 / substeps
        if self.d == 1 and self.r > 0.5:
            raise SolverError("explicit diffusion sub-step violates the monotonicity limit")
        if self.d >= 2:
            n = grid.nx - 2
            lap1 = sparse.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / grid.dx**2
            eye = sparse.identity(n)
            L = None
            for ax in range(self.d):
                mats = [eye] * self.d
                mats[ax] = lap1
                term = mats[0]
                for mm in mats[1:]:
                    term = sparse.kron(term, mm)
                L = term if L is None else L + term
            A = sparse.identity(n**self.d) - grid.dt * L
            self.lu = splu(A.tocsc())
            self.n = n

    def step(self, u: np.ndarray, bvals: np.ndarray, bmask: np.ndarray) -> np.ndarray:
        """u has shape (B, *spatial); boundary entries are replaced by bvals."""
        u = np.where(bmask, bvals, u)
        if self.d == 1:
            r = self.r
            for _ in range(self.substeps):
                lap = u[:, 2:] - 2 * u[:, 1:-1] + u[:, :-2]
                u[:, 1:-1] = u[:, 1:-1] + r * lap
            return u
        n = self.n
        B = u.shape[0]
        inner = (slice(None),) + (slice(1, -1),) * self.d
        rhs = u[inner].copy()
        coef = self.grid.dt / self.grid.dx**2
        # boundary neighbours enter the right-hand side
        for ax in range(1, self.d + 1):
            lo = [slice(None)] + [slice(1, -1)] * self.d
            hi = list(lo)
            lo[ax] = 0
            hi[ax] = -1
            first = [slice(None)] * (self.d + 1)
            last = list(first)
            first[ax] = 0
            last[ax] = -1
            rhs[tuple(first)] += coef * u[tuple(lo)]
            rhs[tuple(last)] += coef * u[tuple(hi)]
        sol = self.lu.solve(rhs.reshape(B, -1).T).T.reshape((B,) + (n,) * self.d)
        u = u.copy()
        u[inner] = sol
        return u


# ---------------------------------------------------------------------------
# reaction-diffusion


@dataclass
class SolveResult:
    field: np.ndarray | None                 # (B, nt, *spatial) when kept
    sups: np.ndarray | None = None           # (B, n_regions)
    final: np.ndarray | None = None          # (B, *spatial)
    info: dict = field(default_factory=dict)


def _forcing_values(g, grid: SpaceTimeGrid, t: float, xs):
    if g is None:
        return 0.0
    if callable(g):
        return np.asarray(g(t, *xs), dtype=float)
    return float(g)


def solve_rd_batch(nl: Nonlinearity | None, zeta, g, bcs, grid: SpaceTimeGrid, sigma=None,
                   keep_field: bool = True, sup_regions=None) -> SolveResult:
    """Strang-split solve for a batch sharing one grid.

    zeta: None, an array broadcastable to (B, nt, *spatial), or a list of
    NoiseRealization / ScalarField.  bcs: one BoundaryData or a list of B.
    sigma: None (= 1), a constant with |sigma| <= 1, or a callable
    sigma(t, x..., u) whose values are clipped to [-1, 1].
    sup_regions: optional list of boolean masks over the grid; the running
    max of |u| over each is returned in ``sups``.
    """
    if isinstance(bcs, BoundaryData):
        bcs = [bcs]
    B = len(bcs)
    if zeta is not None and not isinstance(zeta, np.ndarray):
        zl = list(zeta) if isinstance(zeta, (list, tuple)) else [zeta]
        zeta = np.stack([getattr(z, "values", z) for z in zl])
    if zeta is not None:
        zeta = np.asarray(zeta, dtype=float)
        if zeta.ndim == grid.d + 1:
            zeta = zeta[None]
        if zeta.shape[1:] != grid.shape:
            raise SolverError(f"noise shape {zeta.shape[1:]} != grid shape {grid.shape}")
        if zeta.shape[0] not in (1, B):
            raise SolverError("noise batch does not match boundary batch")
    if sigma is not None and not callable(sigma) and abs(float(sigma)) > 1:
        raise SolverError("|sigma| must not exceed 1")
    dt = grid.dt
    t = grid.t
    xs = grid.coordinates()[1:]
    xs = [x[0] for x in xs]   # drop the time axis
    bmask = boundary_mask(grid)
    diff = _Diffusion(grid)
    u = np.stack([np.broadcast_to(bc.initial, grid.spatial_shape).astype(float) for bc in bcs])
    if not np.all(np.isfinite(u)):
        raise SolverError("initial data not finite")
    field_out = np.empty((B,) + grid.shape) if keep_field else None
    regions = [np.asarray(r, dtype=bool) for r in (sup_regions or [])]
    sups = np.zeros((B, len(regions)))
    # flat spatial indices per region and level, shared between equal slices
    region_idx = []
    for reg in regions:
        flat = reg.reshape(grid.nt, -1)
        per_level, prev, prev_idx = [], None, None
        for n in range(grid.nt):
            row = flat[n]
            if prev is None or not np.array_equal(row, prev):
                prev, prev_idx = row, np.flatnonzero(row)
            per_level.append(prev_idx if prev_idx.size else None)
        region_idx.append(per_level)

    def record(n, u):
        if keep_field:
            field_out[:, n] = u
        if region_idx:
            flat_u = np.abs(u.reshape(B, -1))
            for j, per_level in enumerate(region_idx):
                idx = per_level[n]
                if idx is not None:
                    np.maximum(sups[:, j], flat_u[:, idx].max(axis=1), out=sups[:, j])

    record(0, u)
    half = dt / 2
    static_bvals = None
    if all(bc.lateral is None for bc in bcs):
        static_bvals = np.stack([np.broadcast_to(bc.initial, grid.spatial_shape) for bc in bcs]).astype(float)
        bvals = static_bvals
    for n in range(grid.nt - 1):
        t1 = t[n + 1]
        if static_bvals is None:
            bvals = np.stack([np.broadcast_to(bc.lateral_at(t1), grid.spatial_shape) for bc in bcs])
        if nl is not None:
            u = reaction_flow(nl, u, half)
        u = diff.step(u, bvals, bmask)
        add = _forcing_values(g, grid, t[n] + half, xs) * dt
        if zeta is not None:
            z = zeta[:, n + 1]
            if sigma is None:
                add = add + z * dt
            elif callable(sigma):
                s = np.clip(np.asarray(sigma(t1, *xs, u), dtype=float), -1.0, 1.0)
                add = add + s * z * dt
            else:
                add = add + float(sigma) * z * dt
        u = u + add
        if nl is not None:
            u = reaction_flow(nl, u, half)
        u = np.where(bmask, bvals, u)
        if (n % 32 == 31 or n == grid.nt - 2) and not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite value by step {n + 1} (t={t1:.6g})")
        record(n + 1, u)
    return SolveResult(field_out, sups if regions else None, u, {"steps": grid.nt - 1})


def _as_values(zeta):
    if zeta is None:
        return None
    if isinstance(zeta, (int, float)):
        return None if zeta == 0 else float(zeta)
    return getattr(zeta, "values", zeta)


def solve_rd_pde(nl: Nonlinearity, zeta, g, bc: BoundaryData, grid: SpaceTimeGrid,
                 sigma=None) -> ScalarField:
    """u on every node of ``grid`` for one boundary datum."""
    z = _as_values(zeta)
    if isinstance(z, float):
        z = np.full(grid.shape, z)
    res = solve_rd_batch(nl, z, g, [bc], grid, sigma=sigma)
    return ScalarField(grid, res.field[0])


def solve_linear_heat(zeta, grid: SpaceTimeGrid) -> ScalarField:
    """w with (d_t - Laplace) w = zeta, zero initial and lateral data."""
    z = _as_values(zeta)
    if isinstance(z, float):
        z = np.full(grid.shape, z)
    res = solve_rd_batch(None, z, None, [BoundaryData.zero(grid)], grid)
    return ScalarField(grid, res.field[0])


def remainder(u: ScalarField, w: ScalarField) -> ScalarField:
    if u.grid != w.grid:
        raise SolverError("u and w live on different grids")
    return ScalarField(u.grid, u.values - w.values, max(u.margin, w.margin))
