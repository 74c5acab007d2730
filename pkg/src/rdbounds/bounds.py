"""Right-hand sides of the coming-down estimates and the diagnostics behind them.

Every evaluator returns plain numbers or a :class:`BoundReport`; constants
that are only known to exist are never guessed, so a report always carries
the measured ratio ``lhs / rhs`` instead of a verdict on a fixed constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .geometry import Point, SpaceTimeGrid, region_mask
from .kernels import (
    NormError, ScalarField, _bump_kernel, dyadic_scales, enlarge_region, holder_seminorm, mollify,
)
from .nonlinearity import Nonlinearity, barrier_eta


class BoundError(ValueError):
    pass


@dataclass
class BoundReport:
    lhs: float
    rhs_terms: dict
    context: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(max(self.rhs_terms.values()))

    @property
    def ratio(self) -> float:
        r = self.rhs
        if r > 0:
            return float(self.lhs / r)
        return 0.0 if self.lhs == 0 else math.inf

    @property
    def dominant(self) -> str:
        return max(self.rhs_terms, key=self.rhs_terms.get)

    def to_dict(self) -> dict:
        return {
            "lhs": float(self.lhs),
            "rhs_terms": {k: float(v) for k, v in self.rhs_terms.items()},
            "rhs": self.rhs,
            "ratio": self.ratio,
            "dominant": self.dominant,
            "context": self.context,
        }

    def row(self) -> dict:
        """Flat record for CSV output."""
        out = {k: v for k, v in self.context.items() if not isinstance(v, (dict, list))}
        out.update({"lhs": float(self.lhs), "rhs": self.rhs, "ratio": self.ratio, "dominant": self.dominant})
        for k, v in self.rhs_terms.items():
            out[f"rhs_{k}"] = float(v)
        return out


def _check_m_alpha(m: float, alpha: float) -> None:
    if not m > 1:
        raise BoundError("m must exceed 1")
    if not 0 < alpha <= 1:
        raise BoundError("alpha must lie in (0, 1]")


def ode_bound_terms(m: float, alpha: float, w_holder: float, t: float) -> dict:
    _check_m_alpha(m, alpha)
    if not t > 0:
        raise BoundError("t must be positive")
    return {
        "time": t ** (-1.0 / (m - 1)),
        "noise": max(w_holder, 0.0) ** (1.0 / (1 + (m - 1) * alpha)),
    }


def ode_bound_rhs(m: float, alpha: float, w_holder: float, t: float) -> float:
    """max{t^(-1/(m-1)), [w]_alpha^(1/(1+(m-1)alpha))}."""
    return max(ode_bound_terms(m, alpha, w_holder, t).values())


def pde_bound_terms(m: float, alpha: float, R: float, zeta_norm: float, g_sup: float = 0.0,
                    exponent_form: str = "half") -> dict:
    _check_m_alpha(m, alpha)
    if not 0 < R <= 0.5:
        raise BoundError("R must lie in (0, 1/2]")
    if exponent_form == "half":
        p = 1.0 / (1 + (m - 1) * alpha / 2)
    elif exponent_form == "ratio":
        p = 2.0 / (2 + (m - 1) * alpha)
    else:
        raise BoundError(f"unknown exponent form {exponent_form!r}")
    with np.errstate(over="ignore"):
        distance = float(np.power(float(R), -2.0 / (m - 1)))   # inf when m is very close to 1
    return {
        "distance": distance,
        "noise": max(zeta_norm, 0.0) ** p,
        "forcing": max(g_sup, 0.0) ** (1.0 / m),
    }


def pde_bound_rhs(m: float, alpha: float, R: float, zeta_norm: float, g_sup: float = 0.0,
                  exponent_form: str = "half") -> float:
    """max{R^(-2/(m-1)), [zeta]^(1/(1+(m-1)alpha/2)), |g|^(1/m)}."""
    return max(pde_bound_terms(m, alpha, R, zeta_norm, g_sup, exponent_form).values())


@dataclass(frozen=True)
class MaxPrincipleBound:
    sharp: float          # 2 / eta, or inf on the boundary
    envelope: float       # max{Theta^-1(1/(lam^2 s^2)), f^-1(g_sup)}
    on_boundary: bool = False

    @property
    def constant(self) -> float:
        """Empirical constant: the sharp bound measured in envelope units."""
        if self.on_boundary:
            return math.inf
        return self.sharp / self.envelope


def maxprinciple_bound(nl: Nonlinearity, g_sup: float, lam: float, z: Point) -> MaxPrincipleBound:
    eta = barrier_eta(nl, g_sup, lam, z)
    x = np.asarray(z.x)
    if eta == 0.0:
        return MaxPrincipleBound(math.inf, math.inf, True)
    s2 = min([z.t] + [float((1 + v) ** 2) for v in x] + [float((1 - v) ** 2) for v in x])
    env = float(nl.theta_inverse(1.0 / (lam * lam * s2)))
    if g_sup > 0:
        env = max(env, nl.f_inverse(g_sup))
    return MaxPrincipleBound(2.0 / eta, env)


def remainder_bound_rhs(nl: Nonlinearity, g_sup: float, w_sup: float, R: float, lam: float) -> float:
    """max{Theta^-1((lam R)^-2), f^-1(2 g_sup), sup|w|}."""
    if not 0 < R <= 0.5:
        raise BoundError("R must lie in (0, 1/2]")
    terms = [float(nl.theta_inverse((lam * R) ** -2.0)), float(w_sup)]
    if g_sup > 0:
        terms.append(nl.f_inverse(2.0 * g_sup))
    return max(terms)


# ---------------------------------------------------------------------------
# commutator


def _odd_power(v, m: float):
    return v * np.abs(v) ** (m - 1)


def commutator_field(u: ScalarField, m: float, T: float, region=None) -> tuple[ScalarField, float]:
    """(u_T)|u_T|^(m-1) - (u|u|^(m-1))_T and its sup over ``region``.

    Without a region the sup runs over every node where both convolutions
    are meaningful.
    """
    uT = mollify(u, T)
    pT = mollify(ScalarField(u.grid, _odd_power(u.values, m), u.margin, u.valid), T)
    comm = ScalarField(u.grid, _odd_power(uT.values, m) - pT.values, uT.margin, uT.valid)
    mask = comm.valid_mask() if region is None else region_mask(region, u.grid)
    if not mask.any():
        raise NormError("empty region")
    if np.any(mask & ~comm.valid_mask()):
        raise NormError("region reaches outside the meaningful support of the commutator")
    return comm, float(np.max(np.abs(comm.values[mask])))


def commutator_bound(u: ScalarField, m: float, T: float, alpha: float, region, stride: int = 1) -> float:
    """2 m |u|^(m-1) T^alpha [u]_alpha with sup and seminorm over region + B(0,T).

    The seminorm is local: only pairs at most 2T apart enter.
    """
    big = enlarge_region(region, u.grid, T)
    sup = float(np.max(np.abs(u.values[big])))
    semi = holder_seminorm(u, alpha, big, stride=stride, max_distance=2 * T)
    return 2 * m * sup ** (m - 1) * T**alpha * semi


# ---------------------------------------------------------------------------
# Schauder diagnostic


def schauder_bump(grid: SpaceTimeGrid, r: float = 0.9) -> ScalarField:
    """Smooth bump exp(-1/(1 - rho^2)) supported in the past ball of radius r at the origin.

    rho^2 = |x/r|^2 + (2t/r^2 + 1)^2, so the time support is (-r^2, 0).
    """
    coords = grid.coordinates()
    t = coords[0]
    rho2 = (2 * t / r**2 + 1) ** 2
    for x in coords[1:]:
        rho2 = rho2 + (x / r) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.where(rho2 < 1, np.exp(-1.0 / (1.0 - np.minimum(rho2, 1 - 1e-300))), 0.0)
    return ScalarField(grid, np.broadcast_to(vals, grid.shape).copy())


def heat_residual(u: ScalarField) -> np.ndarray:
    """(d_t - Laplace) u by a backward time difference and the centred Laplacian.

    Values outside the grid are taken to be zero, matching a compactly
    supported u.
    """
    g = u.grid
    v = u.values
    pad = np.pad(v, [(1, 0)] + [(1, 1)] * g.d)
    inner = (slice(1, None),) + (slice(1, -1),) * g.d
    out = (pad[inner] - pad[(slice(0, -1),) + (slice(1, -1),) * g.d]) / g.dt
    for ax in range(1, g.d + 1):
        hi = list(inner)
        lo = list(inner)
        hi[ax] = slice(2, None)
        lo[ax] = slice(0, -2)
        out -= (pad[tuple(hi)] - 2 * pad[inner] + pad[tuple(lo)]) / g.dx**2
    return out


def _coarsen_array(v: np.ndarray, b: int) -> np.ndarray:
    """Block means over b^2 time levels and b points per axis, zero padded."""
    if b == 1:
        return v
    d = v.ndim - 1
    sizes = [b * b] + [b] * d
    pads = [(0, (-n) % s) for n, s in zip(v.shape, sizes)]
    v = np.pad(v, pads)
    shp = []
    for n, s in zip(v.shape, sizes):
        shp += [n // s, s]
    return v.reshape(shp).mean(axis=tuple(range(1, 2 * d + 2, 2)))


def global_neg_profile(f: np.ndarray, grid: SpaceTimeGrid, alpha: float, scales=None,
                       points_per_scale: int = 16) -> dict:
    """T -> T^(2-alpha) sup |f_T| over all of space-time, with f zero off the grid.

    Large scales are evaluated on block-averaged data so that a scale spans
    at least ``points_per_scale`` coarse cells.
    """
    if scales is None:
        scales = dyadic_scales(grid.dx)
    out = {}
    for T in scales:
        b = max(1, int(T / (points_per_scale * grid.dx)))
        fc = _coarsen_array(f, b)
        dxc = b * grid.dx
        ker = _bump_kernel(T, grid.d, dxc, dxc * dxc)
        full = signal.oaconvolve(fc, ker.weights, mode="full")
        out[T] = T ** (2 - alpha) * float(np.max(np.abs(full)))
    return out


@dataclass
class SchauderResult:
    ratio: float
    holder: float
    forcing_norm: float
    profile: dict
    stride: int

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "holder": self.holder, "forcing_norm": self.forcing_norm,
                "stride": self.stride, "profile": {str(k): v for k, v in self.profile.items()}}


def schauder_ratio(u: ScalarField, alpha: float, support_radius: float | None = None,
                   stride: int | None = None, points_per_radius: int = 8, detail: bool = False):
    """[u]_alpha divided by sup_T T^(2-alpha) |((d_t - Laplace) u)_T|.

    ``u`` must vanish on the grid faces (it is treated as compactly
    supported).  ``stride`` thins the Hoelder pairs; by default it keeps at
    least ``points_per_radius`` lattice points across ``support_radius``.
    """
    if not 0 < alpha < 1:
        raise BoundError("alpha must lie in (0, 1)")
    g = u.grid
    v = u.values
    faces = [v[0], v[-1]]
    for ax in range(1, g.d + 1):
        faces.append(np.take(v, 0, axis=ax))
        faces.append(np.take(v, -1, axis=ax))
    if any(np.any(fc != 0) for fc in faces):
        raise BoundError("u must vanish on the boundary of its grid")
    if not np.any(v != 0):
        res = SchauderResult(0.0, 0.0, 0.0, {}, 1)
        return res if detail else 0.0
    if stride is None:
        r = support_radius if support_radius is not None else 1.0
        stride = max(1, int(r / (points_per_radius * g.dx)))
    u = _crop_time_support(u, stride, points_per_scale=16)
    semi = holder_seminorm(u, alpha, np.ones(u.grid.shape, dtype=bool), stride=stride)
    prof = global_neg_profile(heat_residual(u), u.grid, alpha)
    denom = max(prof.values())
    res = SchauderResult(semi / denom, semi, denom, prof, stride)
    return res if detail else res.ratio


def _crop_time_support(u: ScalarField, stride: int, points_per_scale: int) -> ScalarField:
    """Drop all-zero time levels far from the support of u.

    The crop keeps a zero margin of at least one Hoelder stride and starts
    on a multiple of every block length used by the profile and by the
    strided Hoelder lattice, so both quantities are unchanged.
    """
    g = u.grid
    rows = np.flatnonzero(np.any(u.values.reshape(g.nt, -1) != 0, axis=1))
    margin = max(2, stride * stride)
    blocks = [max(1, int(T / (points_per_scale * g.dx))) ** 2 for T in dyadic_scales(g.dx)]
    align = math.lcm(stride * stride, *blocks)
    n0 = max(0, rows[0] - margin) // align * align
    n1 = min(g.nt - 1, rows[-1] + margin)
    if n0 == 0 and n1 == g.nt - 1:
        return u
    t = g.t
    sub = SpaceTimeGrid(d=g.d, nx=g.nx, t_range=(t[n0], t[n1]), x_range=g.x_range)
    return ScalarField(sub, u.values[n0:n1 + 1])


def schauder_grid(dx: float, d: int = 1) -> SpaceTimeGrid:
    """Grid over [-1, 1] in time and space; the bump sits in the first half."""
    nx = int(round(2 / dx)) + 1
    return SpaceTimeGrid(d=d, nx=nx, t_range=(-1.0, 1.0))


# ---------------------------------------------------------------------------
# interpolation


def spatial_holder(u: np.ndarray, x: np.ndarray, alpha: float) -> float:
    """All-pairs alpha-Hoelder seminorm of a sampled function of one variable."""
    n = len(u)
    best = 0.0
    for k in range(1, n):
        q = np.abs(u[k:] - u[:-k]) / np.abs(x[k:] - x[:-k]) ** alpha
        best = max(best, float(q.max()))
    return best


def interpolation_check(u, alpha: float, m: float, x=None) -> BoundReport:
    """(|u|/2)^(1+alpha(m+1)) against max{[u]_a |u|_{m+1}^(a(m+1)), |u|_{m+1}^(1+a(m+1))}.

    ``u`` holds values at equispaced nodes of [-1, 1] including both ends;
    the L^(m+1) norm uses the trapezoid rule.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or len(u) < 3:
        raise BoundError("need a one-dimensional field with at least 3 nodes")
    if not 0 < alpha < 0.5:
        raise BoundError("alpha must lie in (0, 1/2)")
    if not m > 1:
        raise BoundError("m must exceed 1")
    x = np.linspace(-1, 1, len(u)) if x is None else np.asarray(x, dtype=float)
    p = m + 1
    e = 1 + alpha * p
    sup = float(np.max(np.abs(u)))
    lp = float(np.trapezoid(np.abs(u) ** p, x) ** (1 / p))
    semi = spatial_holder(u, x, alpha)
    terms = {"holder": semi * lp ** (alpha * p), "integral": lp**e}
    return BoundReport((sup / 2) ** e, terms, {"alpha": alpha, "m": m, "sup": sup, "lp": lp, "holder": semi})
