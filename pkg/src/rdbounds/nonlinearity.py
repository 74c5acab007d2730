"""Reaction functions, their damping profile Theta, and the boundary barrier.

Four families are provided:

``polynomial``               f(u) = u |u|^(m-1)
``polynomial_plus_bounded``  same damping, plus a bounded forcing of size g_sup
``sinh``                     f(u) = sinh(u)
``log_type``                 f = f1 * f2 with f1(u) = u log(1+u)^a

For the first three ``f1 = f`` and Theta(u) = f(u)/u.  For ``log_type`` the
damping profile is Theta(u) = f1(u)/u = log(1+u)^a, which grows more slowly
than f(u)/u.

The barrier is eta = 1/S with

    S(t, x) = Th(1/(lam^2 t)) + sum_i [Th(1/(lam^2 (1+x_i)^2)) + Th(1/(lam^2 (1-x_i)^2))] + f^{-1}(g_sup)

where Th is the inverse of Theta.  In terms of S the barrier inequality reads
``-S_t + Laplace S <= f(S) / 2`` pointwise, which is what the grid check
evaluates (via phi = log eta, see ``verify_barrier_inequality``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Point, SpaceTimeGrid


class NonlinearityError(ValueError):
    pass


FAMILIES = ("polynomial", "polynomial_plus_bounded", "sinh", "log_type")

# sinh overflows a double just above 710
_SINH_CAP = 700.0


@dataclass(frozen=True)
class Nonlinearity:
    """A reaction function with its decomposition and damping profile.

    ``f2_variant`` only matters for ``log_type``: ``"consistent"`` uses
    f2 = ((1+u) log(1+u) / (a u))^2, the factor that reproduces
    f = (1+u)^2 log(1+u)^(2+a) / (a^2 u).  ``"literal"`` divides that by a
    once more.
    """

    kind: str
    m: float | None = None
    alpha_log: float | None = None
    g_sup: float = 0.0
    f2_variant: str = "consistent"

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise NonlinearityError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind.startswith("polynomial"):
            if self.m is None or not (self.m > 1):
                raise NonlinearityError("m must exceed 1")
        if self.kind == "log_type":
            if self.alpha_log is None or not (self.alpha_log > 0):
                raise NonlinearityError("alpha_log must be positive")
            if self.f2_variant not in ("consistent", "literal"):
                raise NonlinearityError("f2_variant must be 'consistent' or 'literal'")
        if not (self.g_sup >= 0 and math.isfinite(self.g_sup)):
            raise NonlinearityError("g_sup must be finite and nonnegative")

    # -- constructors ---------------------------------------------------
    @classmethod
    def polynomial(cls, m: float, g_sup: float = 0.0) -> "Nonlinearity":
        kind = "polynomial_plus_bounded" if g_sup > 0 else "polynomial"
        return cls(kind, m=float(m), g_sup=float(g_sup))

    @classmethod
    def sinh(cls, g_sup: float = 0.0) -> "Nonlinearity":
        return cls("sinh", g_sup=float(g_sup))

    @classmethod
    def log_type(cls, alpha_log: float = 2.0, g_sup: float = 0.0, f2_variant: str = "consistent"):
        return cls("log_type", alpha_log=float(alpha_log), g_sup=float(g_sup), f2_variant=f2_variant)

    @property
    def is_polynomial(self) -> bool:
        return self.kind.startswith("polynomial")

    @property
    def assumption_set(self) -> str:
        """'power_ratio' (u f' >= c f, c > 1) or 'factorized' (f = f1 f2)."""
        return "factorized" if self.kind == "log_type" else "power_ratio"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "g_sup": self.g_sup}
        if self.m is not None:
            out["m"] = self.m
        if self.alpha_log is not None:
            out["alpha_log"] = self.alpha_log
            out["f2_variant"] = self.f2_variant
        return out

    # -- f and derivatives ----------------------------------------------
    def f(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        if self.is_polynomial:
            return np.sign(u) * a**self.m
        if self.kind == "sinh":
            with np.errstate(over="ignore"):
                return np.sinh(u)
        return np.sign(u) * self._f_pos(a)

    def _f_pos(self, a):
        # log_type, a >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, self.f1(a) * self.f2(a), 0.0)

    def df(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        if self.is_polynomial:
            return self.m * a ** (self.m - 1)
        if self.kind == "sinh":
            return np.cosh(u)
        f1, f2 = self.f1(a), self.f2(a)
        return self.df1(a) * f2 + f1 * self.df2(a)

    def d2f(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        if self.is_polynomial:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.sign(u) * self.m * (self.m - 1) * a ** (self.m - 2)
        if self.kind == "sinh":
            return np.sinh(u)
        h = 1e-4 * np.maximum(a, 1e-3)
        return np.sign(u) * (self._f_pos(a + h) - 2 * self._f_pos(a) + self._f_pos(np.abs(a - h)) * np.sign(a - h)) / h**2

    def f1(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind != "log_type":
            return self.f(u)
        a = np.abs(u)
        return np.sign(u) * a * np.log1p(a) ** self.alpha_log

    def df1(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind != "log_type":
            return self.df(u)
        al = self.alpha_log
        a = np.abs(u)
        L = np.log1p(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            return L**al + al * a * L ** (al - 1) / (1 + a)

    def d2f1(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind != "log_type":
            return self.d2f(u)
        al = self.alpha_log
        a = np.abs(u)
        L = np.log1p(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (al * L ** (al - 1) / (1 + a) + al * L ** (al - 1) / (1 + a) ** 2
                   + al * (al - 1) * a * L ** (al - 2) / (1 + a) ** 2)
        return np.sign(u) * val

    def f2(self, u):
        """Second factor; constant 1 outside the log family."""
        u = np.asarray(u, dtype=float)
        if self.kind != "log_type":
            return np.ones_like(u)
        al = self.alpha_log
        a = np.abs(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(a > 0, (1 + a) * np.log1p(a) / (al * a), 1.0 / al)
        out = q * q
        return out / al if self.f2_variant == "literal" else out

    def df2(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind != "log_type":
            return np.zeros_like(u)
        al = self.alpha_log
        a = np.abs(u)
        L = np.log1p(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(a > 0, (1 + a) * L / (al * a), 1.0 / al)
            dq = np.where(a > 0, (a - L) / (al * a * a), 1.0 / (2 * al))
        out = 2 * q * dq
        return np.sign(u) * (out / al if self.f2_variant == "literal" else out)

    # -- damping profile -------------------------------------------------
    def theta(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u <= 0):
            raise NonlinearityError("theta needs u > 0")
        if self.is_polynomial:
            return u ** (self.m - 1)
        if self.kind == "sinh":
            return np.sinh(u) / u
        return np.log1p(u) ** self.alpha_log

    def theta_floor(self) -> float:
        """inf of Theta over u > 0."""
        return 1.0 if self.kind == "sinh" else 0.0

    def theta_inverse(self, y, rtol: float = 1e-10):
        y = np.asarray(y, dtype=float)
        floor = self.theta_floor()
        if np.any(~np.isfinite(y)) or np.any(y <= floor):
            raise NonlinearityError(f"argument below the range of Theta (must exceed {floor})")
        if self.is_polynomial:
            return y ** (1.0 / (self.m - 1))
        if self.kind == "log_type":
            return np.expm1(y ** (1.0 / self.alpha_log))
        return _bisect_increasing(lambda u: np.sinh(u) / u, y, 1e-12, _SINH_CAP, rtol)

    def log_theta_inverse(self, y):
        """log(Theta^{-1}(y)), finite even where Theta^{-1} itself overflows."""
        y = np.asarray(y, dtype=float)
        if self.kind == "log_type":
            if np.any(y <= 0):
                raise NonlinearityError("argument below the range of Theta")
            s = y ** (1.0 / self.alpha_log)
            # log(e^s - 1) = s + log(1 - e^-s)
            return np.where(s > 30, s + np.log1p(-np.exp(-s)), np.log(np.expm1(np.minimum(s, 30))))
        if self.is_polynomial:
            return np.log(y) / (self.m - 1)
        return np.log(self.theta_inverse(y))

    def f_inverse(self, v: float, u_max: float = 1e8) -> float:
        """Smallest u >= 0 with f(u) = v, by bisection on a doubling bracket."""
        if v < 0:
            raise NonlinearityError("f_inverse needs v >= 0")
        if v == 0:
            return 0.0
        if self.is_polynomial:
            return float(v ** (1.0 / self.m))
        hi = float(u_max)
        while float(self.f(hi)) < v:
            hi *= 2
            if hi > 1e300:
                raise NonlinearityError("f_inverse bracket overflow")
        return float(_bisect_increasing(self.f, np.asarray(v, dtype=float), 0.0, hi, 1e-12))

    def rate_from_log(self, logu):
        """f(u)/u given log u; stays finite for the log family at huge u."""
        logu = np.asarray(logu, dtype=float)
        if self.is_polynomial:
            return np.exp((self.m - 1) * logu)
        if self.kind == "sinh":
            with np.errstate(over="ignore"):
                u = np.exp(logu)
                return np.sinh(u) / u   # inf past the double range, which the integrals treat as 0 time
        al = self.alpha_log
        # u = e^logu, log(1+u) ~ logu for large u
        u = np.exp(np.minimum(logu, 700.0))
        L = np.where(logu > 30, logu + np.log1p(np.exp(-np.minimum(logu, 700.0))), np.log1p(u))
        ratio = np.where(logu > 30, 1.0, (1 + u) / np.maximum(u, 1e-300))
        # f(u)/u = f1/u * f2 = L^a * ((1+u) L / (a u))^2
        out = L**al * (ratio * L / al) ** 2
        return out / al if self.f2_variant == "literal" else out


def _bisect_increasing(fn, y, lo, hi, rtol, iters: int = 200):
    """Vectorised bisection for fn(u) = y on [lo, hi] with fn increasing.

    Works on log u when lo > 0 so that relative precision is uniform.
    """
    y = np.asarray(y, dtype=float)
    a = np.full(y.shape, float(lo))
    b = np.full(y.shape, float(hi))
    use_log = lo > 0
    for _ in range(iters):
        mid = np.sqrt(a * b) if use_log else 0.5 * (a + b)
        with np.errstate(over="ignore"):
            below = fn(mid) < y
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.all(b - a <= rtol * np.maximum(np.abs(b), 1e-300) * 0.5):
            break
    out = 0.5 * (a + b)
    return out if out.ndim else float(out)


def default_lambda(d: int) -> float:
    if d < 1:
        raise NonlinearityError("d must be >= 1")
    return (28 * d + 1) ** -0.5


# ---------------------------------------------------------------------------
# assumption certificates


@dataclass
class AssumptionReport:
    assumption: str
    conditions: dict = field(default_factory=dict)  # name -> (passed, worst margin)
    u_range: tuple = (0.0, 0.0)
    certified_c: float | None = None
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p for p, _ in self.conditions.values())

    def to_dict(self) -> dict:
        return {
            "assumption": self.assumption,
            "passed": self.passed,
            "conditions": {k: {"passed": bool(p), "margin": float(mg)} for k, (p, mg) in self.conditions.items()},
            "u_range": list(self.u_range),
            "certified_c": self.certified_c,
            "notes": list(self.notes),
        }


def barrier_range_floor(nl: Nonlinearity, lam: float) -> float:
    """Smallest argument the barrier ever feeds to Theta^{-1}'s output range.

    Every Theta^{-1} argument in the barrier is at least 1/(4 lam^2), since
    t <= 1 and 1 +- x_i <= 2 on the unit cylinder.
    """
    return float(nl.theta_inverse(1.0 / (4 * lam * lam)))


def check_assumptions(nl: Nonlinearity, u_max: float = 1e8, n_samples: int = 10_000,
                      u_min: float = 1e-6, assumption: str | None = None) -> AssumptionReport:
    """Sampled certificate of the structural conditions on a log grid in [u_min, u_max].

    For the 'power_ratio' set the certified constant is c = min u f'/f.  When
    that minimum sits at u_max with the ratio still decreasing, no c > 1 is
    certified, since the ratio may tend to 1 beyond the sampled range.
    """
    if not (u_max > 0 and n_samples >= 100):
        raise NonlinearityError("need u_max > 0 and n_samples >= 100")
    which = assumption or nl.assumption_set
    notes = []
    if nl.kind == "sinh" and u_max > _SINH_CAP:
        u_max = _SINH_CAP
        notes.append(f"u_max capped at {_SINH_CAP} to stay inside double range")
    u = np.geomspace(u_min, u_max, n_samples)
    rep = AssumptionReport(which, u_range=(float(u_min), float(u_max)), notes=notes)
    fu = nl.f(u)
    anti = float(np.max(np.abs(nl.f(-u) + fu) / np.abs(fu)))
    rep.conditions["antisymmetric"] = (anti <= 1e-12, -anti)
    ratio = u * nl.df(u) / fu
    tol = 1e-9
    if which == "power_ratio":
        curv = nl.d2f(u)
        scale = np.abs(fu) / u**2
        rep.conditions["convex"] = (bool(np.all(curv >= -tol * scale)), float(np.min(curv / scale)))
        c = float(np.min(ratio))
        decaying = ratio[-1] < ratio[-2] * (1 - tol) and np.argmin(ratio) == len(ratio) - 1
        if decaying:
            rep.notes.append("u f'/f still decreasing at u_max; no uniform c > 1 certified")
        rep.certified_c = c
        rep.conditions["ratio_above_one"] = (c > 1 + tol and not decaying, c - 1.0)
    elif which == "factorized":
        rep.conditions["ratio_at_least_one"] = (bool(np.all(ratio >= 1 - tol)), float(np.min(ratio - 1)))
        f1 = nl.f1(u)
        anti1 = float(np.max(np.abs(nl.f1(-u) + f1) / np.abs(f1)))
        curv1 = nl.d2f1(u)
        scale1 = np.abs(f1) / u**2
        rep.conditions["f1_antisymmetric_convex"] = (
            anti1 <= 1e-12 and bool(np.all(curv1 >= -tol * scale1)),
            float(min(-anti1, np.min(curv1 / scale1))),
        )
        f2 = nl.f2(u)
        rep.conditions["f2_positive"] = (bool(np.min(f2) > 0), float(np.min(f2)))
        r1 = u * nl.df1(u) / f1 - 1.0
        with np.errstate(divide="ignore"):
            need = np.maximum(1.0 / r1**2, 1.0 / r1)
        need = np.where(r1 > 0, need, np.inf)
        rel = (f2 - need) / need
        rep.conditions["f2_dominates"] = (bool(np.all(rel >= -tol)), float(np.min(rel)))
        rep.certified_c = float(np.min(f2))
    else:
        raise NonlinearityError(f"unknown assumption set {which!r}")
    return rep


# ---------------------------------------------------------------------------
# barrier


def _barrier_log_terms(nl: Nonlinearity, lam: float, t, xs: list):
    """log of each Theta^{-1} term of S, shaped for broadcasting."""
    terms = [nl.log_theta_inverse(1.0 / (lam * lam * t))]
    for x in xs:
        terms.append(nl.log_theta_inverse(1.0 / (lam * lam * (1 + x) ** 2)))
        terms.append(nl.log_theta_inverse(1.0 / (lam * lam * (1 - x) ** 2)))
    return terms


def _log_sum(terms, log_const: float | None):
    parts = list(terms)
    if log_const is not None:
        parts.append(np.asarray(log_const))
    parts = np.broadcast_arrays(*parts)
    stack = np.stack(parts)
    top = stack.max(axis=0)
    return top + np.log(np.exp(stack - top).sum(axis=0))


def log_barrier_denominator(nl: Nonlinearity, lam: float, t, xs: list, g_sup: float | None = None):
    """log S on broadcastable coordinates (interior only)."""
    g = nl.g_sup if g_sup is None else g_sup
    finv = nl.f_inverse(g) if g > 0 else 0.0
    return _log_sum(_barrier_log_terms(nl, lam, t, xs), math.log(finv) if finv > 0 else None)


def barrier_eta(nl: Nonlinearity, g_sup: float, lam: float, z: Point) -> float:
    if lam <= 0:
        raise NonlinearityError("lambda must be positive")
    x = np.asarray(z.x)
    if z.t < 0 or np.any(np.abs(x) > 1):
        raise NonlinearityError("point outside [0, inf) x [-1, 1]^d")
    if z.t == 0 or np.any(np.abs(x) == 1):
        return 0.0
    logS = log_barrier_denominator(nl, lam, np.asarray(z.t), [np.asarray(v) for v in x], g_sup)
    return float(np.exp(-logS))


def barrier_eta_grid(nl: Nonlinearity, lam: float, grid: SpaceTimeGrid, g_sup: float | None = None):
    """eta on every grid node, zero on the boundary faces."""
    coords = grid.coordinates()
    t = coords[0]
    xs = coords[1:]
    interior = t > 0
    for x in xs:
        interior = interior & (np.abs(x) < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = np.where(t > 0, t, 1.0)
        xx = [np.where(np.abs(x) < 1, x, 0.0) for x in xs]
        logS = log_barrier_denominator(nl, lam, tt, xx, g_sup)
    return np.where(np.broadcast_to(interior, grid.shape), np.exp(-logS), 0.0)


@dataclass
class BarrierReport:
    passed: bool
    worst_margin: float          # min over checked nodes of (rhs - lhs) / rhs
    worst_node: tuple
    n_checked: int
    n_excluded: int
    cap_condition: bool          # eta <= 1 / f^{-1}(g_sup) everywhere
    lam: float
    band: int
    method: str
    assumptions: AssumptionReport | None = None

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("passed", "worst_margin", "n_checked", "n_excluded",
                                              "cap_condition", "lam", "band", "method")}
        out["worst_node"] = [float(v) for v in self.worst_node]
        out["assumptions"] = self.assumptions.to_dict() if self.assumptions else None
        return out


def verify_barrier_inequality(nl: Nonlinearity, lam: float, grid: SpaceTimeGrid, band: int = 8,
                              method: str = "log", tiny: float = 1e-280) -> BarrierReport:
    """Grid certificate of the barrier inequality with centred differences.

    The left side (eta_t - Lap eta)/eta + 2|grad eta|^2/eta^2 equals
    phi_t - Lap phi + |grad phi|^2 for phi = log eta.  ``method="log"``
    differences phi, which stays resolved where eta varies over many
    decades per cell; ``method="direct"`` differences eta itself.

    Nodes closer than ``band`` cells (parabolic distance band*dx) to the
    boundary are skipped, as are nodes where eta falls below ``tiny``.
    """
    if lam <= 0:
        raise NonlinearityError("lambda must be positive")
    d = grid.d
    dx, dt = grid.dx, grid.dt
    t = grid.t
    x = grid.x
    # one extra time level so the centred time difference reaches t = t_end
    t_ext = np.concatenate([t, [t[-1] + dt]])
    t_b = t_ext.reshape((-1,) + (1,) * d)
    xs = []
    for ax in range(d):
        shp = [1] * (d + 1)
        shp[ax + 1] = -1
        xs.append(x.reshape(shp))
    keep_t = t_ext > 0
    keep_x = np.abs(x) < 1
    t_b = np.where(t_b > 0, t_b, 1.0)
    xs_c = [np.where(np.abs(xx) < 1, xx, 0.0) for xx in xs]
    logS = log_barrier_denominator(nl, lam, t_b, xs_c)
    phi = -logS
    if method == "direct":
        eta = np.exp(phi)
        core = (slice(1, -1),) * (d + 1)
        e0 = eta[core]
        et = (eta[2:] - eta[:-2])[(slice(None),) + (slice(1, -1),) * d] / (2 * dt)
        lap = np.zeros_like(e0)
        grad2 = np.zeros_like(e0)
        for ax in range(1, d + 1):
            def sl(off):
                s = [slice(1, -1)] * (d + 1)
                s[ax] = slice(1 + off, eta.shape[ax] - 1 + off)
                return tuple(s)
            lap += (eta[sl(1)] - 2 * e0 + eta[sl(-1)]) / dx**2
            grad2 += ((eta[sl(1)] - eta[sl(-1)]) / (2 * dx)) ** 2
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lhs = (et - lap) / e0 + 2 * grad2 / e0**2
    else:
        core = (slice(1, -1),) * (d + 1)
        p0 = phi[core]
        pt = (phi[2:] - phi[:-2])[(slice(None),) + (slice(1, -1),) * d] / (2 * dt)
        lap = np.zeros_like(p0)
        grad2 = np.zeros_like(p0)
        for ax in range(1, d + 1):
            def sl(off):
                s = [slice(1, -1)] * (d + 1)
                s[ax] = slice(1 + off, phi.shape[ax] - 1 + off)
                return tuple(s)
            lap += (phi[sl(1)] - 2 * p0 + phi[sl(-1)]) / dx**2
            grad2 += ((phi[sl(1)] - phi[sl(-1)]) / (2 * dx)) ** 2
        lhs = pt - lap + grad2
    # rhs = (eta/2) f(1/eta) = f(S)/(2S)
    rhs = 0.5 * nl.rate_from_log(logS[core])
    # node coordinates of the core block: times t_ext[1:-1] = t[1:], x[1:-1]
    tc = t_ext[1:-1].reshape((-1,) + (1,) * d)
    ok = (tc >= (band * dx) ** 2 - 1e-15) & keep_t[1:-1].reshape((-1,) + (1,) * d)
    for ax in range(d):
        shp = [1] * (d + 1)
        shp[ax + 1] = -1
        xc = x[1:-1].reshape(shp)
        ok = ok & (np.abs(xc) <= 1 - band * dx + 1e-12) & keep_x[1:-1].reshape(shp)
    ok = np.broadcast_to(ok, lhs.shape)
    eta_core = np.exp(phi[core])
    resolved = np.isfinite(lhs) & np.isfinite(rhs) & (eta_core > tiny)
    checked = ok & resolved
    excluded = int(np.count_nonzero(ok & ~resolved))
    with np.errstate(invalid="ignore"):
        margin = np.where(checked, (rhs - lhs) / rhs, np.inf)
    flat = int(np.argmin(margin))
    idx = np.unravel_index(flat, margin.shape)
    worst = float(margin[idx])
    node = (float(t_ext[1 + idx[0]]),) + tuple(float(x[1 + i]) for i in idx[1:])
    finv = nl.f_inverse(nl.g_sup) if nl.g_sup > 0 else 0.0
    cap_ok = True
    if finv > 0:
        cap_ok = bool(np.all(eta_core[checked] <= 1.0 / finv * (1 + 1e-12)))
    floor = barrier_range_floor(nl, lam)
    assump = check_assumptions(nl, u_min=floor, n_samples=2000)
    return BarrierReport(
        passed=bool(worst >= 0 and cap_ok and np.count_nonzero(checked) > 0),
        worst_margin=worst,
        worst_node=node,
        n_checked=int(np.count_nonzero(checked)),
        n_excluded=excluded,
        cap_condition=cap_ok,
        lam=float(lam),
        band=band,
        method=method,
        assumptions=assump,
    )
