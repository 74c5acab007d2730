"""Monte Carlo drivers: coming-down uniformity, tail exponents, invariant measure."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaincc, gammaln

from .bounds import BoundReport, ode_bound_rhs, pde_bound_terms
from .geometry import Cylinder, SpaceTimeGrid, cylinder_region
from .kernels import neg_holder_norm, path_holder_seminorm
from .noise import CovarianceSpec, sample_noise
from .nonlinearity import Nonlinearity
from .solver import BoundaryData, brownian_paths, solve_ode, solve_rd_batch


class ExperimentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tail exponents


@dataclass
class TailFit:
    beta: float
    c: float
    fit_range: tuple
    residual: float
    n_samples: int
    n_tail: int
    method: str = "mle"
    gamma: float = 0.0

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "c": self.c, "fit_range": list(self.fit_range),
            "residual": self.residual, "n_samples": self.n_samples, "n_tail": self.n_tail,
            "method": self.method, "gamma": self.gamma,
        }


def _loglog_fit(tail: np.ndarray, n_total: int, n_below: int):
    # survival from the full-sample ECDF with Weibull plotting positions
    ranks = n_below + np.arange(1, len(tail) + 1)
    surv = 1.0 - ranks / (n_total + 1.0)
    y = np.log(-np.log(surv))
    x = np.log(tail)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), float(math.exp(coef[1])), resid


def _tail_nll(params, z, logz):
    """Mean negative log-likelihood of z^g exp(-c z^b) truncated to z > 1."""
    logc, b, g = params
    if b <= 0.05 or b > 50:
        return 1e300
    a = (g + 1) / b
    if a <= 0:
        return 1e300
    c = math.exp(logc)
    q = gammaincc(a, c)
    if not q > 0:
        return 1e300
    log_norm = -math.log(b) - a * logc + gammaln(a) + math.log(q)
    return -(g * logz.mean() - c * np.mean(z**b) - log_norm)


def estimate_tail_exponent(samples, q: float = 0.95, method: str = "mle") -> TailFit:
    """Shape exponent beta of a tail P(X > x) ~ exp(-c x^beta).

    ``method="loglog"`` regresses log(-log(1 - ECDF)) on log x over the
    samples above the q-quantile.  ``method="mle"`` (default) fits the
    density x^g exp(-c x^beta) truncated at the quantile by maximum
    likelihood, which removes the prefactor bias of the regression.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1000:
        raise ExperimentError("need at least 1000 samples")
    if not 0.5 < q < 0.999:
        raise ExperimentError("q must lie in (0.5, 0.999)")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ExperimentError("samples must be positive and finite")
    x = np.sort(x)
    if x[0] == x[-1]:
        raise ExperimentError("degenerate samples: all values are equal")
    u = float(np.quantile(x, q))
    tail = x[x > u]
    if tail.size < 20 or tail[0] == tail[-1]:
        raise ExperimentError("too few distinct samples above the quantile")
    rng = (u, float(tail[-1]))
    if method == "loglog":
        beta, c, resid = _loglog_fit(tail, x.size, x.size - tail.size)
        return TailFit(beta, c, rng, resid, int(x.size), int(tail.size), "loglog")
    if method != "mle":
        raise ExperimentError(f"unknown method {method!r}")
    z = tail / u
    logz = np.log(z)
    best = None
    for b0 in (0.7, 1.5, 2.5, 4.0):
        for g0 in (-0.5, 0.0, 1.0):
            r = minimize(_tail_nll, [math.log(b0), b0, g0], args=(z, logz), method="Nelder-Mead",
                         options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000, "maxfev": 40000})
            if best is None or r.fun < best.fun:
                best = r
    logc, beta, g = best.x
    c = math.exp(logc) / u**beta
    return TailFit(float(beta), float(c), rng, float(best.fun), int(x.size), int(tail.size), "mle", float(g))


# ---------------------------------------------------------------------------
# stochastic ODE


def ode_noise_ratios(x0_list, n_paths: int, n_steps: int, alpha: float, seed: int,
                     m: float = 3.0) -> dict:
    """|x(1)| / ode_bound_rhs(m, alpha, [w]_alpha, 1) per Brownian path, for each x0.

    Every x0 sees the same paths.
    """
    nl = Nonlinearity.polynomial(m)
    w = brownian_paths(n_paths, n_steps, seed)
    semi = path_holder_seminorm(w, 1.0 / n_steps, alpha)
    rhs = np.array([ode_bound_rhs(m, alpha, s, 1.0) for s in semi])
    out = {}
    for x0 in x0_list:
        traj = solve_ode(nl, float(x0), w, n_steps)
        out[float(x0)] = np.abs(traj.values[:, -1]) / rhs
    return out


# ---------------------------------------------------------------------------
# coming down


def boundary_batch(family: str, grid: SpaceTimeGrid, magnitudes, seed: int) -> list[BoundaryData]:
    out = []
    for k, M in enumerate(magnitudes):
        if family == "constant":
            out.append(BoundaryData.constant(grid, M))
        elif family == "zero":
            out.append(BoundaryData.zero(grid))
        elif family == "oscillating":
            out.append(BoundaryData.oscillating(grid, M))
        elif family == "random":
            out.append(BoundaryData.random_trace(grid, M, seed * 1000 + k))
        else:
            raise ExperimentError(f"unknown boundary family {family!r}")
    return out


@dataclass
class ComingDownResult:
    reports: list
    summary: dict
    fields: dict = field(default_factory=dict)


def _log_slope(Ms, values) -> float:
    pts = [(math.log(M), math.log(v)) for M, v in zip(Ms, values) if M > 0 and v > 0]
    if len(pts) < 2:
        return 0.0
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def _coming_down_seed(cfg, seed: int, keep_fields: bool = False):
    nl = cfg.nonlinearity()
    grid = cfg.grid()
    ext = grid.extended(1.0)
    regions = [cylinder_region(R, grid) for R in cfg.R]
    Ms = [float(M) for M in cfg.M]
    g = cfg.g_sup if cfg.g_sup > 0 else None
    real = sample_noise(ext, cfg.noise_spec(), seed)
    znorm = neg_holder_norm(real.field, cfg.alpha, Cylinder(0.0, grid.d), coarsen=cfg.coarsen)
    zeta = real.values[grid.sub_slices(ext)]
    bcs = boundary_batch(cfg.boundary, grid, Ms, seed)
    res = solve_rd_batch(nl, zeta[None], g, bcs, grid, keep_field=keep_fields, sup_regions=regions)
    reports = []
    for b, M in enumerate(Ms):
        for j, R in enumerate(cfg.R):
            terms = pde_bound_terms(nl.m, cfg.alpha, R, znorm, cfg.g_sup)
            ctx = {"seed": seed, "M": M, "R": float(R), "boundary": cfg.boundary, "nx": grid.nx,
                   "alpha": cfg.alpha, "zeta_norm": znorm, "scale_floor": 4 * grid.dx}
            reports.append(BoundReport(float(res.sups[b, j]), terms, ctx))
    fields = {"zeta": zeta, "u": res.field} if keep_fields else None
    return reports, fields


def run_coming_down(cfg, progress=None, keep_fields: bool = False, workers: int = 1) -> ComingDownResult:
    """Ratios |u|_{P_R} / pde_bound_rhs over seeds, boundary magnitudes and R.

    The noise is sampled on the grid widened by one unit in space and into
    the past, so its negative norm over the unit cylinder sees every scale
    up to 1; the equation is then solved on the unit cylinder itself.
    Seeds run in a process pool when ``workers > 1``; reports keep seed order.
    """
    if cfg.ensemble < 1:
        raise ExperimentError("ensemble must be at least 1")
    if not cfg.nonlinearity().is_polynomial:
        raise ExperimentError("the coming-down bound is stated for polynomial damping")
    seeds = [cfg.base_seed + i for i in range(cfg.ensemble)]
    reports, fields_out = [], {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_coming_down_seed, cfg, s, keep_fields) for s in seeds]
            for k, fut in enumerate(futures):
                reps, flds = fut.result()
                reports += reps
                if flds is not None:
                    fields_out[seeds[k]] = flds
                if progress is not None:
                    progress(k + 1, len(seeds))
    else:
        for k, s in enumerate(seeds):
            reps, flds = _coming_down_seed(cfg, s, keep_fields)
            reports += reps
            if flds is not None:
                fields_out[s] = flds
            if progress is not None:
                progress(k + 1, len(seeds))
    return ComingDownResult(reports, summarize_coming_down(reports, [float(M) for M in cfg.M], cfg.R),
                            fields_out)


def summarize_coming_down(reports, Ms, Rs) -> dict:
    ratios = np.array([r.ratio for r in reports])
    max_by_M = {M: max(r.ratio for r in reports if r.context["M"] == M) for M in Ms}
    median_by_M = {M: float(np.median([r.ratio for r in reports if r.context["M"] == M])) for M in Ms}
    max_by_MR = {f"{M:g}|{R:g}": max(r.ratio for r in reports if r.context["M"] == M and r.context["R"] == R)
                 for M in Ms for R in Rs}
    slope = _log_slope(Ms, [max_by_M[M] for M in Ms])
    return {
        "n_reports": len(reports),
        "all_finite": bool(np.all(np.isfinite(ratios))),
        "max_ratio_by_M": {f"{M:g}": v for M, v in max_by_M.items()},
        "median_ratio_by_M": {f"{M:g}": v for M, v in median_by_M.items()},
        "max_ratio_by_M_and_R": max_by_MR,
        "log_slope": slope,
        "uniform": bool(np.all(np.isfinite(ratios)) and abs(slope) < 0.05),
    }


# ---------------------------------------------------------------------------
# SPDE ensemble for tails


def spde_sup_samples(nl: Nonlinearity, spec: CovarianceSpec, nx: int, n: int, batch: int,
                     base_seed: int, R: float = 0.5, boundary: str = "zero", M: float = 0.0) -> dict:
    """sup |u| over P_R and over the final time slice for n independent runs.

    Runs are solved in batches; run i uses seed base_seed + i.
    """
    grid = SpaceTimeGrid(d=1, nx=nx)
    region = cylinder_region(R, grid)
    final = np.zeros(grid.shape, dtype=bool)
    # the open cylinder stops short of t = 1; reuse its spatial extent there
    final[-1] = region[-2]
    sup_R, sup_final = [], []
    for b0 in range(0, n, batch):
        seeds = range(base_seed + b0, base_seed + min(b0 + batch, n))
        zeta = np.stack([sample_noise(grid, spec, s).values for s in seeds])
        bcs = boundary_batch(boundary, grid, [M] * len(zeta), b0)
        res = solve_rd_batch(nl, zeta, None, bcs, grid, keep_field=False, sup_regions=[region, final])
        sup_R.append(res.sups[:, 0])
        sup_final.append(res.sups[:, 1])
    return {"sup_region": np.concatenate(sup_R), "sup_final": np.concatenate(sup_final)}


# ---------------------------------------------------------------------------
# invariant measure


@dataclass
class InvariantSample:
    x: np.ndarray
    fields: np.ndarray          # (n_samples, nx) including the zero end points
    acceptance: float
    step: float
    iact: float
    potential_mean: float
    info: dict = field(default_factory=dict)

    def diagnostics(self) -> dict:
        ok = 0.1 <= self.acceptance <= 0.9
        return {"acceptance": self.acceptance, "step": self.step, "iact": self.iact,
                "potential_mean": self.potential_mean, "acceptance_ok": ok, **self.info}


def _bridge(rng, shape, nx: int, var_step: float) -> np.ndarray:
    """Discrete Brownian bridge on nx equispaced nodes of [-1, 1], zero at both ends."""
    inc = rng.standard_normal(shape + (nx - 1,)) * math.sqrt(var_step)
    W = np.concatenate([np.zeros(shape + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    frac = np.linspace(0.0, 1.0, nx)
    return W - frac * W[..., -1:]


def integrated_autocorrelation(trace: np.ndarray) -> float:
    """Integrated autocorrelation time of (n_chains, n_steps) traces, Sokal window c = 5."""
    x = np.atleast_2d(trace).astype(float)
    x = x - x.mean(axis=1, keepdims=True)
    n = x.shape[1]
    f = np.fft.rfft(x, 2 * n, axis=1)
    acf = np.fft.irfft(f * np.conj(f), axis=1)[:, :n].mean(axis=0)
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    tau = 1.0
    for k in range(1, n):
        tau += 2 * rho[k]
        if k >= 5 * tau:
            break
    return float(max(tau, 1.0))


def sample_invariant_measure(m: float, nx: int, chain_steps: int, seed: int, n_chains: int = 100,
                             burn_in: int = 2000, thin: int | None = None, scaling: str = "spde",
                             weighted: bool = True, target_accept: float = 0.3,
                             min_steps: int = 10_000) -> InvariantSample:
    """Preconditioned Crank-Nicolson chains for the bridge measure reweighted by |u|^(m+1).

    The target density relative to a Brownian bridge on [-1, 1] with zero
    end values is exp(-k * int |u|^(m+1) / (m+1)).  With ``scaling="spde"``
    the bridge has step variance dx/2 and k = 2, which is the equilibrium of
    d_t u = Laplace u - u|u|^(m-1) + space-time white noise; ``"literal"``
    uses step variance dx and k = 1.  Chains run in lock step; the step size
    adapts toward ``target_accept`` during burn-in and is frozen afterwards.
    """
    if chain_steps < min_steps:
        raise ExperimentError(f"chain_steps must be at least {min_steps}")
    if not m > 1:
        raise ExperimentError("m must exceed 1")
    if scaling not in ("spde", "literal"):
        raise ExperimentError("scaling must be spde or literal")
    dx = 2.0 / (nx - 1)
    var_step, k = (dx / 2, 2.0) if scaling == "spde" else (dx, 1.0)
    if not weighted:
        k = 0.0
    p = m + 1
    rng = np.random.default_rng(seed)
    x = np.linspace(-1.0, 1.0, nx)

    def potential(u):
        return k * dx * np.sum(np.abs(u) ** p, axis=-1) / p

    u = _bridge(rng, (n_chains,), nx, var_step)
    phi = potential(u)
    log_step = math.log(0.5)
    acc_window = []
    for it in range(burn_in):
        b = math.exp(log_step)
        prop = math.sqrt(1 - b * b) * u + b * _bridge(rng, (n_chains,), nx, var_step)
        phi_p = potential(prop)
        ok = np.log(rng.random(n_chains)) < phi - phi_p
        u[ok], phi[ok] = prop[ok], phi_p[ok]
        acc_window.append(ok.mean())
        if (it + 1) % 50 == 0:
            log_step = min(log_step + (np.mean(acc_window) - target_accept), 0.0)
            acc_window = []
    b = math.exp(log_step)
    thin = thin if thin is not None else max(1, chain_steps // 100)
    keep, trace, acc = [], np.empty((n_chains, chain_steps)), 0.0
    for it in range(chain_steps):
        prop = math.sqrt(1 - b * b) * u + b * _bridge(rng, (n_chains,), nx, var_step)
        phi_p = potential(prop)
        ok = np.log(rng.random(n_chains)) < phi - phi_p
        u[ok], phi[ok] = prop[ok], phi_p[ok]
        acc += ok.mean()
        trace[:, it] = np.abs(u).max(axis=1)
        if (it + 1) % thin == 0:
            keep.append(u.copy())
    fields = np.concatenate(keep, axis=0) if keep else np.empty((0, nx))
    return InvariantSample(x, fields, acc / chain_steps, b, integrated_autocorrelation(trace),
                           float(np.mean(potential(fields))), {"thin": thin, "n_chains": n_chains,
                                                                "scaling": scaling})


# ---------------------------------------------------------------------------
# integrability comparison


def compare_integrability(m: float, alpha: float, sde_fit: TailFit, inv_fit: TailFit,
                          band=(2.2, 3.8), max_gap: float = 0.6) -> dict:
    target = (m + 3) / 2
    lo, hi = band
    gap = abs(sde_fit.beta - inv_fit.beta)
    return {
        "target": target,
        "predicted_invariant": 1 + (m + 1) * alpha,
        "predicted_dynamic": 2 + (m - 1) * alpha,
        "beta_sde": sde_fit.beta,
        "beta_invariant": inv_fit.beta,
        "gap_sde": sde_fit.beta - target,
        "gap_invariant": inv_fit.beta - target,
        "difference": gap,
        "band": [lo, hi],
        "passed": bool(lo <= sde_fit.beta <= hi and lo <= inv_fit.beta <= hi and gap < max_gap),
    }


# ---------------------------------------------------------------------------
# random test fields and diagnostic studies


def random_band_limited(grid: SpaceTimeGrid, rng, n_modes: int = 6, k_max: float = 10.0):
    """c0 + sum a_j cos(k_j . x + w_j t + p_j) with |k| <= k_max and |w| <= k_max^2."""
    coords = grid.coordinates()
    t = coords[0]
    vals = np.full(grid.shape, rng.uniform(-1, 1))
    for _ in range(n_modes):
        phase = rng.uniform(-k_max**2, k_max**2) * t + rng.uniform(0, 2 * np.pi)
        for x in coords[1:]:
            phase = phase + rng.uniform(-k_max, k_max) * x
        vals = vals + rng.uniform(-1, 1) / n_modes * np.cos(phase)
    return vals


def commutator_study(Ts, n_fields: int, alpha: float, m: float, seed: int, tolerance: float = 0.2,
                     stride: int = 2) -> list[dict]:
    """Commutator sup against its bound on random band-limited fields.

    Each scale T gets a local grid with dx = T/8 covering x in [-4T, 4T]
    and t in [0, 16T^2]; the region is t > 4T^2, |x| < 2T.
    """
    from .bounds import commutator_bound, commutator_field
    from .kernels import ScalarField

    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_fields):
        state = rng.bit_generator.state
        for T in Ts:
            rng.bit_generator.state = state   # same field for every T
            dx = T / 8
            grid = SpaceTimeGrid(d=1, nx=65, t_range=(0.0, 1024 * dx * dx), x_range=(-4 * T, 4 * T))
            u = ScalarField(grid, random_band_limited(grid, rng))
            t, x = grid.coordinates()
            region = np.broadcast_to((t > 4 * T * T + grid.dt / 2) & (np.abs(x) < 2 * T), grid.shape).copy()
            _, sup = commutator_field(u, m, T, region)
            bound = commutator_bound(u, m, T, alpha, region, stride=stride)
            rows.append({"field": i, "T": float(T), "commutator": sup, "bound": bound,
                         "ratio": sup / bound if bound > 0 else math.inf,
                         "passed": bool(sup <= (1 + tolerance) * bound)})
    return rows


def schauder_study(radii, dx_list, alpha: float) -> list[dict]:
    from .bounds import schauder_bump, schauder_grid, schauder_ratio

    rows = []
    for dx in dx_list:
        grid = schauder_grid(dx)
        for r in radii:
            res = schauder_ratio(schauder_bump(grid, r), alpha, support_radius=r, detail=True)
            rows.append({"dx": float(dx), "radius": float(r), "ratio": res.ratio, "holder": res.holder,
                         "forcing_norm": res.forcing_norm, "stride": res.stride})
    return rows


def random_spatial_field(nx: int, rng) -> np.ndarray:
    """One of: smooth trigonometric sum, step function, spikes, random walk, or a mix."""
    x = np.linspace(-1, 1, nx)
    kind = rng.integers(5)
    if kind == 0:
        u = sum(rng.normal() * np.cos(rng.uniform(0, 20) * x + rng.uniform(0, 6.3)) for _ in range(5))
    elif kind == 1:
        cuts = np.sort(rng.uniform(-1, 1, rng.integers(1, 8)))
        u = rng.normal(size=len(cuts) + 1)[np.searchsorted(cuts, x)]
    elif kind == 2:
        u = np.zeros(nx)
        u[rng.integers(0, nx, rng.integers(1, 4))] = rng.normal(scale=10, size=1)
    elif kind == 3:
        u = np.cumsum(rng.normal(size=nx)) * math.sqrt(2 / nx)
    else:
        u = random_spatial_field(nx, rng) + random_spatial_field(nx, rng)
    u = np.asarray(u, dtype=float) * 10.0 ** rng.uniform(-2, 2)
    return u if np.any(u != 0) else np.ones(nx)


def interpolation_study(n_fields: int, nx: int, alpha: float, m: float, seed: int) -> list[dict]:
    from .bounds import interpolation_check

    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_fields):
        rep = interpolation_check(random_spatial_field(nx, rng), alpha, m)
        rows.append({"field": i, "lhs": rep.lhs, "rhs": rep.rhs, "ratio": rep.ratio,
                     "dominant": rep.dominant, "passed": bool(rep.lhs <= rep.rhs)})
    return rows


def variance_scaling_study(spec: CovarianceSpec, nx: int, n_real: int, seed: int, scales=None,
                           alpha: float | None = None):
    """Ensemble variance of (zeta)_T against T, with the exact discrete variance alongside."""
    from .kernels import dyadic_scales
    from .noise import kernel_variance, noise_moment_scaling

    grid = SpaceTimeGrid(d=1, nx=nx)
    if scales is None:
        scales = dyadic_scales(grid.dx)
    ens = (sample_noise(grid, spec, seed + i) for i in range(n_real))
    rep = noise_moment_scaling(ens, alpha if alpha is not None else spec.default_alpha(), scales)
    exact = [kernel_variance(T, grid, spec) for T in scales]
    rep.extra["exact_variances"] = exact
    rep.extra["exact_slope"] = float(np.polyfit(np.log(scales), np.log(exact), 1)[0])
    return rep


def dyadic_dense_study(spec: CovarianceSpec, nx: int, n_real: int, alpha: float, seed: int,
                       n_dense: int = 64) -> list[dict]:
    """Dyadic-scale against dense-scale negative norm over the unit cylinder."""
    from .kernels import dense_scales

    grid = SpaceTimeGrid(d=1, nx=nx)
    ext = grid.extended(1.0)
    cyl = Cylinder(0.0, 1)
    rows = []
    for i in range(n_real):
        z = sample_noise(ext, spec, seed + i).field
        dy = neg_holder_norm(z, alpha, cyl, coarsen=True)
        de = neg_holder_norm(z, alpha, cyl, scales=dense_scales(grid.dx, n_dense), coarsen=True)
        rows.append({"seed": seed + i, "dyadic": dy, "dense": de, "ratio": max(dy, de) / min(dy, de)})
    return rows


def refinement_study(spec: CovarianceSpec, nx_list, n_real: int, alpha: float, seed: int) -> list[dict]:
    """Negative norm over the unit cylinder as the grid refines."""
    rows = []
    for nx in nx_list:
        grid = SpaceTimeGrid(d=1, nx=nx)
        ext = grid.extended(1.0)
        vals = [neg_holder_norm(sample_noise(ext, spec, seed + i).field, alpha, Cylinder(0.0, 1), coarsen=True)
                for i in range(n_real)]
        rows.append({"nx": nx, "dx": grid.dx, "mean": float(np.mean(vals)), "sd": float(np.std(vals)),
                     "max": float(np.max(vals))})
    return rows
