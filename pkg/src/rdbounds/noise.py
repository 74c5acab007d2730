"""Seeded rough forcing on a space-time grid.

Cell values are averages of the continuum noise over a space-time cell, so a
white-noise node has variance 1/(dt dx^d).  Colored noise is white in time
and spatially stationary with covariance max(|x|, dx)^(-lam), synthesised
by circulant embedding on a periodised domain twice as wide as the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SpaceTimeGrid
from .kernels import ScalarField, make_kernel


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class CovarianceSpec:
    kind: str = "white"         # white | colored | colored_plus_dirac
    lam: float | None = None

    def __post_init__(self):
        if self.kind not in ("white", "colored", "colored_plus_dirac"):
            raise NoiseError(f"unknown noise kind {self.kind!r}")
        if self.kind != "white":
            if self.lam is None or not (0 < self.lam < 2):
                raise NoiseError("colored noise needs 0 < lam < 2")
        if self.kind == "colored_plus_dirac" and not self.lam > 1:
            raise NoiseError("the Dirac component is only allowed with lam > 1")

    @property
    def regularity(self) -> float:
        """Supremum of admissible alpha: zeta lies in C^(alpha-2) for alpha below it."""
        if self.kind == "white":
            return 0.5
        if self.kind == "colored":
            return (2 - self.lam) / 2
        # the white component limits regularity in d = 1
        return min((2 - self.lam) / 2, 0.5)

    def default_alpha(self) -> float:
        return 0.49 if self.kind == "white" else round(self.regularity - 0.01, 10)

    def variance_exponent(self, d: int = 1) -> float:
        """Var((zeta)_T) ~ T^(-exponent)."""
        if self.kind == "white":
            return d + 2
        if self.kind == "colored":
            return self.lam + 2
        return max(self.lam, d) + 2

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lam": self.lam}


@dataclass(frozen=True)
class NoiseRealization:
    field: ScalarField
    spec: CovarianceSpec
    seed: int
    sigma_kind: str = "constant 1"
    clamped_mass: float = 0.0

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def sidecar(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "seed": int(self.seed),
            "sigma": self.sigma_kind,
            "clamped_mass": float(self.clamped_mass),
            "grid": self.grid.to_dict(),
        }


def sample_white_noise(grid: SpaceTimeGrid, seed: int) -> NoiseRealization:
    if grid.d != 1:
        raise NoiseError("space-time white noise is only provided for d = 1")
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(grid.shape) / np.sqrt(grid.dt * grid.dx)
    return NoiseRealization(ScalarField(grid, vals), CovarianceSpec("white"), int(seed))


def regularized_covariance(r, lam: float, dx: float):
    return np.maximum(np.abs(r), dx) ** (-lam)


def circulant_spectrum(grid: SpaceTimeGrid, lam: float):
    """Eigenvalues of the embedding and the clamped fraction of spectral mass."""
    P = 4 * (grid.nx - 1)
    k = np.arange(P)
    lag = np.minimum(k, P - k) * grid.dx
    if grid.d == 1:
        c = regularized_covariance(lag, lam, grid.dx)
        ev = np.fft.fft(c).real
    else:
        mesh = np.meshgrid(*([lag] * grid.d), indexing="ij")
        r = np.sqrt(sum(m * m for m in mesh))
        c = regularized_covariance(r, lam, grid.dx)
        ev = np.fft.fftn(c).real
    # The grid-scale cap makes the lattice covariance slightly indefinite at
    # high frequency.  Negative eigenvalues are clamped and the rest rescaled
    # so the node variance K_reg(0) is kept (Chan and Wood's trace matching).
    neg = ev < 0
    if not neg.any():
        return ev, 0.0
    clamped = float(-ev[neg].sum() / np.abs(ev).sum())
    pos = np.where(neg, 0.0, ev)
    return pos * (ev.sum() / pos.sum()), clamped


def sample_colored_noise(grid: SpaceTimeGrid, spec: CovarianceSpec, seed: int,
                         chunk: int = 2048) -> NoiseRealization:
    if spec.kind == "white":
        raise NoiseError("use sample_white_noise for white noise")
    if spec.kind == "colored_plus_dirac" and grid.d != 1:
        raise NoiseError("the Dirac component is only defined for d = 1")
    ev, clamped = circulant_spectrum(grid, spec.lam)
    root = np.sqrt(ev)
    P = root.shape[0]
    rng = np.random.default_rng(seed)
    vals = np.empty(grid.shape)
    d = grid.d
    axes = tuple(range(1, d + 1))
    for n0 in range(0, grid.nt, chunk):
        n1 = min(n0 + chunk, grid.nt)
        xi = rng.standard_normal((n1 - n0,) + (P,) * d)
        if d == 1:
            y = np.fft.ifft(root * np.fft.fft(xi, axis=1), axis=1).real
        else:
            y = np.fft.ifftn(root * np.fft.fftn(xi, axes=axes), axes=axes).real
        vals[n0:n1] = y[(slice(None),) + (slice(0, grid.nx),) * d]
    vals /= np.sqrt(grid.dt)
    if spec.kind == "colored_plus_dirac":
        vals += rng.standard_normal(grid.shape) / np.sqrt(grid.dt * grid.dx)
    return NoiseRealization(ScalarField(grid, vals), spec, int(seed), clamped_mass=clamped)


def sample_noise(grid: SpaceTimeGrid, spec: CovarianceSpec, seed: int) -> NoiseRealization:
    if spec.kind == "white":
        return sample_white_noise(grid, seed)
    return sample_colored_noise(grid, spec, seed)


# ---------------------------------------------------------------------------
# moment scaling


@dataclass
class ScalingReport:
    scales: list
    variances: list
    n_samples: list
    slope: float
    expected_slope: float
    tolerance: float = 0.15
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.expected_slope) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "scales": list(map(float, self.scales)),
            "variances": list(map(float, self.variances)),
            "n_samples": list(map(int, self.n_samples)),
            "slope": float(self.slope),
            "expected_slope": float(self.expected_slope),
            "passed": self.passed,
        }


def probe_nodes(grid: SpaceTimeGrid, T: float):
    """Nodes whose past windows of radius T are disjoint and inside the grid.

    Time levels step back from the last level by whole window lengths; space
    positions tile the middle of the domain.  Returns (time indices,
    spatial index arrays) for d = 1 only in the spatial part's first axis and
    the centre of the remaining axes.
    """
    ker = make_kernel(T, grid.d, grid)
    J, K = ker.J, ker.K
    times = list(range(grid.nt - 1, J - 1, -(J + 1)))
    centre = grid.nx // 2
    spots = [centre]
    step = 2 * K + 1
    i = centre - step
    while i - K >= 0:
        spots.append(i)
        i -= step
    i = centre + step
    while i + K < grid.nx:
        spots.append(i)
        i += step
    return ker, np.asarray(times), np.asarray(sorted(spots))


def mollified_at(values: np.ndarray, ker, n: int, i: int) -> float:
    """(zeta)_T at node (n, i, centre, ...) by a direct window sum."""
    J, K = ker.J, ker.K
    d = values.ndim - 1
    win_t = values[n - J:n + 1][::-1]
    sl = (slice(None), slice(i - K, i + K + 1))
    c = values.shape[1] // 2
    sl = sl + (slice(c - K, c + K + 1),) * (d - 1)
    # kernel index k multiplies x - (k-K) dx; reversing the spatial window
    # is not needed because the kernel is even in space
    return float(np.sum(ker.weights * win_t[sl]))


def noise_moment_scaling(ensemble, alpha: float, scales, min_realizations: int = 200,
                         tolerance: float = 0.15) -> ScalingReport:
    """Fit log Var((zeta)_T) against log T over the ensemble.

    Variances pool every probe node of every realization; nodes come from
    ``probe_nodes`` so the windows of one realization do not overlap.
    ``ensemble`` may be a generator: realizations are consumed one at a time.
    """
    scales = list(scales)
    sq_sum = np.zeros(len(scales))
    counts = np.zeros(len(scales), dtype=int)
    grid = spec = probes = None
    n_real = 0
    for real in ensemble:
        if grid is None:
            grid, spec = real.grid, real.spec
            for T in scales:
                if T < 4 * grid.dx - 1e-12:
                    raise NoiseError("every scale must be at least 4*dx")
            probes = [probe_nodes(grid, T) for T in scales]
        v = real.values
        for j, (ker, times, spots) in enumerate(probes):
            vals = np.array([mollified_at(v, ker, int(n), int(i)) for n in times for i in spots])
            sq_sum[j] += np.sum(vals**2)
            counts[j] += len(vals)
        n_real += 1
    if n_real < min_realizations:
        raise NoiseError(f"need at least {min_realizations} realizations, got {n_real}")
    variances = (sq_sum / counts).tolist()
    slope = float(np.polyfit(np.log(scales), np.log(variances), 1)[0])
    return ScalingReport(scales, variances, counts.tolist(), slope, -spec.variance_exponent(grid.d),
                         tolerance, {"alpha": alpha})


def kernel_variance(T: float, grid: SpaceTimeGrid, spec: CovarianceSpec) -> float:
    """Exact Var((zeta)_T) of the discrete noise model at one node."""
    ker = make_kernel(T, grid.d, grid)
    w = ker.weights
    if spec.kind == "white":
        return float(np.sum(w**2) / (grid.dt * grid.dx**grid.d))
    if grid.d != 1:
        raise NoiseError("exact colored variance implemented for d = 1")
    K = ker.K
    lags = np.arange(-2 * K, 2 * K + 1) * grid.dx
    cov = regularized_covariance(lags, spec.lam, grid.dx)
    tot = 0.0
    for row in w:
        # sum_{k,k'} w_k w_k' C(k - k')
        tot += float(row @ np.array([np.dot(row, cov[2 * K - k: 4 * K + 1 - k]) for k in range(2 * K + 1)]))
    out = tot / grid.dt
    if spec.kind == "colored_plus_dirac":
        out += float(np.sum(w**2) / (grid.dt * grid.dx))
    return out
