import numpy as np
import pytest
from scipy import stats

from rdbounds.experiments import estimate_tail_exponent
from rdbounds.geometry import Cylinder, SpaceTimeGrid
from rdbounds.kernels import neg_holder_norm
from rdbounds.noise import (
    CovarianceSpec, NoiseError, circulant_spectrum, kernel_variance, mollified_at, noise_moment_scaling, probe_nodes,
    sample_colored_noise, sample_noise, sample_white_noise,
)

WHITE = CovarianceSpec("white")


def test_spec_validation_and_defaults():
    with pytest.raises(NoiseError):
        CovarianceSpec("colored", None)
    with pytest.raises(NoiseError):
        CovarianceSpec("colored", 2.5)
    with pytest.raises(NoiseError):
        CovarianceSpec("colored_plus_dirac", 0.5)
    assert WHITE.default_alpha() == 0.49
    assert CovarianceSpec("colored", 0.5).regularity == 0.75
    assert CovarianceSpec("colored", 1.0).variance_exponent() == 3


def test_white_moments():
    g = SpaceTimeGrid(d=1, nx=257)
    v = sample_white_noise(g, 11).values
    n = v.size
    assert n > 10**6
    scale = 1 / np.sqrt(g.dt * g.dx)
    assert abs(v.mean()) <= 3 * scale / np.sqrt(n)
    assert v.var() == pytest.approx(1 / (g.dt * g.dx), rel=0.05)
    z = v.ravel()[: 10**6] / scale
    assert abs(stats.skew(z)) < 0.05
    assert abs(stats.kurtosis(z)) < 0.1


@pytest.mark.parametrize("spec", [WHITE, CovarianceSpec("colored", 0.5)], ids=["white", "colored"])
def test_determinism(spec):
    g = SpaceTimeGrid(d=1, nx=33)
    a = sample_noise(g, spec, 5).values
    b = sample_noise(g, spec, 5).values
    c = sample_noise(g, spec, 6).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_white_rejects_higher_dimension():
    with pytest.raises(NoiseError):
        sample_white_noise(SpaceTimeGrid(d=2, nx=9), 0)


def test_colored_covariance_structure():
    lam = 0.5
    g = SpaceTimeGrid(d=1, nx=129)
    spec = CovarianceSpec("colored", lam)
    vals = np.concatenate([sample_colored_noise(g, spec, s).values for s in range(3)])
    vals = vals * np.sqrt(g.dt)      # per-time-slice field with covariance K_reg
    mid = slice(16, 113)
    c0 = np.mean(vals[:, mid] ** 2)
    assert c0 == pytest.approx(g.dx ** -lam, rel=0.05)
    c8 = np.mean(vals[:, 16:105] * vals[:, 24:113])
    c16 = np.mean(vals[:, 16:97] * vals[:, 32:113])
    assert c8 / c16 == pytest.approx(2**lam, rel=0.10)


def test_colored_small_lambda_is_nearly_flat():
    g = SpaceTimeGrid(d=1, nx=65)
    ev, clamped = circulant_spectrum(g, 0.05)
    vals = sample_colored_noise(g, CovarianceSpec("colored", 0.05), 1).values * np.sqrt(g.dt)
    corr = np.corrcoef(vals[:, 8], vals[:, 56])[0, 1]
    assert corr > 0.8
    assert clamped < 0.01


def test_clamped_mass_is_a_lattice_property():
    # the clamped fraction comes from the grid-scale cap, not from the embedding size
    for lam in (0.5, 1.0, 1.5):
        a = circulant_spectrum(SpaceTimeGrid(d=1, nx=65), lam)[1]
        b = circulant_spectrum(SpaceTimeGrid(d=1, nx=257), lam)[1]
        assert a == pytest.approx(b, rel=1e-3)
        assert 0 < a < 0.15


def test_clamped_spectrum_keeps_node_variance():
    g = SpaceTimeGrid(d=1, nx=65)
    ev, _ = circulant_spectrum(g, 1.0)
    assert np.all(ev >= 0)
    assert ev.mean() == pytest.approx(g.dx ** -1.0, rel=1e-12)


def test_exact_variance_matches_ensemble():
    g = SpaceTimeGrid(d=1, nx=65)
    for spec in (WHITE, CovarianceSpec("colored", 1.0)):
        T = 0.25
        ker, times, spots = probe_nodes(g, T)
        vals = [mollified_at(sample_noise(g, spec, s).values, ker, int(n), int(i))
                for s in range(25) for n in times for i in spots]
        exact = kernel_variance(T, g, spec)
        se = exact * np.sqrt(2 / len(vals))
        assert abs(np.mean(np.square(vals)) - exact) < 4 * se


def test_exact_variance_slope_white():
    g = SpaceTimeGrid(d=1, nx=257)
    Ts = [1 / 32, 1 / 16, 1 / 8, 1 / 4]
    v = [kernel_variance(T, g, WHITE) for T in Ts]
    slope = np.polyfit(np.log(Ts), np.log(v), 1)[0]
    assert slope == pytest.approx(-3, abs=0.05)


def test_moment_scaling_needs_ensemble():
    g = SpaceTimeGrid(d=1, nx=33)
    with pytest.raises(NoiseError):
        noise_moment_scaling([sample_noise(g, WHITE, 0)], 0.49, [0.125, 0.25])


def test_probe_windows_are_disjoint():
    g = SpaceTimeGrid(d=1, nx=129)
    ker, times, spots = probe_nodes(g, 0.125)
    assert np.all(np.diff(spots) >= 2 * ker.K + 1)
    assert np.all(-np.diff(times) >= ker.J + 1)


def test_negative_norm_tail_is_at_least_gaussian():
    g = SpaceTimeGrid(d=1, nx=33).extended(1.0)
    norms = [neg_holder_norm(sample_white_noise(g, 1000 + i).field, 0.49, Cylinder(0)) for i in range(1000)]
    # regression of log(-log survival) on log x, as for the squared-norm statement
    fit = estimate_tail_exponent(np.asarray(norms), q=0.55, method="loglog")
    assert fit.beta >= 1.8
