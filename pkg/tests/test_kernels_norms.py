import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdbounds.geometry import Cylinder, SpaceTimeGrid, cylinder_region
from rdbounds.kernels import (
    NormError, ScalarField, dense_scales, field_from_function, holder_seminorm, make_kernel, mollification_error,
    mollification_error_bound, mollify, neg_holder_norm, sup_norm,
)
from rdbounds.noise import CovarianceSpec, sample_noise

from oracles import continuous_bump_moment

FINE = SpaceTimeGrid(d=1, nx=257)


def test_kernel_unit_mass_and_raw_quadrature():
    k = make_kernel(1.0, 1, FINE)
    assert k.mass == pytest.approx(1.0, abs=1e-6)
    # the analytically normalised bump already integrates to one on the lattice
    assert k.raw_mass == pytest.approx(1.0, rel=1e-3)


def test_kernel_peak_scaling():
    big = make_kernel(1.0, 1, FINE).values.max()
    small = make_kernel(0.25, 1, FINE).values.max()
    assert small / big == pytest.approx(0.25 ** -3, rel=0.05)


def test_kernel_support_is_past_ball():
    k = make_kernel(0.25, 1, FINE)
    s, y = np.broadcast_arrays(*k.lag_coordinates())
    outside = np.maximum(np.abs(y), np.sqrt(s)) >= 0.25
    assert np.all(k.weights[outside] == 0)
    # lag s = 0 is the present time: the centre of the bump is strictly in the past
    assert np.all(k.weights[0] < 1e-12)


def test_kernel_rejects_subgrid_scale():
    with pytest.raises(NormError):
        make_kernel(2 * FINE.dx, 1, FINE)


@pytest.mark.parametrize("T", [1.0, 0.25, 0.0625])
def test_distance_moment_bound(T):
    k = make_kernel(T, 1, FINE)
    assert k.distance_moment(0.5) <= T**0.5 * 1.05


def test_second_moment_matches_quadrature():
    m2_unit = continuous_bump_moment(2)
    k = make_kernel(0.25, 1, FINE)
    assert k.spatial_moment(2) == pytest.approx(m2_unit * 0.25**2, rel=0.01)
    assert abs(k.spatial_moment(1)) < 1e-12


def test_mollify_constant_and_linear():
    g = SpaceTimeGrid(d=1, nx=129, t_range=(-1, 1), x_range=(-2, 2))
    h = field_from_function(g, lambda t, x: 5.0 + 0 * x)
    hT = mollify(h, 0.5)
    v = hT.values[hT.valid_mask()]
    assert np.allclose(v, 5.0, atol=1e-12)
    lin = mollify(field_from_function(g, lambda t, x: x**2 + 0 * t), 0.5)
    k = make_kernel(0.5, 1, g)
    t, x = g.coordinates()
    mask = lin.valid_mask()
    expect = np.broadcast_to(x**2, g.shape)[mask] + k.spatial_moment(2)
    assert np.allclose(lin.values[mask], expect, atol=1e-12)


def test_mollify_spike_contracts(rng):
    g = SpaceTimeGrid(d=1, nx=129, t_range=(-1, 1), x_range=(-2, 2))
    vals = np.zeros(g.shape)
    vals[1500, 64] = 7.0
    hT = mollify(ScalarField(g, vals), 0.25)
    assert np.nanmax(np.abs(hT.values)) <= 7.0


def test_mollify_direct_and_fft_agree(rng):
    g = SpaceTimeGrid(d=1, nx=129, t_range=(-1, 1), x_range=(-2, 2))
    h = ScalarField(g, rng.standard_normal(g.shape))
    a = mollify(h, 0.125, method="direct").values
    b = mollify(h, 0.125, method="fft").values
    assert np.allclose(a, b, atol=1e-10, equal_nan=True)


def test_sup_norm_examples(rng):
    g = SpaceTimeGrid(d=1, nx=33)
    assert sup_norm(field_from_function(g, lambda t, x: -3.0 + 0 * x), Cylinder(0)) == 3.0
    lin = field_from_function(g, lambda t, x: x + 0 * t)
    assert sup_norm(lin, Cylinder(0.25)) == pytest.approx(0.75 - g.dx, abs=1e-12)
    vals = rng.standard_normal(g.shape)
    mask = cylinder_region(0.1, g)
    brute = max(abs(vals[i, j]) for i in range(g.nt) for j in range(g.nx) if mask[i, j])
    assert sup_norm(ScalarField(g, vals), Cylinder(0.1)) == brute


def test_holder_examples():
    g = SpaceTimeGrid(d=1, nx=17)
    const = field_from_function(g, lambda t, x: 2.0 + 0 * x)
    assert holder_seminorm(const, 0.5, Cylinder(0)) == 0
    lin = field_from_function(g, lambda t, x: x + 0 * t)
    # brute force over every pair in the open unit cylinder
    mask = cylinder_region(0.0, g)
    ti, xi = np.nonzero(mask)
    tt, xx = g.t[ti], g.x[xi]
    dist = np.maximum(np.abs(xx[:, None] - xx[None, :]), np.sqrt(np.abs(tt[:, None] - tt[None, :])))
    ok = dist >= 2 * g.dx - 1e-12
    brute = np.max(np.abs(xx[:, None] - xx[None, :])[ok] / dist[ok] ** 0.5)
    got = holder_seminorm(lin, 0.5, Cylinder(0))
    assert got == pytest.approx(brute, rel=1e-12)
    # attained at the widest spatial separation, 2 - 2dx on the open cylinder
    assert got == pytest.approx(math.sqrt(2 - 2 * g.dx), rel=1e-12)
    g33 = SpaceTimeGrid(d=1, nx=33)
    assert holder_seminorm(field_from_function(g33, lambda t, x: x + 0 * t), 0.5, Cylinder(0)) == pytest.approx(
        math.sqrt(2), rel=0.05)
    assert holder_seminorm(lin, 0.5, Cylinder(0.3)) <= got


def test_holder_stride_only_lowers(rng):
    g = SpaceTimeGrid(d=1, nx=17)
    h = ScalarField(g, rng.standard_normal(g.shape))
    full = holder_seminorm(h, 0.4, Cylinder(0))
    assert holder_seminorm(h, 0.4, Cylinder(0), stride=2) <= full


def test_neg_norm_constants_and_zero():
    g = SpaceTimeGrid(d=1, nx=17).extended(1.0)
    c = field_from_function(g, lambda t, x: 0.7 + 0 * x)
    assert neg_holder_norm(c, 0.49, Cylinder(0)) == pytest.approx(0.7, rel=1e-9)
    z = field_from_function(g, lambda t, x: 0 * x)
    assert neg_holder_norm(z, 0.49, Cylinder(0)) == 0


def test_neg_norm_dyadic_vs_dense():
    base = SpaceTimeGrid(d=1, nx=33)
    z = sample_noise(base.extended(1.0), CovarianceSpec("white"), 3).field
    dy = neg_holder_norm(z, 0.49, Cylinder(0))
    de = neg_holder_norm(z, 0.49, Cylinder(0), scales=dense_scales(base.dx, 64))
    assert max(dy, de) / min(dy, de) <= 4


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 10_000))
def test_norms_are_homogeneous(k, seed):
    g = SpaceTimeGrid(d=1, nx=17).extended(1.0)
    vals = np.random.default_rng(seed).standard_normal(g.shape)
    h = ScalarField(g, vals)
    hk = h.scaled(k)
    cyl = Cylinder(0)
    assert sup_norm(hk, cyl) == pytest.approx(k * sup_norm(h, cyl), rel=1e-12)
    assert holder_seminorm(hk, 0.5, cyl) == pytest.approx(k * holder_seminorm(h, 0.5, cyl), rel=1e-12)
    assert neg_holder_norm(hk, 0.5, cyl) == pytest.approx(k * neg_holder_norm(h, 0.5, cyl), rel=1e-10)


def test_mollification_error_linear():
    g = SpaceTimeGrid(d=1, nx=129, t_range=(-1, 1), x_range=(-2, 2))
    h = field_from_function(g, lambda t, x: x + 0 * t)
    err = mollification_error(h, 0.125, 0.99, Cylinder(0))
    # Lipschitz constant of x is 1, so T^1 * [h]_1 = 1/8
    assert err <= 0.125
    const = field_from_function(g, lambda t, x: 1.5 + 0 * x)
    assert mollification_error(const, 0.125, 0.5, Cylinder(0)) == pytest.approx(0, abs=1e-12)


def test_mollification_error_bound_random_smooth(rng):
    g = SpaceTimeGrid(d=1, nx=65, t_range=(-1, 1), x_range=(-2, 2))
    t, x = g.coordinates()
    for _ in range(100):
        vals = sum(rng.normal() * np.cos(rng.uniform(0, 6) * x + rng.uniform(-6, 6) * t + rng.uniform(0, 6.3))
                   for _ in range(3))
        h = ScalarField(g, np.broadcast_to(vals, g.shape).copy())
        T = rng.choice([0.25, 0.5])
        err = mollification_error(h, T, 0.5, Cylinder(0.25))
        assert err <= mollification_error_bound(h, T, 0.5, Cylinder(0.25)) + 1e-12
