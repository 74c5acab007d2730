import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdbounds.geometry import Point, SpaceTimeGrid
from rdbounds.nonlinearity import (
    Nonlinearity, NonlinearityError, barrier_eta, barrier_eta_grid, barrier_range_floor, check_assumptions, default_lambda,
    verify_barrier_inequality,
)

POLY3 = Nonlinearity.polynomial(3)
SINH = Nonlinearity.sinh()
LOG2 = Nonlinearity.log_type(2.0)


def test_theta_values():
    assert POLY3.theta(2.0) == pytest.approx(4.0)
    assert SINH.theta(2.0) == pytest.approx(math.sinh(2) / 2, rel=1e-12)
    u = np.array([0.5, 3.0, 40.0])
    assert np.allclose(LOG2.theta(u), np.log1p(u) ** 2)


def test_theta_inverse_values():
    assert POLY3.theta_inverse(4.0) == pytest.approx(2.0, rel=1e-10)
    assert LOG2.theta_inverse(4.0) == pytest.approx(math.exp(2) - 1, rel=1e-9)
    assert SINH.theta_inverse(math.sinh(2) / 2) == pytest.approx(2.0, rel=1e-8)


@pytest.mark.parametrize("nl", [POLY3, Nonlinearity.polynomial(5), SINH, LOG2], ids=lambda n: n.kind)
@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e6))
def test_theta_roundtrip(nl, u):
    if nl.kind == "sinh":
        u = min(u, 600.0)
    assert nl.theta_inverse(nl.theta(u)) == pytest.approx(u, rel=1e-8)


def test_invalid_parameters():
    with pytest.raises(NonlinearityError):
        Nonlinearity.polynomial(0.5)
    with pytest.raises(NonlinearityError):
        POLY3.theta(-1.0)


@pytest.mark.parametrize("m", [2.0, 3.0, 5.0])
def test_polynomial_certifies_c_equal_m(m):
    rep = check_assumptions(Nonlinearity.polynomial(m))
    assert rep.passed
    assert rep.certified_c == pytest.approx(m, rel=1e-9)


def test_log_type_passes_factorized_set_on_barrier_range():
    floor = barrier_range_floor(LOG2, default_lambda(1))
    rep = check_assumptions(LOG2, u_min=floor)
    assert rep.assumption == "factorized"
    assert rep.passed
    # the extra 1/a factor of the literal f2 breaks dominance on the same range
    literal = Nonlinearity.log_type(2.0, f2_variant="literal")
    assert not check_assumptions(literal, u_min=barrier_range_floor(literal, default_lambda(1))).passed


def test_log_factor_alone_has_ratio_tending_to_one():
    u = np.geomspace(1.0, 1e8, 2000)
    ratio = u * LOG2.df1(u) / LOG2.f1(u)
    # u f1'/f1 = 1 + a u / ((1+u) log(1+u)) decreases to 1, so no c > 1 works
    assert np.all(np.diff(ratio) < 0)
    assert ratio[-1] - 1 < 0.12
    assert ratio[-1] == pytest.approx(1 + 2 * u[-1] / ((1 + u[-1]) * math.log1p(u[-1])), rel=1e-10)


def test_default_lambda():
    assert default_lambda(1) == pytest.approx(29 ** -0.5)
    assert default_lambda(2) == pytest.approx(57 ** -0.5)
    assert default_lambda(3) == pytest.approx(85 ** -0.5)
    assert default_lambda(1) == pytest.approx(0.18570, abs=1e-5)


def test_barrier_eta_hand_value():
    eta = barrier_eta(POLY3, 0.0, default_lambda(1), Point(1.0, 0.0))
    assert eta == pytest.approx(1 / (3 * math.sqrt(29)), rel=1e-12)
    assert eta == pytest.approx(0.06190, abs=1e-5)


def test_barrier_vanishes_on_boundary():
    lam = default_lambda(1)
    assert barrier_eta(POLY3, 0.0, lam, Point(0.0, 0.3)) == 0
    assert barrier_eta(POLY3, 0.0, lam, Point(0.5, 1.0)) == 0
    assert barrier_eta(POLY3, 0.0, lam, Point(0.5, -1.0)) == 0


def test_barrier_decreases_towards_faces():
    lam = default_lambda(1)
    xs = np.linspace(0, 0.99, 50)
    vals = [barrier_eta(POLY3, 0.0, lam, Point(0.5, x)) for x in xs]
    assert np.all(np.diff(vals) < 0)
    ts = np.linspace(0.01, 1, 50)
    vals = [barrier_eta(POLY3, 0.0, lam, Point(t, 0.0)) for t in ts]
    assert np.all(np.diff(vals) > 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1), st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_barrier_symmetry_d2(t, a, b):
    lam = default_lambda(2)
    ref = barrier_eta(SINH, 0.0, lam, Point(t, [a, b]))
    for x in ([b, a], [-a, b], [a, -b], [-b, -a]):
        assert barrier_eta(SINH, 0.0, lam, Point(t, x)) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("nl", [POLY3, SINH, LOG2], ids=lambda n: n.kind)
def test_barrier_sandwich(nl):
    d = 1
    lam = default_lambda(d)
    g = SpaceTimeGrid(d=1, nx=33)
    eta = barrier_eta_grid(nl, lam, g, g_sup=0.0)
    t, x = np.meshgrid(g.t, g.x, indexing="ij")
    inside = (t > 0) & (np.abs(x) < 1)
    s2 = np.minimum(np.minimum(t, (1 + x) ** 2), (1 - x) ** 2)[inside]
    th = nl.theta_inverse(1 / (lam * lam * s2))
    inv = 1 / eta[inside]
    assert np.all(inv >= th * (1 - 1e-10))
    assert np.all(inv <= (2 * d + 1) * th * (1 + 1e-10))


@pytest.mark.parametrize("nl", [POLY3, Nonlinearity.polynomial(2), Nonlinearity.polynomial(5), SINH, LOG2],
                         ids=lambda n: f"{n.kind}{n.m or ''}")
@pytest.mark.parametrize("d", [1, 2])
def test_barrier_inequality_passes_at_default_lambda(nl, d):
    rep = verify_barrier_inequality(nl, default_lambda(d), SpaceTimeGrid.default(d))
    assert rep.passed, rep.to_dict()
    assert rep.n_checked > 0


def test_barrier_inequality_fails_for_large_lambda():
    rep = verify_barrier_inequality(POLY3, 10 * default_lambda(1), SpaceTimeGrid.default(1))
    assert not rep.passed
    assert rep.worst_margin < 0


def test_barrier_inequality_with_forcing():
    nl = Nonlinearity.polynomial(3, g_sup=5.0)
    rep = verify_barrier_inequality(nl, default_lambda(1), SpaceTimeGrid(d=1, nx=129))
    assert rep.passed and rep.cap_condition
