"""Randomized invariants (hypothesis)."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from tracestokes.analysis import eoc
from tracestokes.lagrange import basis
from tracestokes.levelset import Ellipsoid
from tracestokes.quadrature import tet_rule, triangle_rule
from tracestokes.unsteady import fit_exponent

unit = st.floats(0.0, 1.0)


@st.composite
def tet_points(draw, n=5):
    pts = []
    for _ in range(n):
        a, b, c = draw(unit), draw(unit), draw(unit)
        s = max(1.0, a + b + c)
        pts.append((a / s, b / s, c / s))
    return np.array(pts)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 4), x=tet_points())
def test_partition_of_unity(k, x):
    b = basis(k)
    assert np.allclose(b.values(x).sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(b.gradients(x).sum(axis=1), 0.0, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(a=st.integers(0, 5), b=st.integers(0, 5), c=st.integers(0, 4))
def test_quadrature_exact_for_monomials(a, b, c):
    d2 = a + b
    r = triangle_rule(d2)
    exact = math.factorial(a) * math.factorial(b) / math.factorial(d2 + 2)
    assert abs(r.weights @ (r.points[:, 0] ** a * r.points[:, 1] ** b) - exact) <= 1e-14
    d3 = a + b + c
    r = tet_rule(d3)
    exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(d3 + 3)
    got = r.weights @ (r.points[:, 0] ** a * r.points[:, 1] ** b * r.points[:, 2] ** c)
    assert abs(got - exact) <= 1e-14


vec = st.tuples(*[st.floats(-1.0, 1.0)] * 3).filter(lambda v: np.linalg.norm(v) > 0.2)


@settings(max_examples=40, deadline=None)
@given(v=vec, r=st.floats(0.8, 1.2))
def test_closest_point_is_idempotent_and_orthogonal(v, r):
    phi = Ellipsoid((1.0, 0.8, 1.2))
    x = r * np.asarray(v)[None] / np.linalg.norm(v)
    y = phi.closest_point(x)
    assert abs(phi.value(y)[0]) <= 1e-12
    assert np.allclose(phi.closest_point(y), y, atol=1e-13)
    assert np.linalg.norm(np.cross(x - y, phi.normal(y))) <= 1e-10


@given(order=st.floats(0.5, 4.0), c=st.floats(1e-3, 1e3))
def test_eoc_recovers_power_law(order, c):
    hs = 0.5 ** np.arange(4)
    rates = eoc(c * hs**order)
    assert math.isnan(rates[0])
    assert np.allclose(rates[1:], order, atol=1e-9)


@given(alpha=st.floats(1e-4, 0.5), e0=st.floats(1e-3, 1e3))
def test_fit_exponent_exact_decay(alpha, e0):
    t = np.linspace(0.0, 20.0, 41)
    assert math.isclose(fit_exponent(t, e0 * np.exp(-alpha * t)), alpha, rel_tol=1e-8)
