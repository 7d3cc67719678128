import math

import numpy as np
import pytest

from tracestokes.analysis import (ConvergenceRow, best_approximation, closest_point, eoc, error_parts, fill_eoc,
                                  geometry_report, interpolation_errors, korn_hodge_check)
from tracestokes.assembly import StokesParams, assemble
from tracestokes.discretization import discretize
from tracestokes.fe_space import interpolate_on_surface
from tracestokes.levelset import Ellipsoid, Plane, Sphere

from conftest import SPHERE, case, disc, study, system


def test_closest_point_examples():
    assert np.allclose(closest_point(SPHERE, np.array([[0, 0, 2.0]])), [[0, 0, 1]])
    assert np.allclose(closest_point(SPHERE, np.array([[0.3, 0.4, 0.0]])), [[0.6, 0.8, 0]])
    assert np.allclose(closest_point(Plane(), np.array([[1.5, -2.0, 0.7]])), [[1.5, -2.0, 0]])


@pytest.mark.parametrize("phi", [Sphere(), Ellipsoid((1.2, 1.0, 0.8))], ids=["sphere", "ellipsoid"])
def test_closest_point_idempotent(phi):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 3))
    x = x / np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(0.8, 1.2, (200, 1))
    y = closest_point(phi, x)
    assert np.max(np.abs(phi.value(y))) < 1e-12
    assert np.max(np.abs(closest_point(phi, y) - y)) <= 1e-12


def test_closest_point_is_orthogonal_for_ellipsoid():
    phi = Ellipsoid((1.2, 1.0, 0.8))
    x = np.array([[0.9, 0.5, 0.3], [-0.2, 0.1, 1.0]])
    y = closest_point(phi, x)
    n = phi.normal(y)
    d = x - y
    assert np.allclose(np.cross(d, n), 0, atol=1e-12)


def test_eoc():
    e = [1.0, 0.25, 0.0625]
    out = eoc(e)
    assert math.isnan(out[0]) and out[1:] == [2.0, 2.0]
    assert eoc([1.0, 1 / 8], hs=[1.0, 0.5])[1] == pytest.approx(3.0)
    assert math.isnan(eoc([1.0, 0.0])[1])


def test_convergence_row():
    rows = fill_eoc([ConvergenceRow(1, 0.5, 1.0, 1.0, 1.0), ConvergenceRow(2, 0.25, 0.25, 0.25, 0.125)])
    assert rows[1].eoc == pytest.approx(2.0)
    assert rows[1].eoc_L2_u == pytest.approx(3.0)
    assert rows[1].as_dict()["err"] == 0.5


def test_interpolant_energy_rate():
    rows = fill_eoc([interpolation_errors(case("killing"), disc(2, lv), level=lv) for lv in (1, 2, 3)])
    assert rows[-1].eoc_A >= 2 - 0.3


def test_exact_zero_on_plane():
    phi = Plane((0.0, 0.0, 1.0), 0.1)
    d = discretize(phi, 2, n_per_axis=6)
    u = lambda x: np.stack([x[:, 1] ** 2, x[:, 0] * x[:, 1], np.zeros(len(x))], 1)  # noqa: E731

    def gu(x):
        G = np.zeros((len(x), 3, 3))
        G[:, 0, 1] = 2 * x[:, 1]
        G[:, 1, 0] = x[:, 1]
        G[:, 1, 1] = x[:, 0]
        return G
    coef = interpolate_on_surface(u, d.V, d.theta)
    parts = error_parts(d, StokesParams(), coef, None, u, gu)
    assert math.sqrt(parts.u_l2) <= 1e-12
    assert parts.A <= 1e-10


@pytest.fixture(scope="module")
def killing_study():
    return study("killing", 2, (1, 2, 3), keep_solutions=True)


def test_solved_killing_rate(killing_study):
    rows, _ = killing_study
    assert rows[-1].eoc >= 2 - 0.2
    assert all(r.stats["residual"] <= 1e-10 for r in rows)
    assert [r.level for r in rows] == [1, 2, 3]
    assert all(a.h > b.h for a, b in zip(rows, rows[1:]))


def test_galerkin_not_below_best_approximation(killing_study):
    rows, sols = killing_study
    c = case("killing")
    for r in rows:
        d, s, _ = sols[r.level]
        ub = best_approximation(d, s, c.u, c.grad_u)
        best = error_parts(d, s.params, ub, None, c.u, c.grad_u).A
        assert r.err_A >= 0.9 * best
        assert best <= interpolation_errors(c, d, level=r.level).err_A


def test_geometry_report_affine():
    phi = Plane((0.2, 0.3, 0.9), 0.05)
    rep = geometry_report([discretize(phi, 2, n_per_axis=n) for n in (4, 8)])
    assert all(r["dist"] <= 1e-12 and r["normal"] <= 1e-12 for r in rep["rows"])
    with pytest.raises(ValueError):
        geometry_report([disc(2, 1)])


def test_geometry_report_sphere():
    rep2 = geometry_report([disc(2, lv) for lv in (1, 2, 3)])
    assert rep2["rows"][-1]["eoc_dist"] >= 2.7
    assert rep2["rows"][-1]["eoc_normal"] >= 1.7
    rep3 = geometry_report([disc(3, lv) for lv in (1, 2, 3)])
    assert rep3["rows"][-1]["eoc_dist"] >= 3.6


def test_korn_killing_vanishes():
    r = [korn_hodge_check(disc(2, lv), case("killing").u, system=system(2, lv, parts=("strain",))).ratio
         for lv in (1, 2, 3)]
    assert r[0] > r[1] > r[2] and r[2] < 1e-4


def test_korn_flat_shear():
    phi = Plane((0.0, 0.0, 1.0), 0.1)
    d = discretize(phi, 1, n_per_axis=4, box=(-1.0, 1.0))
    res = korn_hodge_check(d, lambda x: np.stack([x[:, 1], 0 * x[:, 0], 0 * x[:, 0]], 1))
    # |E|^2 = 1/2 and the patch is the square (-1, 1)^2: (1/2 * 4) / (4/3)
    assert res.ratio == pytest.approx(1.5, rel=1e-12)
    s = assemble(d, parts=("strain",))
    assert korn_hodge_check(d, lambda x: np.tile([1.0, 0, 0], (len(x), 1)), system=s).ratio < 1e-13
