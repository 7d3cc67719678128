import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from tracestokes.analysis import eoc
from tracestokes.assembly import StokesParams, assemble, assemble_convection, assemble_rhs
from tracestokes.fe_space import interpolate_on_surface
from tracestokes.levelset import Sphere
from tracestokes.manufactured import killing_closed_form, make_manufactured
from tracestokes.solvers import SPDFactor

from conftest import case, disc, system


def sphere_points(n=10_000, seed=0):
    x = np.random.default_rng(seed).standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sphere_quadrature(n=24):
    """Gauss-Legendre in cos(theta) times uniform in the azimuth."""
    z, wz = np.polynomial.legendre.leggauss(n)
    ph = 2 * np.pi * np.arange(2 * n) / (2 * n)
    Z, PH = np.meshgrid(z, ph, indexing="ij")
    r = np.sqrt(1 - Z**2)
    x = np.stack([r * np.cos(PH), r * np.sin(PH), Z], -1).reshape(-1, 3)
    w = (wz[:, None] * np.full(2 * n, 2 * np.pi / (2 * n))).ravel()
    return x, w


def asym(M):
    return abs(M - M.T).max() / abs(M).max()


def test_symmetry_and_kernels():
    s = system(2, 1)
    for M in (s.A, s.C, s.Mp, s.Mu, s.G):
        assert asym(M) <= 1e-12
    one = np.ones(s.n_p)
    assert np.max(np.abs(s.C @ one)) <= 1e-12 * abs(s.C).max()
    assert np.max(np.abs(s.B.T @ one)) <= 1e-12 * abs(s.B).max()
    assert np.allclose(s.Mp @ one, s.m, rtol=0, atol=1e-14)
    assert s.m.sum() == pytest.approx(disc(2, 1).geom.area, rel=1e-12)


def test_definiteness():
    s = system(2, 1)
    SPDFactor(s.A)                                   # Cholesky succeeds only for SPD
    SPDFactor(s.Mp)
    small = system(1, 1)
    assert np.linalg.eigvalsh(small.A.toarray()).min() > 0
    rng = np.random.default_rng(0)
    for M in (s.C, s.G):
        X = rng.standard_normal((M.shape[0], 5))
        assert np.all(np.einsum("ij,ij->j", X, M @ X) >= -1e-12)


def test_assembly_is_deterministic():
    a = assemble(disc(2, 1), StokesParams())
    b = system(2, 1)
    for name in ("A", "B", "C", "Mp", "Mu", "G"):
        x, y = getattr(a, name), getattr(b, name)
        assert np.array_equal(x.indptr, y.indptr) and np.array_equal(x.data, y.data)


def test_invalid_parameters():
    d = disc(2, 1)
    with pytest.raises(ValueError):
        assemble(d, StokesParams(rho_u=0.0))
    with pytest.raises(ValueError):
        assemble(d, StokesParams(eta=-1.0))
    with pytest.raises(ValueError):
        assemble(d, StokesParams(gamma=-1.0))
    with pytest.raises(ValueError):
        assemble(d, parts=("nonsense",))


def test_default_parameters_follow_h():
    h = disc(2, 1).h
    p = system(2, 1).params
    assert (p.rho_u, p.rho_p, p.eta, p.gamma) == (1 / h, h, h**-2, 0.0)


def killing(x):
    return np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)


def test_killing_strain_and_mass():
    strain, mass = [], []
    for lv in (1, 2, 3):
        d = disc(2, lv)
        s = system(2, lv, parts=("strain",))
        u = interpolate_on_surface(killing, d.V, d.theta)
        strain.append(u @ (s.parts["strain"] @ u))
        mass.append(u @ (s.Mu @ u))
    assert eoc(np.sqrt(strain))[-1] >= 2 - 0.5
    assert mass[-1] == pytest.approx(8 * np.pi / 3, rel=1e-3)


def test_penalty_of_tangential_field():
    vals = []
    for lv in (1, 2, 3):
        d = disc(2, lv)
        s = system(2, lv, parts=("penalty",))
        u = interpolate_on_surface(case("generic").u, d.V, d.theta)
        vals.append(u @ (s.parts["penalty"] @ u))
    assert eoc(vals)[-1] >= 2 * 2 - 1


def test_matrix_export(tmp_path):
    s = system(1, 1)
    paths = s.export(tmp_path)
    A = scipy.io.mmread(str(tmp_path / "A.mtx"))
    assert len(paths) == 6
    assert abs(sp.csr_matrix(A) - s.A).max() == 0.0


# ---------------------------------------------------------------- manufactured


@pytest.mark.parametrize("name", ["killing", "harmonic2", "generic"])
def test_case_invariants(name):
    c = case(name)
    x = sphere_points()
    assert np.max(np.abs(np.einsum("ni,ni->n", c.u(x), x))) <= 1e-12
    xq, w = sphere_quadrature()
    assert abs(np.sum(w * c.p(xq))) <= 1e-12
    assert abs(np.sum(w * c.g(xq))) <= 1e-8
    assert np.max(np.abs(np.einsum("ni,ni->n", c.f(x[:500]), x[:500]))) <= 1e-8


def test_killing_oracle_matches_closed_form():
    x = sphere_points(500, 1) * np.random.default_rng(2).uniform(0.9, 1.1, (500, 1))
    f, g = killing_closed_form(x)
    c = case("killing")
    assert np.max(np.abs(c.f(x) - f)) <= 1e-8
    assert np.max(np.abs(c.g(x) - g)) <= 1e-8
    assert np.max(np.abs(c.strain(x[:50]))) <= 1e-8


def test_harmonic2_divergence_free():
    x = sphere_points(500, 3)
    assert np.max(np.abs(case("harmonic2").g(x))) <= 1e-8


def test_unknown_case():
    with pytest.raises(ValueError):
        make_manufactured(Sphere(), "poiseuille")


class _Zero:
    def f(self, x):
        return np.zeros((len(x), 3))

    def g(self, x):
        return np.zeros(len(x))


class _ConstG(_Zero):
    def g(self, x):
        return np.ones(len(x))


def test_rhs_trivial():
    d = disc(2, 1)
    F, Gv = assemble_rhs(_Zero(), d)
    assert not F.any() and not Gv.any()
    # a constant g is removed by the mean subtraction
    _, Gv = assemble_rhs(_ConstG(), d)
    assert abs(Gv @ np.ones(d.Q.ndofs)) <= 1e-12
    F, Gv = assemble_rhs(case("generic"), d)
    assert abs(Gv.sum()) <= 1e-12


# ---------------------------------------------------------------- convection


def test_convection_trivial():
    d = disc(2, 1)
    n = 3 * d.V.ndofs
    assert not assemble_convection(d, np.zeros(n)).data.any()
    w = interpolate_on_surface(case("harmonic2").u, d.V, d.theta)
    const = np.tile([0.3, -1.0, 2.0], d.V.ndofs)
    assert np.max(np.abs(assemble_convection(d, w) @ const)) < 1e-13
    with pytest.raises(ValueError):
        assemble_convection(d, np.zeros(5))


def test_convection_skew_symmetry_rate():
    ratios = []
    for lv in (1, 2, 3):
        d = disc(2, lv)
        w = interpolate_on_surface(case("harmonic2").u, d.V, d.theta)
        v = interpolate_on_surface(case("generic").u, d.V, d.theta)
        N = assemble_convection(d, w)
        ratios.append(abs(v @ ((N + N.T) @ v)) / (v @ (system(2, lv).Mu @ v)))
    assert eoc(ratios)[-1] >= 1.0
