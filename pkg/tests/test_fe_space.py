import numpy as np
import pytest

from tracestokes.analysis import eoc
from tracestokes.discretization import discretize
from tracestokes.fe_space import build_dofmap, eval_basis, interpolate_on_surface, push_gradients
from tracestokes.lagrange import basis, n_local
from tracestokes.levelset import Plane

from conftest import disc


class _Mesh:
    def __init__(self, vertices, tets):
        self.vertices = np.asarray(vertices, float)
        self.tets = np.asarray(tets)


REF = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]


@pytest.mark.parametrize("k,n", [(1, 4), (3, 20)])
def test_single_tet_counts(k, n):
    dm = build_dofmap(_Mesh(REF, [[0, 1, 2, 3]]), [0], k)
    assert dm.ndofs == n == n_local(k)


def test_two_tets_share_face():
    m = _Mesh(REF + [[1, 1, 1]], [[0, 1, 2, 3], [1, 2, 3, 4]])
    dm = build_dofmap(m, [0, 1], 2)
    assert dm.ndofs == 14
    shared = set(dm.cell_dofs[0]) & set(dm.cell_dofs[1])
    assert len(shared) == 6


def test_bad_degree():
    with pytest.raises(ValueError):
        build_dofmap(_Mesh(REF, [[0, 1, 2, 3]]), [0], 6)


def test_p1_kronecker():
    N, _ = eval_basis(1, np.array(REF, float))
    nodes = basis(1).nodes
    delta = np.all(np.array(REF, float)[:, None, :] == nodes[None, :, :], axis=2)
    assert np.array_equal(N, delta.astype(float))


def test_chain_rule_halves_gradient():
    b = basis(2)
    coef = b.nodes[:, 0] ** 2
    x = np.array([[0.2, 0.3, 0.1]])
    g_ref = coef @ b.gradients(x)[0]
    assert np.allclose(g_ref, [0.4, 0, 0])
    g = coef @ push_gradients(b.gradients(x), 2 * np.eye(3))[0]
    assert np.allclose(g, g_ref / 2)


def test_push_gradients_singular():
    with pytest.raises(np.linalg.LinAlgError):
        push_gradients(np.ones((4, 3)), np.diag([1.0, 0.0, 1.0]))


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_polynomial_reproduction(k):
    rng = np.random.default_rng(k)
    b = basis(k)
    c = rng.standard_normal(len(b.exponents))
    poly = lambda x: np.prod(x[:, None, :] ** b.exponents[None], axis=2) @ c  # noqa: E731
    x = rng.dirichlet(np.ones(4), 20)[:, 1:]
    assert np.allclose(b.values(x) @ poly(b.nodes), poly(x), atol=1e-11)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_partition_of_unity_at_quadrature_points(k):
    g = disc(k, 1).geom
    N, dN = eval_basis(k, g.s_xref)
    assert np.max(np.abs(N.sum(axis=-1) - 1)) < 1e-12
    phys = push_gradients(dN, np.linalg.inv(g.s_DFinv))
    assert np.max(np.abs(phys.sum(axis=-2))) < 1e-12


def _surface_values(d, coef):
    g = d.geom
    N = basis(d.V.degree).values(g.s_xref)
    return np.einsum("tqi,ti->tq", N, coef[d.V.cell_dofs[g.tri_cell]])


def test_interpolate_constant_and_vector():
    d = disc(2, 1)
    c = interpolate_on_surface(lambda x: np.full(len(x), 3.5), d.V, d.theta)
    assert np.all(c == 3.5)
    v = interpolate_on_surface(lambda x: np.tile([1.0, 2.0, 3.0], (len(x), 1)), d.V, d.theta)
    assert v.shape == (3 * d.V.ndofs,)
    assert np.all(v.reshape(-1, 3) == [1, 2, 3])


def test_polynomial_exact_on_plane():
    phi = Plane((0.0, 0.0, 1.0), 0.1)
    d = discretize(phi, 2, n_per_axis=6)
    f = lambda x: x[:, 0] ** 2 - 2 * x[:, 1] * x[:, 2] + x[:, 2]  # noqa: E731
    c = interpolate_on_surface(f, d.V, d.theta)
    vals = _surface_values(d, c)
    assert np.max(np.abs(vals - f(d.geom.s_x.reshape(-1, 3)).reshape(vals.shape))) < 1e-13


def test_interpolation_rate_on_sphere():
    f = lambda x: np.sin(x[:, 0]) * np.cos(x[:, 1])  # noqa: E731
    errs = []
    for lv in (1, 2, 3):
        d = disc(2, lv)
        vals = _surface_values(d, interpolate_on_surface(f, d.V, d.theta))
        e = vals - f(d.geom.s_x.reshape(-1, 3)).reshape(vals.shape)
        errs.append(np.sqrt(np.sum(d.geom.s_w * e**2)))
    assert eoc(errs)[-1] >= 2.7


def test_continuity_across_faces():
    d = disc(2, 1)
    mesh, act = d.mesh, d.cut.active_tets
    pos = {t: i for i, t in enumerate(act)}
    rng = np.random.default_rng(3)
    coef = rng.standard_normal(d.V.ndofs)
    b = basis(2)
    ft = mesh.face_tets
    both = ft[(ft[:, 1] >= 0) & np.isin(ft[:, 0], act) & np.isin(ft[:, 1], act)][:40]
    for a, c in both:
        shared = sorted(set(mesh.tets[a]) & set(mesh.tets[c]))
        X = rng.dirichlet(np.ones(3), 4) @ mesh.vertices[shared]
        vals = []
        for t in (a, c):
            V = mesh.vertices[mesh.tets[t]]
            ref = np.linalg.solve((V[1:] - V[0]).T, (X - V[0]).T).T
            vals.append(b.values(ref) @ coef[d.V.cell_dofs[pos[t]]])
        assert np.max(np.abs(vals[0] - vals[1])) <= 1e-12
