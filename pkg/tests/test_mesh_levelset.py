import numpy as np
import pytest

from tracestokes.levelset import Plane, Sphere
from tracestokes.mesh import (MeshError, build_band_mesh, eval_phi_hat, interpolate_levelset,
                              level_n_per_axis, shape_ratio)

BOX = (-5.0 / 3.0, 5.0 / 3.0)


class Shifted(Plane):
    """A plane crossing the unit cube away from grid vertices."""

    def __init__(self):
        super().__init__((1.0, 0.0, 0.0), 0.4)


def test_single_cube_kuhn_split():
    mesh = build_band_mesh(Shifted(), 1, box=(0.0, 1.0), band_width=0)
    assert mesh.n_tets == 6
    assert mesh.n_vertices == 8
    assert np.all(mesh.volumes > 0)
    assert np.isclose(mesh.volumes.sum(), 1.0)
    assert np.isclose(mesh.h, np.sqrt(3.0))


def test_sphere_band_matches_brute_force_scan():
    n = 8
    mesh = build_band_mesh(Sphere(), n, box=BOX, band_width=1)
    dx = (BOX[1] - BOX[0]) / n
    g = BOX[0] + dx * np.arange(n + 1)
    seed = np.zeros((n, n, n), bool)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                c = [np.linalg.norm([g[i + a], g[j + b], g[k + e]]) - 1.0
                     for a in (0, 1) for b in (0, 1) for e in (0, 1)]
                seed[i, j, k] = min(c) <= 0 <= max(c)
    keep = np.zeros_like(seed)
    for i, j, k in zip(*np.nonzero(seed)):
        keep[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2, max(k - 1, 0):k + 2] = True
    assert mesh.n_tets == 6 * keep.sum()


def test_plane_band_without_dilation():
    mesh = build_band_mesh(Plane(), 2, box=(-1.0, 1.0), band_width=0)
    assert mesh.n_tets == 48
    cubes = np.unique(mesh.tet_cube[:, 0])
    assert len(cubes) == 8


def test_errors():
    with pytest.raises(MeshError):
        build_band_mesh(Sphere(center=(10.0, 0.0, 0.0)), 4, box=BOX)
    with pytest.raises(MeshError):
        build_band_mesh(Sphere(), 4, box=(1.0, 1.0))
    with pytest.raises(MeshError):
        build_band_mesh(Sphere(), 0, box=BOX)
    mesh = build_band_mesh(Sphere(), 4, box=BOX)
    with pytest.raises(ValueError):
        interpolate_levelset(mesh, Sphere(), 6)


def test_mesh_invariants():
    mesh = build_band_mesh(Sphere(), level_n_per_axis(1), box=BOX)
    assert np.all(mesh.volumes > 0)
    assert shape_ratio(mesh) <= 12.0
    # conformity: interior faces have exactly two tets listing the same vertices
    ft = mesh.face_tets
    inner = ft[ft[:, 1] >= 0]
    for a, b in inner[:50]:
        shared = set(mesh.tets[a]) & set(mesh.tets[b])
        assert len(shared) == 3
    assert np.isclose(mesh.h, np.sqrt(3.0) * (BOX[1] - BOX[0]) / 8)


def test_band_covers_sphere():
    mesh = build_band_mesh(Sphere(), level_n_per_axis(1), box=BOX)
    th, ph = np.meshgrid(np.linspace(0, np.pi, 64), np.linspace(0, 2 * np.pi, 64))
    x = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1).reshape(-1, 3)
    tet, _ = mesh.locate(x)
    assert np.all(tet >= 0)


def test_deterministic():
    a = interpolate_levelset(build_band_mesh(Sphere(), 8, box=BOX), Sphere(), 2)
    b = interpolate_levelset(build_band_mesh(Sphere(), 8, box=BOX), Sphere(), 2)
    assert np.array_equal(a.mesh.vertices, b.mesh.vertices)
    assert np.array_equal(a.mesh.tets, b.mesh.tets)
    assert np.array_equal(a.phi_k, b.phi_k)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_affine_reproduced(k):
    phi = Plane((0.3, -0.2, 0.9), 0.1)
    mesh = build_band_mesh(phi, 6, box=BOX)
    bundle = interpolate_levelset(mesh, phi, k)
    rng = np.random.default_rng(1)
    x = mesh.vertices[mesh.tets[rng.integers(0, mesh.n_tets, 200)]].mean(axis=1)
    x += 0.01 * rng.standard_normal(x.shape)
    tet, _ = mesh.locate(x)
    x = x[tet >= 0]
    assert np.max(np.abs(bundle.eval_phi_h(x) - phi.value(x))) < 1e-13
    assert np.allclose(bundle.phi_lin, phi.value(mesh.vertices), atol=1e-14)


def _band_samples(mesh, phi, n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    x *= 1.0 + 0.1 * rng.uniform(-1, 1, (n, 1))
    return x


def test_interpolation_order_and_degree():
    phi = Sphere()
    errs = []
    for n in (8, 16):
        mesh = build_band_mesh(phi, n, box=BOX)
        bundle = interpolate_levelset(mesh, phi, 2)
        x = _band_samples(mesh, phi)
        errs.append(np.max(np.abs(bundle.eval_phi_h(x) - phi.value(x))))
    assert np.log2(errs[0] / errs[1]) >= 2.7
    mesh = build_band_mesh(phi, 16, box=BOX)
    x = _band_samples(mesh, phi)
    e1 = np.max(np.abs(interpolate_levelset(mesh, phi, 1).eval_phi_h(x) - phi.value(x)))
    assert errs[1] < e1


def test_bundle_invariants():
    phi = Sphere()
    mesh = build_band_mesh(phi, 8, box=BOX)
    bundle = interpolate_levelset(mesh, phi, 3)
    assert np.allclose(bundle.phi_k, phi.value(bundle.dofmap.nodes), rtol=0, atol=0)
    assert np.allclose(bundle.phi_lin, phi.value(mesh.vertices), rtol=0, atol=1e-15)
    # vertex restriction of phi_k
    X = bundle.dofmap.nodes
    hit = {tuple(v): i for i, v in enumerate(np.round(X, 12))}
    idx = [hit[tuple(v)] for v in np.round(mesh.vertices, 12)]
    assert np.array_equal(bundle.phi_lin, bundle.phi_k[idx])
    assert bundle.c0 == pytest.approx(1.0)


def test_gradient_check_is_hard_error():
    class Flat(Sphere):
        def gradient(self, x):
            return 1e-12 * super().gradient(x)

    mesh = build_band_mesh(Sphere(), 8, box=BOX)
    with pytest.raises(MeshError):
        interpolate_levelset(mesh, Flat(), 1)
    # at level 0 the centre of the sphere is a vertex within the tube
    mesh = build_band_mesh(Sphere(), 4, box=BOX)
    with pytest.raises(MeshError), np.errstate(invalid="ignore"):
        interpolate_levelset(mesh, Sphere(), 1)


def test_eval_phi_hat_reference_tet():
    class Mesh:
        vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        tets = np.array([[0, 1, 2, 3]])
        jacobians = np.eye(3)[None]

    class Bundle:
        mesh = Mesh()
        phi_lin = np.array([0.0, 0.0, 0.0, 1.0])

    v, g = eval_phi_hat(Bundle(), 0, [0, 0, 0, 1])
    assert v == 1.0
    assert np.allclose(g, [0, 0, 1])


def test_eval_phi_hat_plane_and_sphere():
    phi = Plane()
    mesh = build_band_mesh(phi, 4, box=BOX)
    bundle = interpolate_levelset(mesh, phi, 1)
    for t in range(mesh.n_tets):
        assert np.allclose(eval_phi_hat(bundle, t, [0.25] * 4)[1], [0, 0, 1], atol=1e-14)
    phi = Sphere()
    mesh = build_band_mesh(phi, 8, box=BOX)
    bundle = interpolate_levelset(mesh, phi, 2)
    t = 17
    V = mesh.vertices[mesh.tets[t]]
    vals = phi.value(V)
    # hand-solved system: (v_i - v_0) . g = phi_i - phi_0
    g = np.linalg.solve(V[1:] - V[0], vals[1:] - vals[0])
    value, grad = eval_phi_hat(bundle, t, [0.1, 0.2, 0.3, 0.4])
    assert np.allclose(grad, g, rtol=1e-13)
    assert value == pytest.approx(np.dot([0.1, 0.2, 0.3, 0.4], vals))
