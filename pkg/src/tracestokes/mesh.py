"""Narrow-band Kuhn tetrahedral meshes and level set interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations

import numpy as np
from scipy import ndimage

from .fe_space import DofMap, build_dofmap
from .lagrange import basis
from .levelset import LevelSet

DEFAULT_BOX = (-5.0 / 3.0, 5.0 / 3.0)

# Kuhn subdivision of the unit cube: one tet per axis permutation, each
# following the monotone path from corner (0,0,0) to corner (1,1,1).
KUHN_PERMS = list(permutations(range(3)))


def _kuhn_templates() -> np.ndarray:
    tets = []
    for perm in KUHN_PERMS:
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for ax in perm:
            corner[ax] = 1
            path.append(corner.copy())
        ids = [c[0] + 2 * c[1] + 4 * c[2] for c in path]
        pts = np.array(path, dtype=float)
        if np.linalg.det((pts[1:] - pts[0]).T) < 0:
            ids[2], ids[3] = ids[3], ids[2]
        tets.append(ids)
    return np.array(tets, dtype=np.int64)


KUHN = _kuhn_templates()
CUBE_CORNERS = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=np.int64)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TetMesh:
    """Tetrahedral mesh carved from a uniform Kuhn grid on a cube ``box^3``.

    ``grid_index`` holds integer lattice coordinates of the vertices and
    ``tet_cube`` the grid cube / Kuhn permutation of each tet; both are used
    for O(1) point location.
    """

    vertices: np.ndarray
    tets: np.ndarray
    lo: float
    dx: float
    n: int
    grid_index: np.ndarray
    tet_cube: np.ndarray   # (ntets, 2): linear cube index, permutation index
    h: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", float(np.sqrt(3.0) * self.dx))

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine maps ``A`` with columns ``v1-v0, v2-v0, v3-v0``."""
        X = self.vertices[self.tets]
        return np.transpose(X[:, 1:] - X[:, :1], (0, 2, 1))

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.linalg.det(self.jacobians) / 6.0

    @cached_property
    def edges(self) -> np.ndarray:
        pairs = self.tets[:, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]].reshape(-1, 2)
        return np.unique(np.sort(pairs, axis=1), axis=0)

    @cached_property
    def faces(self) -> np.ndarray:
        tri = self.tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3)
        return np.unique(np.sort(tri, axis=1), axis=0)

    @cached_property
    def face_tets(self) -> np.ndarray:
        """For every face, the (one or two) adjacent tets; -1 marks the boundary."""
        tri = np.sort(self.tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]], axis=2).reshape(-1, 3)
        _, inv = np.unique(tri, axis=0, return_inverse=True)
        owner = np.repeat(np.arange(self.n_tets), 4)
        order = np.argsort(inv, kind="stable")
        out = -np.ones((inv.max() + 1, 2), dtype=np.int64)
        inv_s, own_s = inv[order], owner[order]
        first = np.r_[True, inv_s[1:] != inv_s[:-1]]
        out[inv_s[first], 0] = own_s[first]
        out[inv_s[~first], 1] = own_s[~first]
        return out

    @cached_property
    def _cube_keys(self):
        key = self.tet_cube[:, 0] * 6 + self.tet_cube[:, 1]
        order = np.argsort(key)
        return key[order], order

    def locate(self, x: np.ndarray):
        """Tet index and barycentric coordinates of points ``x``.

        Points outside the mesh get tet index -1.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        f = (x - self.lo) / self.dx
        c = np.clip(np.floor(f).astype(np.int64), 0, self.n - 1)
        frac = f - c
        order = np.argsort(-frac, axis=1, kind="stable")
        perm_id = _perm_lookup(order)
        lin = c[:, 0] + self.n * (c[:, 1] + self.n * c[:, 2])
        key = lin * 6 + perm_id
        keys, order_t = self._cube_keys
        pos = np.searchsorted(keys, key)
        pos = np.minimum(pos, len(keys) - 1)
        found = keys[pos] == key
        tet = np.where(found, order_t[pos], -1)
        bary = np.zeros((len(x), 4))
        if found.any():
            t = tet[found]
            X0 = self.vertices[self.tets[t, 0]]
            lam = np.linalg.solve(self.jacobians[t], (x[found] - X0)[:, :, None])[:, :, 0]
            bary[found, 1:] = lam
            bary[found, 0] = 1.0 - lam.sum(axis=1)
        inside = np.all((f >= -1e-12) & (f <= self.n + 1e-12), axis=1)
        tet = np.where(inside, tet, -1)
        return tet, bary


_PERM_TABLE = {p: i for i, p in enumerate(KUHN_PERMS)}


def _perm_lookup(order: np.ndarray) -> np.ndarray:
    code = order[:, 0] * 9 + order[:, 1] * 3 + order[:, 2]
    table = np.full(27, -1, dtype=np.int64)
    for p, i in _PERM_TABLE.items():
        table[p[0] * 9 + p[1] * 3 + p[2]] = i
    return table[code]


def build_band_mesh(phi: LevelSet, n_per_axis: int, box=DEFAULT_BOX,
                    band_width: int = 1) -> TetMesh:
    """Kuhn mesh of the grid cubes within ``band_width`` cells of ``{phi = 0}``.

    A cube is a seed if its corner values are not all of one strict sign
    (a zero value counts as touching the surface); seeds are dilated by
    ``band_width`` cells in the 26-neighbourhood sense.
    """
    lo, hi = float(box[0]), float(box[1])
    if not hi > lo:
        raise MeshError(f"degenerate box ({lo}, {hi})")
    if n_per_axis < 1:
        raise MeshError("n_per_axis must be >= 1")
    n = int(n_per_axis)
    dx = (hi - lo) / n
    g = lo + dx * np.arange(n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vals = phi.value(np.stack([X, Y, Z], axis=-1).reshape(-1, 3)).reshape(n + 1, n + 1, n + 1)
    corners = np.stack([vals[i:i + n, j:j + n, k:k + n]
                        for i, j, k in CUBE_CORNERS], axis=-1)
    seed = (corners.min(axis=-1) <= 0) & (corners.max(axis=-1) >= 0)
    if not seed.any():
        raise MeshError("surface does not intersect the box")
    keep = seed
    if band_width > 0:
        keep = ndimage.binary_dilation(seed, structure=np.ones((3, 3, 3), bool),
                                       iterations=int(band_width))
    # cube ordering: linear index i + n*(j + n*k)
    cubes = np.stack(np.nonzero(keep), axis=1)
    lin = cubes[:, 0] + n * (cubes[:, 1] + n * cubes[:, 2])
    order = np.argsort(lin)
    cubes, lin = cubes[order], lin[order]

    corner_ijk = cubes[:, None, :] + CUBE_CORNERS[None, :, :]          # (nc, 8, 3)
    tet_ijk = corner_ijk[:, KUHN, :]                                     # (nc, 6, 4, 3)
    m = n + 1
    vid = tet_ijk[..., 0] + m * (tet_ijk[..., 1] + m * tet_ijk[..., 2])  # (nc, 6, 4)
    used, tets = np.unique(vid.reshape(-1, 4), return_inverse=True)
    tets = tets.reshape(-1, 4).astype(np.int64)
    grid_index = np.stack([used % m, (used // m) % m, used // (m * m)], axis=1)
    vertices = lo + dx * grid_index.astype(float)
    tet_cube = np.stack([np.repeat(lin, 6), np.tile(np.arange(6), len(lin))], axis=1)
    return TetMesh(vertices, tets, lo, dx, n, grid_index, tet_cube)


def level_n_per_axis(level: int) -> int:
    """Grid resolution of refinement level ``level`` on the default box."""
    return 4 * 2 ** int(level)


def shape_ratio(mesh: TetMesh) -> float:
    """Max over tets of diameter / inradius."""
    X = mesh.vertices[mesh.tets]
    diam = np.max([np.linalg.norm(X[:, a] - X[:, b], axis=1)
                   for a in range(4) for b in range(a + 1, 4)], axis=0)
    area = 0.0
    for f in ([1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]):
        P = X[:, f]
        area = area + 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
    r = 3.0 * np.abs(mesh.volumes) / area
    return float(np.max(diam / r))


@dataclass(frozen=True)
class LevelSetBundle:
    """Analytic ``phi`` with its degree-k interpolant and the P1 interpolant
    of that (``phi_lin``, vertex values)."""

    phi: LevelSet
    degree: int
    dofmap: DofMap
    phi_k: np.ndarray
    phi_lin: np.ndarray
    c0: float
    mesh: TetMesh

    def eval_phi_h(self, x: np.ndarray, derivatives: int = 0):
        """Evaluate the degree-k interpolant ``phi_h`` at physical points.

        Returns values, and gradients / Hessians when ``derivatives`` >= 1 / 2.
        Points outside the band mesh raise ``MeshError``.
        """
        tet, bary = self.mesh.locate(x)
        if np.any(tet < 0):
            raise MeshError("point outside the band mesh")
        cells = np.searchsorted(self.dofmap.tets, tet)
        coef = self.phi_k[self.dofmap.cell_dofs[cells]]
        b = basis(self.degree)
        xr = bary[:, 1:]
        out = [np.einsum("ni,ni->n", b.values(xr), coef)]
        if derivatives >= 1:
            Ainv = np.linalg.inv(self.mesh.jacobians[tet])
            g_ref = np.einsum("ni,nid->nd", coef, b.gradients(xr))
            out.append(np.einsum("nd,nde->ne", g_ref, Ainv))
            if derivatives >= 2:
                H_ref = np.einsum("ni,nide->nde", coef, b.hessians(xr))
                out.append(np.einsum("nad,nab,nbe->nde", Ainv, H_ref, Ainv))
        return out[0] if derivatives == 0 else tuple(out)


def interpolate_levelset(mesh: TetMesh, phi: LevelSet, k: int,
                         c0_min: float = 1e-8) -> LevelSetBundle:
    if not 1 <= k <= 5:
        raise ValueError(f"level set degree must be in 1..5, got {k}")
    # the lift only acts on cut tets; check the tube |phi| <= h around the surface
    near = np.abs(phi.value(mesh.vertices)) <= mesh.h
    gn = np.linalg.norm(phi.gradient(mesh.vertices[near]), axis=1)
    c0 = float(gn.min()) if gn.size else np.inf
    if not c0 >= c0_min:  # also catches an undefined (nan) gradient
        raise MeshError(f"|grad phi| = {c0:.3e} below c0 = {c0_min:.1e} at a band vertex")
    dm = build_dofmap(mesh, np.arange(mesh.n_tets), k)
    phi_k = phi.value(dm.nodes)
    # vertex nodes carry the signature (v, k) in the last key slot
    vert_nodes = np.flatnonzero((dm.keys[:, 2] < 0) & (dm.keys[:, 3] >= 0))
    phi_lin = np.empty(mesh.n_vertices)
    phi_lin[dm.keys[vert_nodes, 3] >> 3] = phi_k[vert_nodes]
    return LevelSetBundle(phi, k, dm, phi_k, phi_lin, c0, mesh)


def eval_phi_hat(bundle: LevelSetBundle, tet: int, bary) -> tuple[float, np.ndarray]:
    """Value and (constant) gradient of the P1 interpolant on one tet."""
    mesh = bundle.mesh
    vals = bundle.phi_lin[mesh.tets[tet]]
    value = float(np.dot(np.asarray(bary, dtype=float), vals))
    A = mesh.jacobians[tet]
    grad = np.linalg.solve(A.T, vals[1:] - vals[0])
    return value, grad
