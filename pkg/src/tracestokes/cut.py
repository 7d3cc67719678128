"""Cut elements and the piecewise planar surface ``Gamma_lin``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import LevelSetBundle, TetMesh

LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


class CutError(RuntimeError):
    pass


@dataclass(frozen=True)
class CutTopology:
    """Active tets and the triangles of ``Gamma_lin``.

    Triangles are stored by parent tet (mesh index) and the barycentric
    coordinates of their corners in that tet. ``point_keys`` identifies each
    corner by the mesh edge it lies on (``a * n_vertices + b`` with a < b).
    """

    active_tets: np.ndarray
    n_polygon_points: np.ndarray   # 3 or 4 per active tet
    tri_tet: np.ndarray            # (ntri,) mesh tet index
    tri_cell: np.ndarray           # (ntri,) position of the parent in active_tets
    tri_bary: np.ndarray           # (ntri, 3, 4)
    tri_points: np.ndarray         # (ntri, 3, 3) physical corners on Gamma_lin
    point_keys: np.ndarray         # (ntri, 3)
    edge_table: np.ndarray         # (nedges, 2) unique triangle edges (point keys)
    edge_count: np.ndarray         # (nedges,) number of triangles per edge
    vertex_values: np.ndarray      # phi_lin after the epsilon rule

    @property
    def n_triangles(self) -> int:
        return len(self.tri_tet)

    def area(self) -> float:
        P = self.tri_points
        return float(0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1).sum())


def signed_vertex_values(bundle: LevelSetBundle) -> np.ndarray:
    eps = 1e-12 * bundle.mesh.h
    v = bundle.phi_lin.copy()
    v[v == 0.0] = eps
    return v


def classify_and_cut(mesh: TetMesh, bundle: LevelSetBundle) -> CutTopology:
    vals = signed_vertex_values(bundle)
    tv = vals[mesh.tets]
    neg = tv < 0
    nneg = neg.sum(axis=1)
    active = np.flatnonzero((nneg > 0) & (nneg < 4))
    if len(active) == 0:
        raise CutError("no cut elements")

    T = mesh.tets[active]
    V = tv[active]
    X = mesh.vertices[T]
    # parameter on every local edge, measured from the lower global vertex
    la, lb = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    swap = T[:, la] > T[:, lb]
    lo_loc = np.where(swap, lb, la)
    hi_loc = np.where(swap, la, lb)
    phi_lo = np.take_along_axis(V, lo_loc, axis=1)
    phi_hi = np.take_along_axis(V, hi_loc, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = phi_lo / (phi_lo - phi_hi)
    # snap intersections within 1e-12 h of a vertex (edge lengths are ~h)
    t = np.where(t < 1e-12, 0.0, t)
    t = np.where(1 - t < 1e-12, 1.0, t)
    rows = np.arange(len(active))[:, None]
    edge_bary = np.zeros((len(active), 6, 4))
    edge_bary[rows, np.arange(6)[None, :], lo_loc] = 1.0 - t
    edge_bary[rows, np.arange(6)[None, :], hi_loc] += t
    edge_key = np.take_along_axis(T, lo_loc, axis=1) * mesh.n_vertices + \
        np.take_along_axis(T, hi_loc, axis=1)
    edge_index = -np.ones((4, 4), dtype=np.int64)
    for e, (a, b) in enumerate(LOCAL_EDGES):
        edge_index[a, b] = edge_index[b, a] = e

    tris_cell, tris_edges = [], []
    npts = np.where((nneg == 2)[active], 4, 3)

    # one vertex separated from the other three
    single = np.flatnonzero(nneg[active] != 2)
    if len(single):
        Vs = neg[active[single]]
        lone_is_neg = Vs.sum(axis=1) == 1
        lone = np.where(lone_is_neg, np.argmax(Vs, axis=1), np.argmin(Vs, axis=1))
        others = np.array([[j for j in range(4) if j != i] for i in range(4)])[lone]
        e = edge_index[lone[:, None], others]
        tris_cell.append(single)
        tris_edges.append(e)

    quad = np.flatnonzero(nneg[active] == 2)
    if len(quad):
        Vq = neg[active[quad]]
        order = np.argsort(~Vq, axis=1, kind="stable")  # negatives first
        a, b, c, d = order.T
        e_ac, e_ad = edge_index[a, c], edge_index[a, d]
        e_bd, e_bc = edge_index[b, d], edge_index[b, c]
        P = np.einsum("qej,qjd->qed", edge_bary[quad], X[quad])
        r = np.arange(len(quad))
        d1 = np.linalg.norm(P[r, e_ac] - P[r, e_bd], axis=1)
        d2 = np.linalg.norm(P[r, e_ad] - P[r, e_bc], axis=1)
        ek = edge_key[quad]
        tie = np.abs(d1 - d2) <= 1e-12 * mesh.h
        low1 = np.minimum(ek[r, e_ac], ek[r, e_bd])
        low2 = np.minimum(ek[r, e_ad], ek[r, e_bc])
        use1 = np.where(tie, low1 < low2, d1 < d2)
        t1 = np.where(use1[:, None], np.stack([e_ac, e_ad, e_bd], 1), np.stack([e_ac, e_ad, e_bc], 1))
        t2 = np.where(use1[:, None], np.stack([e_ac, e_bd, e_bc], 1), np.stack([e_ad, e_bd, e_bc], 1))
        tris_cell += [quad, quad]
        tris_edges += [t1, t2]

    cell = np.concatenate(tris_cell)
    edges = np.concatenate(tris_edges)
    order = np.lexsort((np.arange(len(cell)), cell))
    cell, edges = cell[order], edges[order]

    bary = edge_bary[cell[:, None], edges]               # (ntri, 3, 4)
    pts = np.einsum("tpj,tjd->tpd", bary, X[cell])
    keys = edge_key[cell[:, None], edges]

    # orient towards phi > 0
    A = mesh.jacobians[active[cell]]
    grad = np.linalg.solve(np.transpose(A, (0, 2, 1)), (V[cell, 1:] - V[cell, :1])[:, :, None])[:, :, 0]
    nrm = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    flip = np.einsum("td,td->t", nrm, grad) < 0
    bary[flip] = bary[flip][:, [0, 2, 1]]
    pts[flip] = pts[flip][:, [0, 2, 1]]
    keys[flip] = keys[flip][:, [0, 2, 1]]

    tri_e = np.sort(np.stack([keys[:, [0, 1]], keys[:, [1, 2]], keys[:, [2, 0]]], axis=1), axis=2)
    uniq, counts = np.unique(tri_e.reshape(-1, 2), axis=0, return_counts=True)
    if bundle.phi.closed and np.any(counts != 2):
        raise CutError("Gamma_lin is not closed; the band mesh is too narrow")

    return CutTopology(active, npts, active[cell], cell, bary, pts, keys, uniq, counts, vals)


def regular_fraction(cut: CutTopology, mesh: TetMesh, c_hat: float = 1e-2) -> float:
    """Fraction of active tets whose surface patch has area >= c_hat * h_T^2."""
    if c_hat <= 0:
        raise ValueError("c_hat must be positive")
    P = cut.tri_points
    a = 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
    per_tet = np.bincount(cut.tri_cell, weights=a, minlength=len(cut.active_tets))
    return float(np.mean(per_tet >= c_hat * mesh.h**2))
