"""Continuous Lagrange spaces on a subset of tetrahedra.

Global nodes are identified by their barycentric signature: the sorted list
of ``(vertex, multiplicity)`` pairs of the smallest mesh entity containing
them. Two tets sharing an entity therefore produce the same key for the
shared nodes, which gives continuity without any entity bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lagrange import basis, multi_indices


@dataclass(frozen=True)
class DofMap:
    degree: int
    tets: np.ndarray        # mesh tet indices covered by the space
    cell_dofs: np.ndarray   # (n_cells, nloc) global scalar dof indices
    nodes: np.ndarray       # (ndofs, 3) node coordinates
    keys: np.ndarray        # (ndofs, 4) encoded barycentric signature

    @property
    def ndofs(self) -> int:
        return len(self.nodes)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    def vector_dofs(self) -> np.ndarray:
        """Interleaved (xyz per node) dofs of the vector space, (n_cells, 3*nloc)."""
        d = self.cell_dofs
        out = np.empty((d.shape[0], 3 * d.shape[1]), dtype=d.dtype)
        for c in range(3):
            out[:, c::3] = 3 * d + c
        return out

    def linear_node_values(self, vertex_values: np.ndarray) -> np.ndarray:
        """Evaluate the P1 interpolant of ``vertex_values`` at every node."""
        v = self.keys >> 3
        m = np.where(v >= 0, self.keys & 7, 0)
        vals = np.where(v >= 0, vertex_values[np.maximum(v, 0)], 0.0)
        return np.sum(vals * m, axis=1) / self.degree


def build_dofmap(mesh, tets, k: int) -> DofMap:
    """Number the degree-``k`` Lagrange nodes of ``mesh.tets[tets]``.

    ``tets`` may also be a ``CutTopology``, in which case its active tets are
    used. Numbering is lexicographic in the node signature, hence
    deterministic.
    """
    if hasattr(tets, "active_tets"):
        tets = tets.active_tets
    tets = np.asarray(tets, dtype=np.int64)
    if not 1 <= k <= 5:
        raise ValueError(f"degree must be in 1..5, got {k}")
    mi = multi_indices(k)
    V = mesh.tets[tets]
    nt, nloc = len(tets), len(mi)
    verts = np.broadcast_to(V[:, None, :], (nt, nloc, 4))
    mult = np.broadcast_to(mi[None, :, :], (nt, nloc, 4))
    code = np.where(mult > 0, verts * 8 + mult, -1)
    code = np.sort(code, axis=2).reshape(-1, 4)
    keys, inverse = np.unique(code, axis=0, return_inverse=True)
    cell_dofs = inverse.reshape(nt, nloc)
    v = keys >> 3
    m = np.where(v >= 0, keys & 7, 0)
    X = np.where((v >= 0)[:, :, None], mesh.vertices[np.maximum(v, 0)], 0.0)
    nodes = np.einsum("nj,njd->nd", m.astype(float), X) / k
    return DofMap(k, tets, cell_dofs, nodes, keys)


def eval_basis(k: int, points: np.ndarray):
    """Reference values ``(..., nloc)`` and gradients ``(..., nloc, 3)``."""
    b = basis(k)
    return b.values(points), b.gradients(points)


def push_gradients(ref_grads: np.ndarray, DF: np.ndarray) -> np.ndarray:
    """Physical gradients ``DF^{-T} grad_ref`` for Jacobians ``DF (..., 3, 3)``.

    ``ref_grads`` has shape ``(..., nloc, 3)``.
    """
    det = np.linalg.det(DF)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise np.linalg.LinAlgError("singular or inverted element map")
    DFinv = np.linalg.inv(DF)
    # grad = DF^{-T} g  <=>  grad_j = sum_i DFinv[i, j] g_i
    return np.einsum("...ni,...ij->...nj", ref_grads, DFinv)


def interpolate_on_surface(field, dofmap: DofMap, theta=None) -> np.ndarray:
    """Nodal interpolant of ``field`` at the mapped nodes ``Theta_h(x_i)``.

    ``field`` maps ``(N, 3)`` points to ``(N,)`` or ``(N, 3)`` values; vector
    results are returned interleaved.
    """
    pts = dofmap.nodes if theta is None else theta.mapped_nodes(dofmap)
    vals = np.asarray(field(pts), dtype=float)
    return vals.reshape(-1).copy()
