"""Parametric mesh deformation ``Theta_h`` and geometry at quadrature points.

``Theta_h`` is a continuous degree-k vector field on the active tets. Each
Lagrange node ``x`` is moved along ``G(x) = grad phi / |grad phi|`` to the
point where ``phi`` takes the value of the piecewise linear ``phi_hat(x)``,
so that ``Gamma_lin`` is carried onto a degree-k approximation ``Gamma_h``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cut import CutTopology
from .fe_space import DofMap, build_dofmap
from .lagrange import basis
from .levelset import LevelSet
from .mesh import LevelSetBundle, TetMesh
from .quadrature import QuadRule, tet_rule, triangle_rule


class LiftMode(str, Enum):
    EXACT = "exact"
    DISCRETE = "discrete"


class LiftError(RuntimeError):
    pass


def lift_points(f, df, x, G, target, h, tol=None, maxiter=25):
    """Solve ``f(x + s G) = target`` for ``s`` in ``[-2h, 2h]``.

    Newton's method safeguarded by bisection on the bracket. ``f`` and ``df``
    take points ``(N, 3)``; ``df`` returns gradients.
    """
    tol = 1e-13 * h if tol is None else tol
    n = len(x)
    lo = np.full(n, -2.0 * h)
    hi = np.full(n, 2.0 * h)
    s = np.zeros(n)
    r = f(x) - target
    done = np.abs(r) == 0.0
    for _ in range(maxiter):
        act = ~done
        if not act.any():
            return s
        xa, Ga, sa = x[act], G[act], s[act]
        ra = r[act]
        # bracket update (phi increases along G)
        lo[act] = np.where(ra < 0, np.maximum(lo[act], sa), lo[act])
        hi[act] = np.where(ra > 0, np.minimum(hi[act], sa), hi[act])
        slope = np.einsum("nd,nd->n", df(xa + sa[:, None] * Ga), Ga)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = -ra / slope
        snew = sa + step
        outside = ~np.isfinite(snew) | (snew <= lo[act]) | (snew >= hi[act])
        snew = np.where(outside, 0.5 * (lo[act] + hi[act]), snew)
        ds = np.abs(snew - sa)
        s[act] = snew
        r[act] = f(xa + snew[:, None] * Ga) - target[act]
        done[act] = (ds < tol) | (r[act] == 0.0)
    if not done.all():
        raise LiftError("node lift did not converge in %d iterations" % maxiter)
    return s


@dataclass(frozen=True)
class ParametricMap:
    mesh: TetMesh
    dofmap: DofMap          # degree-k nodes of the active tets
    displacement: np.ndarray  # (ndofs, 3)
    mode: LiftMode
    disp_constant: float    # max |displacement| / h^2

    @property
    def degree(self) -> int:
        return self.dofmap.degree

    @property
    def mapped(self) -> np.ndarray:
        return self.dofmap.nodes + self.displacement

    def evaluate(self, cells: np.ndarray, xref: np.ndarray):
        """Physical points and Jacobians ``DF`` of ``Theta_h o F_T``.

        ``cells`` indexes the active tets, ``xref`` has shape
        ``(len(cells), nq, 3)`` or ``(nq, 3)``.
        """
        b = basis(self.degree)
        Y = self.mapped[self.dofmap.cell_dofs[cells]]        # (nc, nloc, 3)
        if xref.ndim == 2:
            N, dN = b.values(xref), b.gradients(xref)
            x = np.einsum("qi,cid->cqd", N, Y)
            DF = np.einsum("cid,qie->cqde", Y, dN)
        else:
            N, dN = b.values(xref), b.gradients(xref)
            x = np.einsum("cqi,cid->cqd", N, Y)
            DF = np.einsum("cid,cqie->cqde", Y, dN)
        return x, DF

    def mapped_nodes(self, dofmap: DofMap) -> np.ndarray:
        """``Theta_h`` evaluated at the nodes of another space on the same tets."""
        if dofmap.degree == self.degree:
            return self.mapped[_node_map(self.dofmap, dofmap)]
        loc = basis(dofmap.degree).nodes
        cell, lidx = _first_occurrence(dofmap)
        out = np.empty((dofmap.ndofs, 3))
        for l in range(len(loc)):
            sel = lidx == l
            if sel.any():
                x, _ = self.evaluate(cell[sel], loc[l][None, :])
                out[sel] = x[:, 0]
        return out


def _first_occurrence(dofmap: DofMap):
    flat = dofmap.cell_dofs.ravel()
    _, first = np.unique(flat, return_index=True)
    return first // dofmap.nloc, first % dofmap.nloc


def _node_map(a: DofMap, b: DofMap) -> np.ndarray:
    if a is b or (a.ndofs == b.ndofs and np.array_equal(a.keys, b.keys)):
        return np.arange(a.ndofs)
    idx = np.empty(b.ndofs, dtype=np.int64)
    idx[b.cell_dofs.ravel()] = a.cell_dofs.ravel()
    return idx


def build_theta(mesh: TetMesh, bundle: LevelSetBundle, cut: CutTopology, k: int,
                mode: LiftMode | str = LiftMode.EXACT) -> ParametricMap:
    mode = LiftMode(mode)
    if bundle.degree < k:
        raise ValueError("level set interpolant degree must be >= k")
    dm = build_dofmap(mesh, cut, k)
    X = dm.nodes
    target = dm.linear_node_values(bundle.phi_lin)
    phi = bundle.phi
    if mode is LiftMode.EXACT:
        f, df = phi.value, phi.gradient
    else:
        f = bundle.eval_phi_h
        df = lambda y: bundle.eval_phi_h(y, derivatives=1)[1]  # noqa: E731
    G = df(X)
    G = G / np.linalg.norm(G, axis=1, keepdims=True)
    s = lift_points(f, df, X, G, target, mesh.h)
    disp = s[:, None] * G
    C = float(np.max(np.abs(s)) / mesh.h**2)
    return ParametricMap(mesh, dm, disp, mode, C)


@dataclass(frozen=True)
class SurfaceGeometry:
    """Geometry at the quadrature points of ``Gamma_h`` and ``Omega_Theta``.

    Surface arrays are indexed ``(triangle, point)``; volume arrays
    ``(active cell, point)``.
    """

    tri_cell: np.ndarray
    s_xref: np.ndarray     # (ntri, nq, 3) reference coords in the parent tet
    s_x: np.ndarray        # (ntri, nq, 3) points on Gamma_h
    s_w: np.ndarray        # (ntri, nq) weight * surface measure factor
    s_w_det: np.ndarray    # same factor from the determinant formula
    s_DFinv: np.ndarray    # (ntri, nq, 3, 3)
    n_lin: np.ndarray      # (ntri, 3)
    s_nh: np.ndarray       # (ntri, nq, 3)
    s_nt: np.ndarray       # (ntri, nq, 3) penalty normal
    s_H: np.ndarray        # (ntri, nq, 3, 3)
    v_xref: np.ndarray     # (nqv, 3)
    v_x: np.ndarray        # (ncell, nqv, 3)
    v_w: np.ndarray        # (ncell, nqv) weight * |det DF|
    v_DFinv: np.ndarray    # (ncell, nqv, 3, 3)
    v_nh: np.ndarray       # (ncell, nqv, 3)
    h: float

    @property
    def area(self) -> float:
        return float(self.s_w.sum())


def exact_geometry_providers(phi: LevelSet):
    """Penalty normal and Weingarten map of the analytic level set."""
    return phi.normal, phi.weingarten


def discrete_geometry_providers(bundle: LevelSetBundle):
    def normal(x):
        g = bundle.eval_phi_h(x, derivatives=1)[1]
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def weingarten(x):
        _, g, H = bundle.eval_phi_h(x, derivatives=2)
        gn = np.linalg.norm(g, axis=1)
        n = g / gn[:, None]
        P = np.eye(3) - n[:, :, None] * n[:, None, :]
        return P @ H @ P / gn[:, None, None]

    return normal, weingarten


def surface_geometry(theta: ParametricMap, cut: CutTopology, bundle: LevelSetBundle,
                     surf_rule: QuadRule | None = None, vol_rule: QuadRule | None = None,
                     providers=None) -> SurfaceGeometry:
    mesh = theta.mesh
    k = theta.degree
    surf_rule = surf_rule or triangle_rule(2 * k + 2)
    vol_rule = vol_rule or tet_rule(2 * k)
    if providers is None:
        providers = (exact_geometry_providers(bundle.phi) if theta.mode is LiftMode.EXACT
                     else discrete_geometry_providers(bundle))
    nt_fun, H_fun = providers

    # reference data of the parent tets
    cells = cut.tri_cell
    A = mesh.jacobians[cut.active_tets]
    vals = cut.vertex_values[mesh.tets[cut.active_tets]]
    gref = vals[:, 1:] - vals[:, :1]                      # reference gradient of phi_hat
    glin = np.linalg.solve(np.transpose(A, (0, 2, 1)), gref[:, :, None])[:, :, 0]
    nlin_cell = glin / np.linalg.norm(glin, axis=1, keepdims=True)

    R = cut.tri_bary[:, :, 1:]                            # (ntri, 3, 3) corners in ref coords
    t1, t2 = R[:, 1] - R[:, 0], R[:, 2] - R[:, 0]
    qp = surf_rule.points
    xref = R[:, None, 0] + qp[None, :, 0, None] * t1[:, None] + qp[None, :, 1, None] * t2[:, None]
    x, DF = theta.evaluate(cells, xref)
    _check_det(DF)
    cr = np.cross(np.einsum("tqde,te->tqd", DF, t1), np.einsum("tqde,te->tqd", DF, t2))
    jac = np.linalg.norm(cr, axis=2)
    w = surf_rule.weights[None, :] * jac
    DFinv = np.linalg.inv(DF)
    # n_h = DTheta^{-T} n_lin with DTheta = DF A^{-1}:  DF^{-T} A^T n_lin
    m = np.einsum("tji,tj->ti", A[cells], nlin_cell[cells])
    nh = np.einsum("tqji,tj->tqi", DFinv, m)
    nrm = np.linalg.norm(nh, axis=2)
    nh = nh / nrm[:, :, None]
    # determinant formula: |det DTheta| |DTheta^{-T} n_lin| |A t1 x A t2|
    detTheta = np.linalg.det(DF) / np.linalg.det(A[cells])[:, None]
    flat = np.linalg.norm(np.cross(np.einsum("tde,te->td", A[cells], t1),
                                   np.einsum("tde,te->td", A[cells], t2)), axis=1)
    w_det = surf_rule.weights[None, :] * np.abs(detTheta) * nrm * flat[:, None]

    pts = x.reshape(-1, 3)
    nt = nt_fun(pts).reshape(x.shape)
    H = H_fun(pts).reshape(x.shape + (3,))

    # volume quadrature on the transformed active tets
    vx, vDF = theta.evaluate(np.arange(len(cut.active_tets)), vol_rule.points)
    _check_det(vDF)
    vdet = np.linalg.det(vDF)
    vw = vol_rule.weights[None, :] * np.abs(vdet)
    vDFinv = np.linalg.inv(vDF)
    mv = np.einsum("cji,cj->ci", A, nlin_cell)
    vn = np.einsum("cqji,cj->cqi", vDFinv, mv)
    vn /= np.linalg.norm(vn, axis=2, keepdims=True)

    return SurfaceGeometry(cells, xref, x, w, w_det, DFinv, nlin_cell[cells], nh, nt, H,
                           vol_rule.points, vx, vw, vDFinv, vn, mesh.h)


def _check_det(DF):
    det = np.linalg.det(DF)
    if np.any(det <= 0):
        raise LiftError("det DTheta_h <= 0 at a quadrature point")
