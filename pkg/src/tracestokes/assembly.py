"""Assembly of the surface Stokes system on ``Gamma_h``.

Velocity unknowns are interleaved (``3 * node + component``). Local
matrices are formed cell by cell in chunks: surface contributions of the
one or two triangles of a cut tet are summed into the tet's local matrix
together with the volume stabilization, then added to a fixed CSR
pattern. Summation order only depends on the mesh, so results are
bit-identical across runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .discretization import Discretization
from .lagrange import basis

CHUNK = 512


@dataclass(frozen=True)
class StokesParams:
    """Coefficients of the discrete forms.

    ``None`` selects the defaults ``rho_u = 1/h``, ``rho_p = h`` and
    ``eta = 1/h**2``. The velocity block is
    ``2 mu E:E + c0 P u.P v + k_h + s_h + gamma trE trE``.
    """

    rho_u: float | None = None
    rho_p: float | None = None
    eta: float | None = None
    gamma: float = 0.0
    mu: float = 0.5
    c0: float = 1.0

    def resolve(self, h: float) -> "StokesParams":
        p = replace(
            self,
            rho_u=1.0 / h if self.rho_u is None else float(self.rho_u),
            rho_p=h if self.rho_p is None else float(self.rho_p),
            eta=h**-2 if self.eta is None else float(self.eta),
        )
        for name in ("rho_u", "rho_p", "eta", "mu"):
            if not getattr(p, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(p, name)}")
        for name in ("gamma", "c0"):
            if not getattr(p, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(p, name)}")
        return p


class Pattern:
    """CSR sparsity of a block assembled from cell-local matrices.

    ``inverse`` maps every entry of the stacked local matrices to its
    position in ``indices`` / ``data``.
    """

    def __init__(self, row_dofs: np.ndarray, col_dofs: np.ndarray, shape):
        self.shape = shape
        nc, lr = row_dofs.shape
        lc = col_dofs.shape[1]
        key = (row_dofs[:, :, None].astype(np.int64) * shape[1] + col_dofs[:, None, :]).ravel()
        uniq, inv = np.unique(key, return_inverse=True)
        self.inverse = inv.astype(np.int32 if len(uniq) < 2**31 else np.int64)
        rows = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(shape[0] + 1)).astype(np.int64)
        self.local_size = lr * lc
        self.nnz = len(uniq)

    def add(self, data: np.ndarray, c0: int, loc: np.ndarray) -> None:
        """Add local matrices ``(c, lr, lc)`` of cells ``c0, c0+1, ...`` to ``data``."""
        sl = self.inverse[c0 * self.local_size:(c0 + len(loc)) * self.local_size]
        lo, hi = int(sl.min()), int(sl.max()) + 1
        data[lo:hi] += np.bincount(sl - lo, weights=loc.ravel(), minlength=hi - lo)

    def matrix(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


@dataclass(frozen=True)
class StokesSystem:
    """Matrices of the discrete saddle point problem.

    ``A`` velocity block, ``B`` divergence (pressure rows), ``C`` pressure
    stabilization, ``Mp`` pressure norm matrix (surface mass + ``C``),
    ``Mu`` velocity mass on ``Gamma_h``, ``G`` grad-div form (unscaled),
    ``m`` pressure mean vector. ``parts`` holds individual velocity forms.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    Mp: sp.csr_matrix
    Mps: sp.csr_matrix
    Mu: sp.csr_matrix
    G: sp.csr_matrix
    m: np.ndarray
    params: StokesParams
    parts: dict = field(default_factory=dict)

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.C.shape[0]

    def export(self, directory) -> list[Path]:
        """Write every matrix in MatrixMarket coordinate format."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = []
        mats = {"A": self.A, "B": self.B, "C": self.C, "Mp": self.Mp, "Mu": self.Mu, "G": self.G}
        mats.update(self.parts)
        for name, M in mats.items():
            path = d / f"{name}.mtx"
            scipy.io.mmwrite(str(path), sp.coo_matrix(M), precision=17)
            out.append(path)
        return out


# ---------------------------------------------------------------- tables


class _SurfaceChunk:
    """Basis data at the surface quadrature points of a range of triangles."""

    def __init__(self, disc: Discretization, t0: int, t1: int, need_q: bool = True):
        # gradients are pushed forward with DF^{-T} and projected with P_h
        g = disc.geom
        xr = g.s_xref[t0:t1]
        DFinv = g.s_DFinv[t0:t1]
        self.w = g.s_w[t0:t1]
        self.n = g.s_nh[t0:t1]
        self.nt = g.s_nt[t0:t1]
        self.H = g.s_H[t0:t1]
        self.P = np.eye(3) - self.n[..., :, None] * self.n[..., None, :]
        bv = basis(disc.V.degree)
        self.N = bv.values(xr)
        PDt = np.swapaxes(self.P @ np.swapaxes(DFinv, 2, 3), 2, 3)   # DF^{-1} P
        self.Pg = bv.gradients(xr) @ PDt
        if need_q:
            bq = basis(disc.Q.degree)
            self.M = bq.values(xr)
            self.PgQ = bq.gradients(xr) @ PDt

    def strain(self):
        """``E_h`` of every vector basis function, ``(t, q, nv*3, 3, 3)``."""
        P, Pg = self.P, self.Pg
        t, q, nv, _ = Pg.shape
        S = 0.5 * P[:, :, None, :, :, None] * Pg[:, :, :, None, None, :]
        E = S + np.swapaxes(S, -1, -2)
        E -= (self.N[:, :, :, None] * self.n[:, :, None, :])[..., None, None] * self.H[:, :, None, None]
        return E.reshape(t, q, nv * 3, 3, 3)

    def trace_strain(self):
        t, q, nv, _ = self.Pg.shape
        trH = np.trace(self.H, axis1=2, axis2=3)
        D = self.Pg - self.N[..., None] * self.n[:, :, None, :] * trH[:, :, None, None]
        return D.reshape(t, q, nv * 3)


def _gram(X, w):
    """``sum_q w_q X_q^T X_q`` for ``X (t, q, r, L)`` -> ``(t, L, L)``."""
    t, q, r, L = X.shape
    Y = (X * np.sqrt(w)[:, :, None, None]).reshape(t, q * r, L)
    return np.matmul(np.swapaxes(Y, 1, 2), Y)


def _to_cells(loc, tri_cell, c0, c1):
    """Sum per-triangle local matrices into their parent cells ``c0..c1-1``."""
    starts = np.searchsorted(tri_cell, np.arange(c0, c1))
    return np.add.reduceat(loc, starts, axis=0)


def _kron3(S):
    """Scalar local matrices ``(c, n, n)`` to interleaved vector ones."""
    c, n, _ = S.shape
    out = np.zeros((c, n, 3, n, 3))
    for d in range(3):
        out[:, :, d, :, d] = S
    return out.reshape(c, 3 * n, 3 * n)


def _tri_range(disc, c0, c1):
    tc = disc.geom.tri_cell
    return int(np.searchsorted(tc, c0)), int(np.searchsorted(tc, c1))


# ---------------------------------------------------------------- assembly


def velocity_pattern(disc: Discretization) -> Pattern:
    vd = disc.V.vector_dofs()
    n = 3 * disc.V.ndofs
    return Pattern(vd, vd, (n, n))


def assemble(disc: Discretization, params: StokesParams | None = None,
             parts: tuple[str, ...] = (), chunk: int = CHUNK) -> StokesSystem:
    """Assemble all matrices of the saddle point system.

    ``parts`` may request individual velocity forms: ``"strain"`` (E:E),
    ``"pmass"`` (P u.P v), ``"penalty"`` (k_h) and ``"normal_stab"`` (s_h).
    """
    params = (params or StokesParams()).resolve(disc.h)
    unknown = set(parts) - {"strain", "pmass", "penalty", "normal_stab"}
    if unknown:
        raise ValueError(f"unknown parts: {sorted(unknown)}")
    V, Q, geom = disc.V, disc.Q, disc.geom
    if V.cell_dofs.shape[0] != Q.cell_dofs.shape[0] or V.cell_dofs.shape[0] != geom.v_x.shape[0]:
        raise ValueError("velocity space, pressure space and geometry do not match")
    ncell = V.cell_dofs.shape[0]
    nu, npr = 3 * V.ndofs, Q.ndofs
    vd = V.vector_dofs()
    pv = Pattern(vd, vd, (nu, nu))
    pq = Pattern(Q.cell_dofs, Q.cell_dofs, (npr, npr))
    pb = Pattern(Q.cell_dofs, vd, (npr, nu))

    bv, bq = basis(V.degree), basis(Q.degree)
    vgrad_ref = bv.gradients(geom.v_xref)
    qgrad_ref = bq.gradients(geom.v_xref)

    names = ["A", "Mu", "G", *parts]
    vdata = {k: np.zeros(pv.nnz) for k in names}
    Bdata, Mpsdata, Cdata = np.zeros(pb.nnz), np.zeros(pq.nnz), np.zeros(pq.nnz)
    m = np.zeros(npr)
    p = params

    for c0 in range(0, ncell, chunk):
        c1 = min(c0 + chunk, ncell)
        t0, t1 = _tri_range(disc, c0, c1)
        tc = geom.tri_cell[t0:t1]
        s = _SurfaceChunk(disc, t0, t1)
        w = s.w

        loc = {}
        E = s.strain()
        t, q, L = E.shape[:3]
        strain = _gram(np.moveaxis(E.reshape(t, q, L, 9), 3, 2), w)
        smass = _gram(s.N[:, :, None, :], w)
        mass = _kron3(smass)
        Nn = (s.N[:, :, :, None] * s.n[:, :, None, :]).reshape(t, q, 1, L)
        pmass = mass - _gram(Nn, w)
        Nt = (s.N[:, :, :, None] * s.nt[:, :, None, :]).reshape(t, q, 1, L)
        pen = p.eta * _gram(Nt, w)
        gd = _gram(s.trace_strain()[:, :, None, :], w)

        # volume stabilization on the transformed active tets
        vw = geom.v_w[c0:c1]
        a = np.matmul(geom.v_DFinv[c0:c1], geom.v_nh[c0:c1, :, :, None])   # DF^{-1} n
        dn = np.matmul(vgrad_ref, a)[..., 0]
        stab = _kron3(p.rho_u * _gram(dn[:, :, None, :], vw))
        dq = np.matmul(qgrad_ref, a)[..., 0]
        Cloc = p.rho_p * _gram(dq[:, :, None, :], vw)

        cells = lambda a: _to_cells(a, tc, c0, c1)  # noqa: E731
        loc["A"] = cells(2 * p.mu * strain + p.c0 * pmass + pen + p.gamma * gd) + stab
        loc["Mu"] = cells(mass)
        loc["G"] = cells(gd)
        extra = {"strain": strain, "pmass": pmass, "penalty": pen}
        for k in parts:
            loc[k] = stab if k == "normal_stab" else cells(extra[k])
        for k in names:
            pv.add(vdata[k], c0, loc[k])

        # b_h(v, q) = int v . P grad q: pressure rows, interleaved velocity columns
        Wg = np.swapaxes((s.PgQ * w[:, :, None, None]).reshape(t, q, -1), 1, 2)
        Bloc = np.matmul(Wg, s.N).reshape(t, -1, 3, s.N.shape[2])
        pb.add(Bdata, c0, cells(np.swapaxes(Bloc, 2, 3).reshape(t, -1, L)))
        pq.add(Mpsdata, c0, cells(_gram(s.M[:, :, None, :], w)))
        pq.add(Cdata, c0, Cloc)
        np.add.at(m, Q.cell_dofs[tc], np.einsum("tq,tqi->ti", w, s.M))

    A = pv.matrix(vdata["A"])
    Mps = pq.matrix(Mpsdata)
    C = pq.matrix(Cdata)
    return StokesSystem(A=A, B=pb.matrix(Bdata), C=C, Mp=(Mps + C).tocsr(), Mps=Mps,
                        Mu=pv.matrix(vdata["Mu"]), G=pv.matrix(vdata["G"]), m=m, params=p,
                        parts={k: pv.matrix(vdata[k]) for k in parts})


# ---------------------------------------------------------------- loads


def surface_mean(disc: Discretization, values: np.ndarray) -> float:
    """Mean over ``Gamma_h`` of values given at the surface quadrature points."""
    w = disc.geom.s_w
    return float(np.sum(w * values.reshape(w.shape)) / w.sum())


def assemble_rhs(case, disc: Discretization) -> tuple[np.ndarray, np.ndarray]:
    """Load vectors ``F = (f_h, v)`` and ``Gv = -(g_h, q)`` on ``Gamma_h``.

    ``f_h = f o p`` and ``g_h = g o p - mean``, evaluated at the surface
    quadrature points; ``case`` needs callables ``f`` and ``g``.
    """
    geom, V, Q = disc.geom, disc.V, disc.Q
    pts = geom.s_x.reshape(-1, 3)
    w = geom.s_w
    f = np.asarray(case.f(pts)).reshape(w.shape + (3,))
    g = np.asarray(case.g(pts)).reshape(w.shape)
    g = g - surface_mean(disc, g)
    xr = geom.s_xref
    Nv = basis(V.degree).values(xr)
    Nq = basis(Q.degree).values(xr)
    cells = geom.tri_cell
    F = np.zeros(3 * V.ndofs)
    np.add.at(F, V.vector_dofs()[cells], np.einsum("tq,tqi,tqc->tic", w, Nv, f).reshape(len(cells), -1))
    Gv = np.zeros(Q.ndofs)
    np.add.at(Gv, Q.cell_dofs[cells], -np.einsum("tq,tqi,tq->ti", w, Nq, g))
    return F, Gv


def assemble_convection(disc: Discretization, w: np.ndarray, pattern: Pattern | None = None,
                        chunk: int = CHUNK, cache: list | None = None) -> sp.csr_matrix:
    """Linearized inertia ``N(w)[v, u] = int ((P_h grad u P_h) w) . v``.

    ``w`` holds interleaved velocity coefficients. Passing the velocity
    ``pattern`` and a ``cache`` list (filled on first use) avoids rebuilding
    sparsity and basis tables in time loops.
    """
    V, geom = disc.V, disc.geom
    pattern = pattern or velocity_pattern(disc)
    if w.shape != (3 * V.ndofs,):
        raise ValueError("convection field does not match the velocity space")
    W = w.reshape(-1, 3)
    data = np.zeros(pattern.nnz)
    ncell = V.cell_dofs.shape[0]
    fill = cache is not None and not cache
    for i, c0 in enumerate(range(0, ncell, chunk)):
        c1 = min(c0 + chunk, ncell)
        if cache and not fill:
            tc, N, NW, Pg, P = cache[i]
        else:
            t0, t1 = _tri_range(disc, c0, c1)
            tc = geom.tri_cell[t0:t1]
            s = _SurfaceChunk(disc, t0, t1, need_q=False)
            N, Pg = s.N, s.Pg
            NW = N * s.w[..., None]
            P = s.P.reshape(len(tc), -1, 9)
            if fill:
                cache.append((tc, N, NW, Pg, P))
        t, q, nv = N.shape
        wq = np.matmul(N, W[V.cell_dofs[tc]])                    # (t, q, 3)
        a = np.matmul(Pg, wq[..., None])[..., 0]                # grad N_j . P w
        # rows (i, c), columns (j, d): sum_q W N_i a_j P_cd
        X = (NW[:, :, :, None] * a[:, :, None, :]).reshape(t, q, nv * nv)
        loc = np.matmul(np.swapaxes(X, 1, 2), P).reshape(t, nv, nv, 3, 3)
        loc = loc.transpose(0, 1, 3, 2, 4).reshape(t, 3 * nv, 3 * nv)
        pattern.add(data, c0, _to_cells(loc, tc, c0, c1))
    return pattern.matrix(data)
