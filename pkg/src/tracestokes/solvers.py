"""Saddle point solves and the pressure Schur complement spectrum.

The mean-zero pressure condition ``m^T p = 0`` is imposed with one
Lagrange multiplier, giving the bordered symmetric system::

    [ A   B^T  0 ] [u]   [F ]
    [ B  -C    m ] [p] = [Gv]
    [ 0   m^T  0 ] [l]   [0 ]
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import StokesSystem

RESIDUAL_TOL = 1e-10
EIG_TOL = 1e-8
MAX_SUBSPACE = 20
DENSE_LIMIT = 2000
DIRECT_LIMIT = 80_000

try:  # CHOLMOD through cvxopt is much leaner than SuperLU for the SPD block
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
except ImportError:  # pragma: no cover
    _cholmod = None


class SolverError(RuntimeError):
    pass


class SPDFactor:
    """Sparse Cholesky of a symmetric positive definite matrix."""

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        if _cholmod is not None:
            L = sp.tril(A).tocoo()
            M = _cvx_spmatrix(_cvx_matrix(L.data), _cvx_matrix(L.row.astype(int)),
                              _cvx_matrix(L.col.astype(int)), L.shape)
            _cholmod.options["supernodal"] = 2
            try:
                self._F = _cholmod.symbolic(M)
                _cholmod.numeric(M, self._F)
            except ArithmeticError as exc:
                raise SolverError("matrix is not positive definite") from exc
            self.backend = "cholmod"
        else:  # pragma: no cover
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options=dict(SymmetricMode=True))
            self.backend = "superlu"

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.backend == "cholmod":
            x = _cvx_matrix(b.reshape(self.n, -1).copy(order="F"))
            _cholmod.solve(self._F, x)
            return np.array(x).reshape(b.shape)
        return self._lu.solve(b)  # pragma: no cover


def bordered_matrix(system: StokesSystem) -> sp.csc_matrix:
    m = sp.csr_matrix(system.m[None, :])
    return sp.bmat([[system.A, system.B.T, None],
                    [system.B, -system.C, m.T],
                    [None, m, None]], format="csc")


class SaddleFactor:
    """LU factorization of the bordered system (threshold pivoting)."""

    def __init__(self, system: StokesSystem):
        self.K = bordered_matrix(system)
        try:
            self.lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                                options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SolverError(f"saddle factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self.lu.solve(b)
        for _ in range(3):
            r = b - self.K @ x
            if np.linalg.norm(r) <= 1e-13 * max(np.linalg.norm(b), 1e-300):
                break
            x += self.lu.solve(r)
        return x


@dataclass
class SaddleSolution:
    u: np.ndarray
    p: np.ndarray
    residual: float
    stats: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"residual": self.residual, "mean": self.stats.get("mean"),
                           "stats": self.stats}, indent=2)


def _precond(system: StokesSystem, Af: SPDFactor):
    nu, npr = system.n_u, system.n_p
    Mlu = spla.splu(sp.csc_matrix(system.Mp))
    s = float(system.m @ Mlu.solve(system.m))

    def apply(r):
        out = np.empty_like(r)
        out[:nu] = Af.solve(r[:nu])
        out[nu:nu + npr] = Mlu.solve(r[nu:nu + npr])
        out[-1] = r[-1] / s
        return out
    n = nu + npr + 1
    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def solve_saddle(system: StokesSystem, F: np.ndarray, Gv: np.ndarray, method: str = "auto",
                 tol: float = RESIDUAL_TOL, maxiter: int = 10_000) -> SaddleSolution:
    """Solve the bordered saddle point system.

    ``method`` is ``"direct"`` (sparse LU of the bordered matrix),
    ``"minres"`` (block diagonal preconditioner with an exact Cholesky
    solve for ``A`` and ``Mp`` for the pressure) or ``"auto"``.
    """
    nu, npr = system.n_u, system.n_p
    if F.shape != (nu,) or Gv.shape != (npr,):
        raise ValueError("right-hand side does not match the system")
    n = nu + npr + 1
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "minres"
    b = np.concatenate([F, Gv, [0.0]])
    bn = np.linalg.norm(b)
    t0 = time.perf_counter()
    if bn == 0.0:
        return SaddleSolution(np.zeros(nu), np.zeros(npr), 0.0, {"method": method, "mean": 0.0})
    stats: dict = {"method": method, "n": n}
    if method == "direct":
        fac = SaddleFactor(system)
        K = fac.K
        x = fac.solve(b)
        stats["fill"] = int(fac.lu.L.nnz + fac.lu.U.nnz)
    elif method == "minres":
        K = bordered_matrix(system)
        Af = SPDFactor(system.A)
        P = _precond(system, Af)
        x = np.zeros(n)
        its = 0
        for _ in range(5):
            r = b - K @ x
            if np.linalg.norm(r) <= tol * bn:
                break
            count = [0]
            dx, info = spla.minres(K, r, M=P, rtol=1e-3 * tol * bn / np.linalg.norm(r),
                                   maxiter=maxiter, callback=lambda _: count.__setitem__(0, count[0] + 1))
            its += count[0]
            if info > 0:
                raise SolverError(f"MINRES did not converge in {maxiter} iterations")
            x += dx
        stats["iterations"] = its
        stats["backend"] = Af.backend
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.linalg.norm(b - K @ x) / bn)
    u, p = x[:nu], x[nu:nu + npr]
    stats["seconds"] = time.perf_counter() - t0
    stats["multiplier"] = float(x[-1])
    stats["mean"] = float(system.m @ p)
    if res > tol:
        raise SolverError(f"residual {res:.3e} above {tol:.1e}")
    return SaddleSolution(u, p, res, stats)


# ---------------------------------------------------------------- eigenvalues


@dataclass
class EigenReport:
    lam_min: float
    deflated_dim: int
    residual: float
    pair: str = ""
    method: str = ""
    eigenvalues: list = field(default_factory=list)
    vector: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("vector")
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


class SchurOperator:
    """``S = B A^{-1} B^T + C`` applied with a reused Cholesky factor of ``A``."""

    def __init__(self, system: StokesSystem, Af: SPDFactor | None = None):
        self.system = system
        self.Af = Af or SPDFactor(system.A)

    def __matmul__(self, x):
        s = self.system
        return s.B @ self.Af.solve(s.B.T @ x) + s.C @ x

    def dense(self) -> np.ndarray:
        s = self.system
        Bt = s.B.T.toarray()
        S = s.B @ self.Af.solve(Bt)
        return np.asarray(S) + s.C.toarray()


def eig_residual(S, M, lam, x) -> float:
    Mx = M @ x
    return float(np.linalg.norm(S @ x - lam * Mx) / np.linalg.norm(Mx))


def _dense_eig(S: np.ndarray, M: np.ndarray, deflate: np.ndarray | None):
    if deflate is None:
        w, V = sla.eigh(S, M)
        return w, V
    # orthonormal basis of {x : deflate^T M x = 0}
    Z = sla.null_space((M @ deflate)[None, :])
    w, Y = sla.eigh(Z.T @ S @ Z, Z.T @ M @ Z)
    return w, Z @ Y


def generalized_min_eig(S, M, deflate=None):
    """Smallest eigenvalue of dense ``S x = lam M x`` on the M-complement of ``deflate``."""
    S, M = np.atleast_2d(S).astype(float), np.atleast_2d(M).astype(float)
    w, V = _dense_eig(S, M, deflate)
    return float(w[0]), V[:, 0]


def smallest_positive_eig(system: StokesSystem, pair: str = "", method: str = "auto",
                          nev: int = 3, tol: float = EIG_TOL) -> EigenReport:
    """Smallest strictly positive eigenvalue of ``S p = lam Mp p``.

    Constants span the kernel of ``S`` and are removed by requiring
    ``1^T Mp p = 0``. For ``n_p <= 2000`` the projected pencil is solved
    densely; otherwise ARPACK runs in shift-invert mode around 0, where the
    bordered saddle factorization applies the inverse of ``S`` on the
    ``Mp``-orthogonal complement of the constants.
    """
    npr = system.n_p
    M = system.Mp
    one = np.ones(npr)
    Af = SPDFactor(system.A)
    Sop = SchurOperator(system, Af)
    if method == "auto":
        method = "dense" if npr <= DENSE_LIMIT else "shift-invert"
    if method == "dense":
        w, V = _dense_eig(Sop.dense(), M.toarray(), one)
        lam, x = float(w[0]), V[:, 0]
        vals = [float(v) for v in w[:nev]]
    elif method == "shift-invert":
        # Mp 1 = m since C 1 = 0, so the border imposes exactly 1^T Mp p = 0
        fac = SaddleFactor(system)
        nu = system.n_u

        def opinv(b):
            rhs = np.zeros(nu + npr + 1)
            rhs[nu:nu + npr] = -b
            return fac.solve(rhs)[nu:nu + npr]
        OP = spla.LinearOperator((npr, npr), matvec=opinv, dtype=float)
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(npr)
        v0 -= (one @ (M @ v0)) / (one @ (M @ one)) * one
        ncv = min(MAX_SUBSPACE, npr - 1)
        w, V = spla.eigsh(_linop(Sop, npr), k=nev, M=M, sigma=0.0, OPinv=OP,
                          which="LM", v0=v0, ncv=ncv, tol=1e-12)
        order = np.argsort(w)
        w, V = w[order], V[:, order]
        lam, x = float(w[0]), V[:, 0]
        vals = [float(v) for v in w]
    else:
        raise ValueError(f"unknown method {method!r}")
    # enforce M-orthogonality to the constants exactly
    x = x - (one @ (M @ x)) / (one @ (M @ one)) * one
    res = eig_residual(Sop, M, lam, x)
    if res > tol:
        raise SolverError(f"eigen residual {res:.3e} above {tol:.1e}")
    return EigenReport(lam, npr - 1, res, pair, method, vals, x)


def _linop(Sop: SchurOperator, n: int) -> spla.LinearOperator:
    return spla.LinearOperator((n, n), matvec=lambda x: Sop @ x, dtype=float)
