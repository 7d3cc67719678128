"""Errors in the discrete energy norms, EOCs and geometry diagnostics."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import CHUNK, StokesParams, _SurfaceChunk, _tri_range, assemble, assemble_rhs
from .discretization import Discretization, discretize
from .lagrange import basis
from .levelset import LevelSet
from .solvers import SPDFactor, solve_saddle


def closest_point(phi: LevelSet, x: np.ndarray) -> np.ndarray:
    """Closest point on ``{phi = 0}`` (closed form for spheres and planes)."""
    x = np.asarray(x, dtype=float)
    return phi.closest_point(x.reshape(-1, 3)).reshape(x.shape)


def eoc(errors, hs=None) -> list[float]:
    """Orders ``log(e_{l-1}/e_l) / log(h_{l-1}/h_l)``; ``log2`` without ``hs``.

    The first entry is ``nan``.
    """
    e = np.asarray(errors, dtype=float)
    out = [math.nan]
    for i in range(1, len(e)):
        if e[i] <= 0 or e[i - 1] <= 0:
            out.append(math.nan)
            continue
        r = math.log(e[i - 1] / e[i])
        out.append(r / (math.log(hs[i - 1] / hs[i]) if hs is not None else math.log(2.0)))
    return out


@dataclass
class ConvergenceRow:
    level: int
    h: float
    err_A: float
    err_M: float
    err_L2_u: float
    eoc_A: float = math.nan
    eoc_M: float = math.nan
    eoc: float = math.nan       # of err_A + err_M
    eoc_L2_u: float = math.nan
    stats: dict = field(default_factory=dict)

    @property
    def err(self) -> float:
        return self.err_A + self.err_M

    def as_dict(self) -> dict:
        d = asdict(self)
        d["err"] = self.err
        return d


def fill_eoc(rows: list[ConvergenceRow]) -> list[ConvergenceRow]:
    """Set the EOC columns from consecutive rows (levels differ by one halving)."""
    for name, get in (("eoc_A", lambda r: r.err_A), ("eoc_M", lambda r: r.err_M),
                      ("eoc", lambda r: r.err), ("eoc_L2_u", lambda r: r.err_L2_u)):
        for r, v in zip(rows, eoc([get(r) for r in rows])):
            setattr(r, name, v)
    return rows


# ---------------------------------------------------------------- FE fields


def _tables(dofmap, ncell, xref, DFinv):
    b = basis(dofmap.degree)
    N, dN = b.values(xref), b.gradients(xref)
    if xref.ndim == 2:
        N = np.broadcast_to(N, (ncell,) + N.shape)
        dN = np.broadcast_to(dN, (ncell,) + dN.shape)
    return N, dN @ DFinv          # physical gradients DF^{-T} grad_ref


def _fe_vector(dofmap, coef, cells, xref, DFinv):
    """Values ``(t, q, 3)`` and gradients ``(t, q, 3, 3)`` (component, direction)."""
    C = coef.reshape(-1, 3)[dofmap.cell_dofs[cells]]            # (t, nloc, 3)
    N, G = _tables(dofmap, len(cells), xref, DFinv)
    return np.einsum("tqi,tic->tqc", N, C), np.einsum("tqid,tic->tqcd", G, C)


def _fe_scalar(dofmap, coef, cells, xref, DFinv):
    C = coef[dofmap.cell_dofs[cells]]
    N, G = _tables(dofmap, len(cells), xref, DFinv)
    return np.einsum("tqi,ti->tq", N, C), np.einsum("tqid,ti->tqd", G, C)


def _apply(fun, x):
    shp = x.shape[:-1]
    out = np.asarray(fun(x.reshape(-1, 3)))
    return out.reshape(shp + out.shape[1:])


@dataclass
class ErrorParts:
    strain: float
    pmass: float
    penalty: float
    normal_stab: float
    p_l2: float
    p_stab: float
    u_l2: float
    graddiv: float = 0.0

    @property
    def A(self) -> float:
        return math.sqrt(self.strain + self.pmass + self.penalty + self.normal_stab + self.graddiv)

    @property
    def M(self) -> float:
        return math.sqrt(self.p_l2 + self.p_stab)


def error_parts(disc: Discretization, params: StokesParams, u_coef: np.ndarray,
                p_coef: np.ndarray | None, u_exact, grad_u_exact, p_exact=None,
                grad_p_exact=None) -> ErrorParts:
    """Squared error contributions of ``u_exact - u_h`` and ``p_exact - p_h``.

    Exact fields are callables on ``(N, 3)`` points, evaluated directly at
    the quadrature points of ``Gamma_h`` and of the transformed active tets.
    The pressure is compared after removing the ``Gamma_h`` mean of both.
    """
    p = params.resolve(disc.h)
    g = disc.geom
    cells = g.tri_cell
    # surface terms
    uh, Guh = _fe_vector(disc.V, u_coef, cells, g.s_xref, g.s_DFinv)
    e = _apply(u_exact, g.s_x) - uh
    Ge = _apply(grad_u_exact, g.s_x) - Guh
    n, nt, H, w = g.s_nh, g.s_nt, g.s_H, g.s_w
    P = np.eye(3) - n[..., :, None] * n[..., None, :]
    PGP = P @ Ge @ P
    E = 0.5 * (PGP + np.swapaxes(PGP, -1, -2)) - np.einsum("tqc,tqc->tq", e, n)[..., None, None] * H
    strain = 2 * p.mu * float(np.sum(w * np.sum(E * E, axis=(-1, -2))))
    Pe = np.einsum("tqab,tqb->tqa", P, e)
    pmass = p.c0 * float(np.sum(w * np.sum(Pe * Pe, axis=-1)))
    pen = p.eta * float(np.sum(w * np.einsum("tqc,tqc->tq", e, nt) ** 2))
    u_l2 = float(np.sum(w * np.sum(e * e, axis=-1)))
    graddiv = 0.0
    if p.gamma:
        trE = np.trace(PGP, axis1=-2, axis2=-1) - np.einsum("tqc,tqc->tq", e, n) * np.trace(H, axis1=-2, axis2=-1)
        graddiv = p.gamma * float(np.sum(w * trE**2))
    # volume terms
    act = np.arange(g.v_x.shape[0])
    _, Guv = _fe_vector(disc.V, u_coef, act, g.v_xref, g.v_DFinv)
    Gev = _apply(grad_u_exact, g.v_x) - Guv
    dn = np.einsum("cqab,cqb->cqa", Gev, g.v_nh)
    stab = p.rho_u * float(np.sum(g.v_w * np.sum(dn * dn, axis=-1)))

    p_l2 = p_stab = 0.0
    if p_exact is not None and p_coef is not None:
        ph, _ = _fe_scalar(disc.Q, p_coef, cells, g.s_xref, g.s_DFinv)
        pe = _apply(p_exact, g.s_x)
        area = w.sum()
        ep = (pe - np.sum(w * pe) / area) - (ph - np.sum(w * ph) / area)
        p_l2 = float(np.sum(w * ep * ep))
        _, Gph = _fe_scalar(disc.Q, p_coef, act, g.v_xref, g.v_DFinv)
        Gep = _apply(grad_p_exact, g.v_x) - Gph
        p_stab = p.rho_p * float(np.sum(g.v_w * np.einsum("cqd,cqd->cq", Gep, g.v_nh) ** 2))
    return ErrorParts(strain, pmass, pen, stab, p_l2, p_stab, u_l2, graddiv)


def error_norms(solution, case, system, disc: Discretization, level: int = -1) -> ConvergenceRow:
    """Energy-norm errors of a solved manufactured case on ``Gamma_h``."""
    parts = error_parts(disc, system.params, solution.u, solution.p, case.u, case.grad_u,
                        case.p, case.grad_p)
    return ConvergenceRow(level, disc.h, parts.A, parts.M, math.sqrt(parts.u_l2))


def interpolation_errors(case, disc: Discretization, params: StokesParams | None = None,
                         level: int = -1) -> ConvergenceRow:
    """Errors of the nodal interpolants at the ``Theta_h``-mapped nodes."""
    params = params or StokesParams()
    u_i = case.u(disc.theta.mapped_nodes(disc.V)).ravel()
    p_i = case.p(disc.theta.mapped_nodes(disc.Q))
    parts = error_parts(disc, params, u_i, p_i, case.u, case.grad_u, case.p, case.grad_p)
    return ConvergenceRow(level, disc.h, parts.A, parts.M, math.sqrt(parts.u_l2))


def convergence_study(phi: LevelSet, case, k: int, levels, pressure_degree: int | None = None,
                      params: StokesParams | None = None, mode: str = "exact",
                      callback=None) -> list[ConvergenceRow]:
    """Solve ``case`` on each level and tabulate errors and EOCs.

    ``callback(level, disc, system, solution)`` is invoked after each solve.
    """
    params = params or StokesParams()
    rows = []
    for lev in levels:
        t0 = time.perf_counter()
        disc = discretize(phi, k, lev, pressure_degree=pressure_degree, mode=mode)
        system = assemble(disc, params)
        F, Gv = assemble_rhs(case, disc)
        sol = solve_saddle(system, F, Gv)
        row = error_norms(sol, case, system, disc, lev)
        row.stats = {**disc.stats(), "residual": sol.residual, "mean": sol.stats["mean"],
                     "solver": sol.stats["method"], "seconds": time.perf_counter() - t0}
        rows.append(row)
        if callback is not None:
            callback(lev, disc, system, sol)
    return fill_eoc(rows)


def energy_load(disc: Discretization, params: StokesParams, u_exact, grad_u_exact,
                chunk: int = CHUNK) -> np.ndarray:
    """Vector ``b_j = A_h(u*, phi_j)`` for an analytic velocity field ``u*``."""
    p = params.resolve(disc.h)
    g, V = disc.geom, disc.V
    b = np.zeros(3 * V.ndofs)
    vd = V.vector_dofs()
    ncell = V.cell_dofs.shape[0]
    for c0 in range(0, ncell, chunk):
        c1 = min(c0 + chunk, ncell)
        t0, t1 = _tri_range(disc, c0, c1)
        s = _SurfaceChunk(disc, t0, t1, need_q=False)
        x = g.s_x[t0:t1]
        u, Gu = _apply(u_exact, x), _apply(grad_u_exact, x)
        PGP = s.P @ Gu @ s.P
        un = np.einsum("tqc,tqc->tq", u, s.n)
        E = 0.5 * (PGP + np.swapaxes(PGP, -1, -2)) - un[..., None, None] * s.H
        t, q, nv = s.N.shape
        Nv = s.N[..., None, None] * np.eye(3)                      # (t, q, nv, 3, 3)
        Pu = np.einsum("tqab,tqb->tqa", s.P, u)
        loc = 2 * p.mu * np.einsum("tqab,tqlab,tq->tl", E, s.strain(), s.w)
        loc += (p.c0 * np.einsum("tqa,tqab,tqicb,tq->tic", Pu, s.P, Nv, s.w)
                + p.eta * np.einsum("tq,tqa,tqica,tq->tic", np.einsum("tqc,tqc->tq", u, s.nt),
                                    s.nt, Nv, s.w)).reshape(t, -1)
        if p.gamma:
            trH = np.trace(s.H, axis1=2, axis2=3)
            trE = np.trace(PGP, axis1=2, axis2=3) - un * trH
            loc += p.gamma * np.einsum("tq,tql,tq->tl", trE, s.trace_strain(), s.w)
        np.add.at(b, vd[g.tri_cell[t0:t1]], loc)
        # volume stabilization with the ambient gradient of the extension
        a = np.matmul(g.v_DFinv[c0:c1], g.v_nh[c0:c1, :, :, None])[..., 0]
        dphi = np.einsum("qid,cqd->cqi", basis(V.degree).gradients(g.v_xref), a)
        du = np.einsum("cqab,cqb->cqa", _apply(grad_u_exact, g.v_x[c0:c1]), g.v_nh[c0:c1])
        vloc = p.rho_u * np.einsum("cq,cqi,cqa->cia", g.v_w[c0:c1], dphi, du)
        np.add.at(b, vd[c0:c1], vloc.reshape(c1 - c0, -1))
    return b


def best_approximation(disc: Discretization, system, u_exact, grad_u_exact) -> np.ndarray:
    """Coefficients of the ``A_h``-orthogonal projection of ``u*`` onto the velocity space.

    Its ``||.||_A`` error is the smallest possible on the level, hence a
    lower bound for the Galerkin velocity error.
    """
    b = energy_load(disc, system.params, u_exact, grad_u_exact)
    return SPDFactor(system.A).solve(b)


# ---------------------------------------------------------------- geometry


def geometry_errors(disc: Discretization) -> dict:
    """Max ``|phi|`` and max ``|n_h - n o p|`` over the surface quadrature points."""
    phi = disc.phi
    x = disc.geom.s_x.reshape(-1, 3)
    dist = float(np.max(np.abs(phi.value(x))))
    n_ex = phi.normal(closest_point(phi, x))
    nerr = float(np.max(np.linalg.norm(disc.geom.s_nh.reshape(-1, 3) - n_ex, axis=1)))
    return {"h": disc.h, "dist": dist, "normal": nerr, "area": disc.geom.area,
            "lift_displacement_constant": disc.theta.disp_constant}


def geometry_report(discs: list[Discretization]) -> dict:
    """Geometry errors per level with EOCs (levels must halve ``h``)."""
    if len(discs) < 2:
        raise ValueError("need at least two levels")
    rows = [geometry_errors(d) for d in discs]
    hs = [r["h"] for r in rows]
    for key in ("dist", "normal"):
        for r, v in zip(rows, eoc([r[key] for r in rows], hs)):
            r[f"eoc_{key}"] = v
    return {"rows": rows, "k": discs[0].k}


# ---------------------------------------------------------------- Korn / Hodge


@dataclass
class KornResult:
    ratio: float
    target: float
    deviation: float


def korn_hodge_check(disc: Discretization, field_fun, target: float = 2.0,
                     system=None) -> KornResult:
    """Rayleigh quotient ``int E_h:E_h / int |u|^2`` of an interpolated field.

    ``field_fun`` is evaluated at the ``Theta_h``-mapped velocity nodes. For
    the curl of ``x1 x2`` on the unit sphere the continuous value is 2.
    """
    if system is None or "strain" not in system.parts:
        system = assemble(disc, parts=("strain",))
    u = np.asarray(field_fun(disc.theta.mapped_nodes(disc.V))).ravel()
    ratio = float(u @ (system.parts["strain"] @ u) / (u @ (system.Mu @ u)))
    return KornResult(ratio, target, ratio - target)
