"""BDF2 time stepping for surface Navier-Stokes and the Kelvin-Helmholtz setup.

Each step solves a linear saddle point problem with momentum block::

    a/dt Mu + 2 nu (E:E) + k_h + s_h + gamma (trE trE) + N(w)

where ``a = 3/2`` for BDF2 and ``w = 2 u^{n-1} - u^{n-2}``; the first step is
one backward Euler step (``a = 1``, ``w = u^0``). The symmetric part is
factorized once per coefficient ``a`` and used to precondition GMRES.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import StokesParams, assemble, assemble_convection, velocity_pattern
from .discretization import Discretization, discretize
from .levelset import LevelSet, Sphere
from .solvers import RESIDUAL_TOL, SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KHConfig:
    """Kelvin-Helmholtz parameters.

    The default ``level = 3`` (32 cells per axis) gives cube size
    ``10/3 / 32 = 0.104``.
    """

    nu: float = 0.5e-5
    delta0: float = 0.05
    cn: float = 1e-2
    aa: float = 1.0
    ma: float = 16.0
    ab: float = 0.1
    mb: float = 20.0
    dt: float = 1.0 / 16.0
    t_end: float = 20.0
    level: int = 3
    k: int = 2
    gamma: float = 1.0

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.nu <= 0 or self.delta0 <= 0:
            raise ValueError("dt, t_end, nu and delta0 must be positive")

    def overrides(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) != f.default}


# ---------------------------------------------------------------- initial data


def surface_curl(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """``n x grad_G psi`` on the unit sphere from an ambient gradient."""
    n = x / np.linalg.norm(x, axis=1, keepdims=True)
    g = grad - np.einsum("ni,ni->n", grad, n)[:, None] * n
    return np.cross(n, g)


def kh_velocity(config: KHConfig, x: np.ndarray) -> np.ndarray:
    """Initial velocity at points near the unit sphere (radial extension)."""
    y = x / np.linalg.norm(x, axis=1, keepdims=True)
    x1, x2, x3 = y.T
    r = np.hypot(x1, x2)
    xi = np.arctan2(x2, x1) / (2 * np.pi)
    xi = np.where(xi >= 0.5, xi - 1.0, xi)
    zeta = np.arcsin(np.clip(x3, -1.0, 1.0)) / np.pi
    pole = r < 1e-12
    rs = np.where(pole, 1.0, r)
    e_xi = np.stack([-x2, x1, np.zeros_like(x1)], axis=1) / rs[:, None]
    base = (np.tanh(2 * zeta / config.delta0) * r)[:, None] * e_xi

    env = np.exp(-(zeta / config.delta0) ** 2)
    ang = config.aa * np.cos(config.ma * np.pi * xi) + config.ab * np.cos(config.mb * np.pi * zeta)
    psi_xi = env * (-config.aa * config.ma * np.pi * np.sin(config.ma * np.pi * xi))
    psi_zeta = -2 * zeta / config.delta0**2 * env * ang \
        - env * config.ab * config.mb * np.pi * np.sin(config.mb * np.pi * zeta)
    # surface gradients of the renormalized coordinates
    g_xi = e_xi / (2 * np.pi * rs[:, None])
    g_zeta = (np.array([0.0, 0.0, 1.0]) - x3[:, None] * y) / (np.pi * rs[:, None])
    grad_psi = psi_xi[:, None] * g_xi + psi_zeta[:, None] * g_zeta
    u = base + config.cn * surface_curl(y, grad_psi)
    u[pole] = 0.0
    return u


def kh_initial(config: KHConfig, disc: Discretization) -> np.ndarray:
    """Nodal interpolant of the initial velocity at the ``Theta_h``-mapped nodes."""
    return kh_velocity(config, disc.theta.mapped_nodes(disc.V)).ravel()


# ---------------------------------------------------------------- energy


@dataclass
class EnergySeries:
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    drift: list = field(default_factory=list)
    alpha: float = math.nan
    window: tuple = (0.0, math.inf)
    error: str | None = None
    stats: dict = field(default_factory=dict)

    def fit(self, window=None) -> float:
        self.window = tuple(window) if window is not None else (0.0, math.inf)
        self.alpha = fit_exponent(self.times, self.energies, self.window)
        return self.alpha

    def as_dict(self) -> dict:
        return asdict(self)


def fit_exponent(times, energies, window=(0.0, math.inf)) -> float:
    """Rate ``alpha`` of the least-squares fit ``E = C exp(-alpha t)``."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 10:
        raise ValueError("need at least 10 samples in the fit window")
    if np.any(e[sel] <= 0):
        raise ValueError("energies must be positive")
    slope, _ = np.polyfit(t[sel], np.log(e[sel]), 1)
    return float(-slope)


# ---------------------------------------------------------------- stepping


class _Stepper:
    def __init__(self, disc: Discretization, nu: float, gamma: float, dt: float):
        self.disc, self.dt = disc, dt
        self.system = assemble(disc, StokesParams(mu=nu, c0=0.0, gamma=gamma))
        self.pattern = velocity_pattern(disc)
        self._tables: list = []
        s = self.system
        m = sp.csr_matrix(s.m[None, :])
        self._lower = sp.bmat([[s.B, -s.C, m.T], [None, m, None]], format="csr")
        self._upper_right = sp.bmat([[s.B.T, None]], format="csr")
        self._prec = {}
        self.refactorizations = 0
        self.nu_, self.np_ = s.n_u, s.n_p

    def _matrix(self, a: float, N=None):
        s = self.system
        mom = (a / self.dt) * s.Mu + s.A
        if N is not None:
            mom = mom + N
        top = sp.hstack([mom, self._upper_right, sp.csr_matrix((self.nu_, 1))])
        return sp.vstack([top, self._lower], format="csc")

    REFRESH_ITERATIONS = 10

    def _factor(self, a, K=None):
        if K is not None or a not in self._prec:
            K0 = self._matrix(a) if K is None else K
            self._prec[a] = spla.splu(K0, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                                      options=dict(SymmetricMode=True))
            self.refactorizations += 1
        return self._prec[a]

    def solve(self, a: float, w: np.ndarray, rhs_u: np.ndarray) -> tuple[np.ndarray, dict]:
        N = assemble_convection(self.disc, w, self.pattern, cache=self._tables)
        K = self._matrix(a, N)
        b = np.concatenate([rhs_u, np.zeros(self.np_ + 1)])
        lu = self._factor(a)
        P = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
        its = [0]
        x, info = spla.gmres(K, b, M=P, rtol=1e-3 * RESIDUAL_TOL, atol=0.0, restart=60,
                             maxiter=20, callback=lambda _: its.__setitem__(0, its[0] + 1),
                             callback_type="pr_norm")
        res = np.linalg.norm(b - K @ x) / max(np.linalg.norm(b), 1e-300)
        if res > RESIDUAL_TOL:
            # fall back to a direct solve of the full nonsymmetric system
            x = spla.spsolve(K, b)
            res = np.linalg.norm(b - K @ x) / max(np.linalg.norm(b), 1e-300)
            if res > RESIDUAL_TOL:
                raise SolverError(f"time step residual {res:.3e}")
        if its[0] > self.REFRESH_ITERATIONS:
            # the convection field drifted; precondition with the current operator
            self._factor(a, K)
        return x[:self.nu_], {"iterations": its[0], "residual": float(res)}


def tangential_drift(disc: Discretization, u: np.ndarray) -> float:
    X = disc.theta.mapped_nodes(disc.V)
    n = disc.phi.normal(X)
    return float(np.max(np.abs(np.einsum("ni,ni->n", u.reshape(-1, 3), n))))


def bdf2_run(config: KHConfig, disc: Discretization | None = None, u0: np.ndarray | None = None,
             phi: LevelSet | None = None, snapshot_every: int = 0, snapshot_cb=None,
             progress=None) -> tuple[EnergySeries, list]:
    """Integrate from ``t = 0`` to ``config.t_end``.

    ``u0`` defaults to the Kelvin-Helmholtz initial field. Snapshots
    ``(t, u)`` are kept every ``snapshot_every`` steps (0 disables) and
    passed to ``snapshot_cb`` if given. On a solver failure the series up
    to that point is returned with ``error`` set.
    """
    t_start = time.perf_counter()
    phi = phi or Sphere()
    if disc is None:
        disc = discretize(phi, config.k, config.level)
    if config.overrides():
        log.info("KH overrides: %s", config.overrides())
    u_prev = kh_initial(config, disc) if u0 is None else np.asarray(u0, dtype=float)
    st = _Stepper(disc, config.nu, config.gamma, config.dt)
    Mu = st.system.Mu
    energy = lambda u: 0.5 * float(u @ (Mu @ u))  # noqa: E731
    series = EnergySeries()
    series.times.append(0.0)
    series.energies.append(energy(u_prev))
    series.drift.append(tangential_drift(disc, u_prev))
    snaps = []

    def snap(n, t, u):
        if snapshot_every and n % snapshot_every == 0:
            snaps.append((t, u.copy()))
            if snapshot_cb is not None:
                snapshot_cb(t, u)

    snap(0, 0.0, u_prev)
    nsteps = int(round(config.t_end / config.dt))
    dt = config.dt
    u_old = None
    its = []
    for n in range(1, nsteps + 1):
        try:
            if u_old is None:
                rhs = Mu @ u_prev / dt
                u_new, info = st.solve(1.0, u_prev, rhs)
            else:
                rhs = Mu @ (4 * u_prev - u_old) / (2 * dt)
                u_new, info = st.solve(1.5, 2 * u_prev - u_old, rhs)
        except (SolverError, RuntimeError) as exc:
            series.error = f"step {n}: {exc}"
            log.error("time stepping failed: %s", series.error)
            break
        its.append(info["iterations"])
        u_old, u_prev = u_prev, u_new
        t = n * dt
        series.times.append(t)
        series.energies.append(energy(u_prev))
        series.drift.append(tangential_drift(disc, u_prev))
        snap(n, t, u_prev)
        if progress is not None:
            progress(n, t, series.energies[-1])
    series.stats = {**disc.stats(), "steps": len(series.times) - 1,
                    "mean_gmres_iterations": float(np.mean(its)) if its else 0.0,
                    "refactorizations": st.refactorizations,
                    "drift_constant": max(series.drift) / disc.h**2,
                    "seconds": time.perf_counter() - t_start}
    if len(series.times) >= 10:
        series.fit()
    return series, snaps


def vorticity(disc: Discretization, u: np.ndarray, cells: np.ndarray, xref: np.ndarray) -> np.ndarray:
    """``n_h . curl u_h`` at reference points ``xref (len(cells), nq, 3)``."""
    from .lagrange import basis

    x, DF = disc.theta.evaluate(cells, xref)
    DFinv = np.linalg.inv(DF)
    b = basis(disc.V.degree)
    G = b.gradients(xref) @ DFinv                               # (c, q, i, d)
    C = u.reshape(-1, 3)[disc.V.cell_dofs[cells]]
    J = np.einsum("cqid,cia->cqad", G, C)                      # d u_a / d x_d
    curl = np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0],
                     J[..., 1, 0] - J[..., 0, 1]], axis=-1)
    # discrete normal from the linear surface pushed through Theta_h
    A = disc.mesh.jacobians[disc.cut.active_tets[cells]]
    vals = disc.cut.vertex_values[disc.mesh.tets[disc.cut.active_tets[cells]]]
    glin = np.linalg.solve(np.transpose(A, (0, 2, 1)), (vals[:, 1:] - vals[:, :1])[:, :, None])[..., 0]
    mref = np.einsum("cji,cj->ci", A, glin)
    nh = np.einsum("cqji,cj->cqi", DFinv, mref)
    nh /= np.linalg.norm(nh, axis=-1, keepdims=True)
    return np.einsum("cqi,cqi->cq", nh, curl)
