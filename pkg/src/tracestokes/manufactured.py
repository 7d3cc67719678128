"""Manufactured solutions of the surface Stokes problem.

Data are produced by a finite-difference tangential-calculus oracle: every
surface field is extended constantly along normals (composition with the
closest-point map) and ambient derivatives are taken by fourth-order
central differences. Surface operators then follow from the tangential
projection ``P = I - n n^T``::

    grad_G p  = P grad p
    grad_G u  = P (grad u) P
    E(u)      = sym(grad_G u)
    f         = -P div_G E(u) + u + grad_G p
    g         = div_G u = tr(P grad u)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .levelset import LevelSet

FD_STEP = 1e-4
# step of the outer difference in the nested div(E); with 1e-4 the
# roundoff of the inner difference (~1e-12) is amplified to ~1e-8
NESTED_STEP = 1e-3
CATALOG = ("killing", "harmonic2", "generic")
# points per block in the data evaluators; the nested stencil of f touches
# 144 shifted copies of each point
BLOCK = 4096

Field = Callable[[np.ndarray], np.ndarray]


def fd_jacobian(fun: Field, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Fourth-order central-difference Jacobian.

    ``fun`` maps ``(N, 3)`` to ``(N, ...)``; the result has shape
    ``(N, ..., 3)`` with the derivative direction last.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    offsets = np.array([2.0, 1.0, -1.0, -2.0]) * step
    coef = np.array([-1.0, 8.0, -8.0, 1.0]) / (12.0 * step)
    shifted = x[None, None] + offsets[:, None, None, None] * np.eye(3)[None, :, None, :]
    vals = fun(shifted.reshape(-1, 3))
    vals = vals.reshape((4, 3, n) + vals.shape[1:])
    jac = np.tensordot(coef, vals, axes=(0, 0))          # (3, N, ...)
    return np.moveaxis(jac, 0, -1)


def _blockwise(fun: Field, x: np.ndarray, block: int = BLOCK) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    if len(x) <= block:
        return fun(x)
    return np.concatenate([fun(x[i:i + block]) for i in range(0, len(x), block)])


def _projector(n: np.ndarray) -> np.ndarray:
    return np.eye(3) - n[..., :, None] * n[..., None, :]


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact velocity and pressure on ``Gamma`` and the matching data.

    ``u_surf`` and ``p_surf`` are defined for points on the surface; all
    public evaluators accept arbitrary points near the surface and use the
    closest-point extension.
    """

    name: str
    phi: LevelSet
    u_surf: Field
    p_surf: Field
    step: float = FD_STEP
    nested_step: float = NESTED_STEP

    def cp(self, x):
        return self.phi.closest_point(np.asarray(x, dtype=float))

    def u(self, x):
        return self.u_surf(self.cp(x))

    def p(self, x):
        return self.p_surf(self.cp(x))

    def grad_u(self, x):
        """Ambient Jacobian of the extended velocity, ``(N, 3, 3)``."""
        return _blockwise(lambda y: fd_jacobian(self.u, y, self.step), x)

    def grad_p(self, x):
        return _blockwise(lambda y: fd_jacobian(self.p, y, self.step), x)

    def strain(self, x):
        """``E(u)`` of the extension, with ``P`` taken at ``x`` itself."""
        x = np.asarray(x, dtype=float)
        P = _projector(self.phi.normal(x))
        G = P @ self.grad_u(x) @ P
        return 0.5 * (G + np.swapaxes(G, 1, 2))

    def f(self, x):
        return _blockwise(self._f, x)

    def g(self, x):
        return _blockwise(self._g, x)

    def _f(self, x):
        y = self.cp(x)
        P = _projector(self.phi.normal(y))
        dE = fd_jacobian(self.strain, y, self.nested_step)          # (N, 3, 3, 3): d_k E_ij
        div_E = np.einsum("njk,nijk->ni", P, dE)
        return (-np.einsum("nij,nj->ni", P, div_E) + self.u_surf(y)
                + np.einsum("nij,nj->ni", P, self.grad_p(y)))

    def _g(self, x):
        y = self.cp(x)
        P = _projector(self.phi.normal(y))
        return np.einsum("nij,nji->n", P, self.grad_u(y))


def _killing(phi):
    def u(y):
        return np.stack([-y[:, 1], y[:, 0], np.zeros(len(y))], axis=1)

    def p(y):
        return y[:, 0] * y[:, 1]
    return u, p


def _harmonic2(phi):
    def u(y):
        n = phi.normal(y)
        return np.cross(n, np.stack([y[:, 1], y[:, 0], np.zeros(len(y))], axis=1))

    def p(y):
        return y[:, 2].copy()
    return u, p


def _generic(phi):
    def u(y):
        n = phi.normal(y)
        v = np.stack([-y[:, 1] ** 2, y[:, 0], y[:, 2]], axis=1)
        return v - np.einsum("ni,ni->n", v, n)[:, None] * n

    def p(y):
        # x1^3 and x2 x3 both integrate to zero over a sphere centred at 0
        return y[:, 0] ** 3 + y[:, 1] * y[:, 2]
    return u, p


_BUILDERS = {"killing": _killing, "harmonic2": _harmonic2, "generic": _generic}


def make_manufactured(phi: LevelSet, name: str, step: float = FD_STEP,
                      nested_step: float = NESTED_STEP) -> ManufacturedCase:
    """Catalog case ``name`` on the surface ``{phi = 0}``.

    The catalog is designed for the unit sphere: ``killing`` is the
    rotation about ``e3`` and ``harmonic2`` the curl of ``x1 x2``.
    """
    try:
        build = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {', '.join(CATALOG)}") from None
    u, p = build(phi)
    return ManufacturedCase(name, phi, u, p, step, nested_step)


def killing_closed_form(x: np.ndarray):
    """``(f, g)`` of the killing case on the unit sphere in closed form."""
    y = x / np.linalg.norm(x, axis=1, keepdims=True)
    u = np.stack([-y[:, 1], y[:, 0], np.zeros(len(y))], axis=1)
    gp = np.stack([y[:, 1], y[:, 0], np.zeros(len(y))], axis=1)
    gp -= np.einsum("ni,ni->n", gp, y)[:, None] * y
    return u + gp, np.zeros(len(y))
