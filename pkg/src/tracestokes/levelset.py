"""Analytic level set functions.

Every level set evaluates on arrays of points with shape ``(N, 3)`` and
returns values ``(N,)``, gradients ``(N, 3)`` and Hessians ``(N, 3, 3)``.
"""
from __future__ import annotations

import numpy as np


class ClosestPointError(RuntimeError):
    pass


class LevelSet:
    """Base class for a smooth level set function ``phi``.

    Subclasses implement :meth:`value`, :meth:`gradient` and :meth:`hessian`.
    ``closed`` tells whether the zero level is a closed surface.
    """

    closed = True
    name = "levelset"

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, x: np.ndarray) -> np.ndarray:
        g = self.gradient(x)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def weingarten(self, x: np.ndarray) -> np.ndarray:
        """Shape operator of the level surface of ``phi`` through ``x``.

        Computed as ``P hess(phi) P / |grad phi|``; for a signed distance
        function this is the Hessian of the distance.
        """
        g = self.gradient(x)
        gn = np.linalg.norm(g, axis=-1)
        n = g / gn[:, None]
        P = np.eye(3) - n[:, :, None] * n[:, None, :]
        return P @ self.hessian(x) @ P / gn[:, None, None]

    def closest_point(self, x: np.ndarray, tol: float = 1e-13,
                      maxiter: int = 50) -> np.ndarray:
        """Closest point on ``{phi = 0}`` by damped Newton.

        Solves the optimality system ``y - x + mu grad phi(y) = 0``,
        ``phi(y) = 0`` for ``(y, mu)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = x.copy()
        g = self.gradient(y)
        mu = -self.value(y) / np.einsum("ij,ij->i", g, g)
        y = x + mu[:, None] * g

        def residual(y, mu):
            r = np.empty((len(y), 4))
            r[:, :3] = y - x + mu[:, None] * self.gradient(y)
            r[:, 3] = self.value(y)
            return r

        r = residual(y, mu)
        scale = 1.0 + np.linalg.norm(x, axis=1)
        for _ in range(maxiter):
            rn = np.linalg.norm(r, axis=1)
            todo = rn > tol * scale
            if not todo.any():
                return y
            J = np.zeros((len(y), 4, 4))
            g = self.gradient(y)
            J[:, :3, :3] = np.eye(3) + mu[:, None, None] * self.hessian(y)
            J[:, :3, 3] = g
            J[:, 3, :3] = g
            step = np.linalg.solve(J, -r[:, :, None])[:, :, 0]
            t = np.ones(len(y))
            for _ in range(30):
                yt = y + t[:, None] * step[:, :3]
                mut = mu + t * step[:, 3]
                rt = residual(yt, mut)
                bad = (np.linalg.norm(rt, axis=1) > (1 - 1e-4 * t) * rn) & todo & (t > 1e-8)
                if not bad.any():
                    break
                t[bad] *= 0.5
            upd = todo
            y[upd] = yt[upd]
            mu[upd] = mut[upd]
            r[upd] = rt[upd]
        if np.any(np.linalg.norm(r, axis=1) > 1e3 * tol * scale):
            raise ClosestPointError("closest point Newton iteration did not converge")
        return y


class Sphere(LevelSet):
    """``phi(x) = |x - c| - R``, the signed distance to a sphere."""

    name = "sphere"

    def __init__(self, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)

    def value(self, x):
        return np.linalg.norm(np.asarray(x) - self.center, axis=-1) - self.radius

    def gradient(self, x):
        y = np.asarray(x) - self.center
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def hessian(self, x):
        y = np.asarray(x) - self.center
        r = np.linalg.norm(y, axis=-1)
        n = y / r[:, None]
        return (np.eye(3) - n[:, :, None] * n[:, None, :]) / r[:, None, None]

    def closest_point(self, x, tol=1e-13, maxiter=50):
        y = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        return self.center + self.radius * y / np.linalg.norm(y, axis=-1, keepdims=True)


class Plane(LevelSet):
    """``phi(x) = n . x - offset`` with unit normal ``n``."""

    closed = False
    name = "plane"

    def __init__(self, normal=(0.0, 0.0, 1.0), offset: float = 0.0):
        n = np.asarray(normal, dtype=float)
        self.n = n / np.linalg.norm(n)
        self.offset = float(offset)

    def value(self, x):
        return np.asarray(x) @ self.n - self.offset

    def gradient(self, x):
        return np.broadcast_to(self.n, np.shape(x)).copy()

    def hessian(self, x):
        return np.zeros(np.shape(x)[:-1] + (3, 3))

    def closest_point(self, x, tol=1e-13, maxiter=50):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x - self.value(x)[:, None] * self.n


class Ellipsoid(LevelSet):
    """``phi(x) = sum (x_i / a_i)^2 - 1``; not a distance function."""

    name = "ellipsoid"

    def __init__(self, axes=(1.0, 1.0, 1.0)):
        self.axes = np.asarray(axes, dtype=float)

    def value(self, x):
        return np.sum((np.asarray(x) / self.axes) ** 2, axis=-1) - 1.0

    def gradient(self, x):
        return 2.0 * np.asarray(x) / self.axes**2

    def hessian(self, x):
        H = np.diag(2.0 / self.axes**2)
        return np.broadcast_to(H, np.shape(x)[:-1] + (3, 3)).copy()


def make_levelset(name: str) -> LevelSet:
    if name == "sphere":
        return Sphere()
    if name == "plane":
        return Plane()
    if name == "ellipsoid":
        return Ellipsoid((1.2, 1.0, 0.8))
    raise ValueError(f"unknown level set {name!r}")
