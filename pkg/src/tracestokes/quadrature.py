"""Quadrature on the reference triangle and tetrahedron.

Rules are conical (collapsed) Gauss-Jacobi products: positive weights and
exact for polynomials up to the requested degree.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 14


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray    # (nq, dim) reference coordinates
    weights: np.ndarray   # (nq,)
    degree: int

    def __len__(self):
        return len(self.weights)


def _gauss_jacobi01(n: int, alpha: int):
    # nodes/weights on [0, 1] for the weight (1 - x)^alpha
    t, w = roots_jacobi(n, alpha, 0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1)


def _check(degree):
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """Rule on ``{x, y >= 0, x + y <= 1}`` (area 1/2)."""
    _check(degree)
    n = max(1, (degree + 2) // 2)
    x, wx = _gauss_jacobi01(n, 1)
    s, ws = _gauss_jacobi01(n, 0)
    X, S = np.meshgrid(x, s, indexing="ij")
    pts = np.stack([X.ravel(), ((1.0 - X) * S).ravel()], axis=1)
    w = np.outer(wx, ws).ravel()
    return QuadRule(pts, w, degree)


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> QuadRule:
    """Rule on the reference tetrahedron (volume 1/6)."""
    _check(degree)
    n = max(1, (degree + 2) // 2)
    x, wx = _gauss_jacobi01(n, 2)
    v, wv = _gauss_jacobi01(n, 1)
    s, ws = _gauss_jacobi01(n, 0)
    X, V, S = np.meshgrid(x, v, s, indexing="ij")
    pts = np.stack([X.ravel(), ((1 - X) * V).ravel(), ((1 - X) * (1 - V) * S).ravel()], axis=1)
    w = (wx[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
    return QuadRule(pts, w, degree)
