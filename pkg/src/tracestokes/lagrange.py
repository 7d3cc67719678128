"""Lagrange basis functions on the reference tetrahedron.

The reference tetrahedron has vertices ``0, e1, e2, e3``. Nodes are
equispaced and indexed by barycentric multi-indices ``m`` with
``sum(m) == k``; the node position is ``(m1, m2, m3) / k``.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np

MAX_DEGREE = 5


def multi_indices(k: int) -> np.ndarray:
    """Barycentric multi-indices of the degree-``k`` nodes.

    Ordered vertices first, then edge, face and interior nodes; each group
    is sorted lexicographically (descending) so the order is fixed.
    """
    idx = [m for m in product(range(k, -1, -1), repeat=4) if sum(m) == k]
    idx.sort(key=lambda m: (sum(1 for v in m if v), tuple(-v for v in m)))
    return np.array(idx, dtype=np.int64)


def n_local(k: int) -> int:
    return (k + 1) * (k + 2) * (k + 3) // 6


class LagrangeBasis:
    """Nodal basis of degree ``k`` built from monomials by inverting the
    Vandermonde matrix."""

    def __init__(self, k: int):
        if not 1 <= k <= MAX_DEGREE:
            raise ValueError(f"degree must be in 1..{MAX_DEGREE}, got {k}")
        self.k = k
        self.mi = multi_indices(k)
        self.nodes = self.mi[:, 1:] / k
        self.exponents = np.array(
            [e for e in product(range(k + 1), repeat=3) if sum(e) <= k], dtype=np.int64
        )
        V = self._monomials(self.nodes)
        self.coef = np.linalg.inv(V)  # (n_mono, n_basis)

    @property
    def ndofs(self) -> int:
        return len(self.mi)

    def _monomials(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        return np.prod(x[:, None, :] ** self.exponents[None, :, :], axis=2)

    def values(self, x: np.ndarray) -> np.ndarray:
        """Basis values, shape ``x.shape[:-1] + (nloc,)``."""
        x = np.asarray(x, dtype=float)
        out = self._monomials(x) @ self.coef
        return out.reshape(x.shape[:-1] + (self.ndofs,))

    def gradients(self, x: np.ndarray) -> np.ndarray:
        """Reference gradients, shape ``x.shape[:-1] + (nloc, 3)``."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        e = self.exponents
        pw = [flat[:, None, d] ** np.maximum(e[None, :, d] - 1, 0) for d in range(3)]
        full = [flat[:, None, d] ** e[None, :, d] for d in range(3)]
        out = np.empty((len(flat), self.ndofs, 3))
        for d in range(3):
            dm = e[None, :, d] * pw[d]
            for o in range(3):
                if o != d:
                    dm = dm * full[o]
            out[:, :, d] = dm @ self.coef
        return out.reshape(x.shape[:-1] + (self.ndofs, 3))

    def hessians(self, x: np.ndarray) -> np.ndarray:
        """Reference second derivatives, shape ``x.shape[:-1] + (nloc, 3, 3)``."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        e = self.exponents
        out = np.empty((len(flat), self.ndofs, 3, 3))
        for a in range(3):
            for b in range(a, 3):
                d = np.zeros(3, dtype=np.int64)
                d[a] += 1
                d[b] += 1
                term = np.ones((len(flat), len(e)))
                for c in range(3):
                    ec = e[:, c]
                    fall = np.ones(len(e))
                    for j in range(d[c]):
                        fall = fall * (ec - j)
                    term = term * fall[None, :] * flat[:, None, c] ** np.maximum(ec - d[c], 0)[None, :]
                h = term @ self.coef
                out[:, :, a, b] = h
                out[:, :, b, a] = h
        return out.reshape(x.shape[:-1] + (self.ndofs, 3, 3))


@lru_cache(maxsize=None)
def basis(k: int) -> LagrangeBasis:
    return LagrangeBasis(k)
