"""Legacy ASCII VTK output (version 2.0, unstructured grids)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .discretization import Discretization
from .lagrange import basis

VTK_TRIANGLE = 5
VTK_TETRA = 10


def _fmt(a: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(a))


def write_unstructured(path, points: np.ndarray, cells: np.ndarray, cell_type: int,
                       point_data: dict | None = None, cell_data: dict | None = None,
                       title: str = "tracestokes") -> Path:
    """Write points, one cell type and scalar/vector data arrays.

    Arrays of shape ``(n,)`` are written as scalars, ``(n, 3)`` as vectors.
    """
    path = Path(path)
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    lines = ["# vtk DataFile Version 2.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(points)} double", _fmt(points)]
    nv = cells.shape[1]
    lines.append(f"CELLS {len(cells)} {len(cells) * (nv + 1)}")
    lines.append("\n".join(f"{nv} " + " ".join(map(str, c)) for c in cells))
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.append("\n".join([str(cell_type)] * len(cells)))
    for section, data, n in (("POINT_DATA", point_data, len(points)),
                             ("CELL_DATA", cell_data, len(cells))):
        if not data:
            continue
        lines.append(f"{section} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"{name}: expected {n} values, got {arr.shape[0]}")
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(arr[:, None])]
            elif arr.shape[1] == 3:
                lines += [f"VECTORS {name} double", _fmt(arr)]
            else:
                raise ValueError(f"{name}: unsupported shape {arr.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_tets(path, mesh, tets=None, cell_data=None) -> Path:
    """Background tetrahedra (all band tets or a subset)."""
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    return write_unstructured(path, mesh.vertices, mesh.tets[tets], VTK_TETRA, cell_data=cell_data)


def _subdivision(s: int):
    """Barycentric lattice of a triangle split into ``s**2`` sub-triangles."""
    pts = [(i / s, j / s) for j in range(s + 1) for i in range(s + 1 - j)]
    idx = {p: n for n, p in enumerate(pts)}
    tris = []
    for j in range(s):
        for i in range(s - j):
            a, b, c = idx[(i / s, j / s)], idx[((i + 1) / s, j / s)], idx[(i / s, (j + 1) / s)]
            tris.append((a, b, c))
            if i + j < s - 1:
                tris.append((b, idx[((i + 1) / s, (j + 1) / s)], c))
    return np.array(pts), np.array(tris)


def surface_samples(disc: Discretization, subdiv: int = 1):
    """Subdivided ``Gamma_h``: points, triangles, parent cells and reference coords."""
    if subdiv < 1:
        raise ValueError("subdiv must be >= 1")
    lat, sub = _subdivision(subdiv)
    R = disc.cut.tri_bary[:, :, 1:]                               # corners in reference coords
    ref = R[:, None, 0] + lat[None, :, 0, None] * (R[:, None, 1] - R[:, None, 0]) \
        + lat[None, :, 1, None] * (R[:, None, 2] - R[:, None, 0])  # (ntri, nlat, 3)
    cells = disc.cut.tri_cell
    x, _ = disc.theta.evaluate(cells, ref)
    ntri, nlat = ref.shape[:2]
    tris = (np.arange(ntri)[:, None, None] * nlat + sub[None]).reshape(-1, 3)
    return x.reshape(-1, 3), tris, cells, ref


def sample_fields(disc: Discretization, cells, ref, u=None, p=None) -> dict:
    out = {}
    if u is not None:
        N = basis(disc.V.degree).values(ref)
        out["velocity"] = np.einsum("tqi,tic->tqc", N, u.reshape(-1, 3)[disc.V.cell_dofs[cells]]).reshape(-1, 3)
    if p is not None:
        N = basis(disc.Q.degree).values(ref)
        out["pressure"] = np.einsum("tqi,ti->tq", N, p[disc.Q.cell_dofs[cells]]).ravel()
    return out


def write_surface(path, disc: Discretization, u=None, p=None, subdiv: int = 1,
                  extra: dict | None = None) -> Path:
    """``Gamma_h`` with optional velocity / pressure point data.

    ``extra`` maps names to callables ``(cells, ref) -> values`` evaluated on
    the sample points, e.g. the vorticity.
    """
    pts, tris, cells, ref = surface_samples(disc, subdiv)
    data = sample_fields(disc, cells, ref, u, p)
    for name, fun in (extra or {}).items():
        v = np.asarray(fun(cells, ref))
        data[name] = v.reshape((len(pts),) + v.shape[2:])
    return write_unstructured(path, pts, tris, VTK_TRIANGLE, point_data=data)
