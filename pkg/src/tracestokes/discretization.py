"""One-call setup of mesh, cut, parametric map, spaces and geometry."""
from __future__ import annotations

from dataclasses import dataclass

from .cut import CutTopology, classify_and_cut
from .fe_space import DofMap, build_dofmap
from .levelset import LevelSet
from .lift import LiftMode, ParametricMap, SurfaceGeometry, build_theta, surface_geometry
from .mesh import DEFAULT_BOX, LevelSetBundle, TetMesh, build_band_mesh, interpolate_levelset, \
    level_n_per_axis


@dataclass(frozen=True)
class Discretization:
    phi: LevelSet
    mesh: TetMesh
    bundle: LevelSetBundle
    cut: CutTopology
    theta: ParametricMap
    V: DofMap          # scalar velocity space (vector space = 3 interleaved copies)
    Q: DofMap          # pressure space
    geom: SurfaceGeometry

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def k(self) -> int:
        return self.V.degree

    def stats(self) -> dict:
        return {
            "h": self.mesh.h,
            "n_per_axis": self.mesh.n,
            "band_tets": int(self.mesh.n_tets),
            "active_tets": int(len(self.cut.active_tets)),
            "surface_triangles": int(self.cut.n_triangles),
            "velocity_dofs": int(3 * self.V.ndofs),
            "pressure_dofs": int(self.Q.ndofs),
            "lift_displacement_constant": self.theta.disp_constant,
        }


def discretize(phi: LevelSet, k: int, level: int | None = None, *, n_per_axis: int | None = None,
               pressure_degree: int | None = None, mode: LiftMode | str = LiftMode.EXACT,
               box=DEFAULT_BOX, band_width: int = 1) -> Discretization:
    """Build everything needed to assemble on ``{phi = 0}``.

    Velocity degree ``k``; the pressure degree defaults to ``k - 1`` (or 1
    when ``k == 1``). The geometry map always has degree ``k``.
    """
    if n_per_axis is None:
        if level is None:
            raise ValueError("give level or n_per_axis")
        n_per_axis = level_n_per_axis(level)
    if pressure_degree is None:
        pressure_degree = max(k - 1, 1)
    mesh = build_band_mesh(phi, n_per_axis, box=box, band_width=band_width)
    bundle = interpolate_levelset(mesh, phi, k)
    cut = classify_and_cut(mesh, bundle)
    theta = build_theta(mesh, bundle, cut, k, mode)
    V = theta.dofmap
    Q = V if pressure_degree == k else build_dofmap(mesh, cut, pressure_degree)
    geom = surface_geometry(theta, cut, bundle)
    return Discretization(phi, mesh, bundle, cut, theta, V, Q, geom)
