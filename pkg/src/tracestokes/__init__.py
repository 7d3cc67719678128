"""Parametric trace Taylor-Hood finite elements for surface Stokes and Navier-Stokes."""
from __future__ import annotations

__version__ = "0.1.0"

from .analysis import (ConvergenceRow, best_approximation, closest_point, convergence_study, eoc,
                       error_norms, geometry_report, interpolation_errors, korn_hodge_check)
from .assembly import StokesParams, StokesSystem, assemble, assemble_convection, assemble_rhs
from .cut import CutTopology, classify_and_cut, regular_fraction
from .discretization import Discretization, discretize
from .fe_space import DofMap, build_dofmap, eval_basis, interpolate_on_surface, push_gradients
from .levelset import Ellipsoid, LevelSet, Plane, Sphere, make_levelset
from .lift import LiftMode, ParametricMap, build_theta, exact_geometry_providers, surface_geometry
from .manufactured import ManufacturedCase, make_manufactured
from .mesh import LevelSetBundle, TetMesh, build_band_mesh, eval_phi_hat, interpolate_levelset
from .quadrature import QuadRule, tet_rule, triangle_rule
from .solvers import EigenReport, SaddleSolution, smallest_positive_eig, solve_saddle
from .unsteady import EnergySeries, KHConfig, bdf2_run, fit_exponent, kh_initial

__all__ = [
    "ConvergenceRow", "CutTopology", "Discretization", "DofMap", "EigenReport", "Ellipsoid",
    "EnergySeries", "KHConfig", "LevelSet", "LevelSetBundle", "LiftMode", "ManufacturedCase",
    "ParametricMap", "Plane", "QuadRule", "SaddleSolution", "Sphere", "StokesParams",
    "StokesSystem", "TetMesh", "assemble", "assemble_convection", "assemble_rhs", "bdf2_run",
    "best_approximation", "build_band_mesh", "build_dofmap", "build_theta", "classify_and_cut",
    "closest_point", "convergence_study", "discretize", "eoc", "error_norms", "eval_basis",
    "eval_phi_hat", "exact_geometry_providers", "fit_exponent", "geometry_report",
    "interpolate_levelset", "interpolate_on_surface", "interpolation_errors", "kh_initial",
    "korn_hodge_check", "make_levelset", "make_manufactured", "push_gradients",
    "regular_fraction", "smallest_positive_eig", "solve_saddle", "surface_geometry",
    "tet_rule", "triangle_rule",
]
