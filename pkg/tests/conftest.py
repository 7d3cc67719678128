"""Shared, cached discretizations (building them dominates test time)."""
from __future__ import annotations

import gc
from functools import lru_cache

import pytest

from tracestokes.analysis import convergence_study
from tracestokes.assembly import StokesParams, assemble
from tracestokes.discretization import discretize
from tracestokes.levelset import Sphere
from tracestokes.manufactured import make_manufactured

SPHERE = Sphere()


@lru_cache(maxsize=None)
def disc(k: int, level: int, pressure_degree: int | None = None):
    return discretize(SPHERE, k, level, pressure_degree=pressure_degree)


@lru_cache(maxsize=None)
def system(k: int, level: int, pressure_degree: int | None = None, parts: tuple = ()):
    return assemble(disc(k, level, pressure_degree), StokesParams(), parts=parts)


@lru_cache(maxsize=None)
def case(name: str):
    return make_manufactured(SPHERE, name)


@lru_cache(maxsize=None)
def study(name: str, k: int, levels: tuple, keep_solutions: bool = False):
    """Convergence rows plus ``{level: (disc, system, solution)}`` if requested."""
    sols = {}

    def keep(level, d, s, sol):
        if keep_solutions:
            sols[level] = (d, s, sol)
    rows = convergence_study(SPHERE, case(name), k, list(levels), callback=keep)
    return rows, sols


@pytest.fixture(scope="session")
def sphere():
    return SPHERE


@pytest.fixture(scope="module", autouse=True)
def _release_caches():
    # level-3 systems are large; keep at most one module's worth alive
    yield
    for f in (study, system, disc):
        f.cache_clear()
    gc.collect()
