"""Generalized multiscale finite elements for PDEs in perforated domains.

Submodules
----------
mesher
    Perforated domains, coarse grids, quality fine meshes and neighborhoods.
linalg
    Sparse factorizations and dense symmetric eigensolvers.
fem
    Element matrices, assembly, boundary data and fine reference solves.
gmsfem
    Snapshot spaces, offline bases, the coarse space and coarse solves.
randomized
    Randomized snapshots on oversampled neighborhoods.
harness
    Presets, configuration, error sweeps and file export.
"""
from . import fem, gmsfem, harness, linalg, mesher, randomized
from .errors import PerfGmsError, SolverError, ValidationError
from .fem import Elasticity, Laplace, Stokes, assemble, fine_solve
from .harness import ExperimentConfig, run_experiment
from .mesher import build_coarse_grid, build_domain, generate_fine_mesh

__all__ = [
    "fem",
    "gmsfem",
    "harness",
    "linalg",
    "mesher",
    "randomized",
    "PerfGmsError",
    "SolverError",
    "ValidationError",
    "Elasticity",
    "Laplace",
    "Stokes",
    "assemble",
    "fine_solve",
    "ExperimentConfig",
    "run_experiment",
    "build_coarse_grid",
    "build_domain",
    "generate_fine_mesh",
]
