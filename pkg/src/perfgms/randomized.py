"""Randomized snapshots computed on oversampled neighborhoods.

Instead of one local solve per boundary DOF, each neighborhood solves only
``k_nb + p_bf`` local problems per field component with Gaussian boundary
data on the enlarged region, adds the extension of constant boundary data,
and restricts everything to the original neighborhood.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gmsfem import RANDOMIZED, SnapshotSet, _surviving_span, harmonic_extension, local_dofs
from .mesher import oversample


@dataclass(frozen=True)
class RandomizedConfig:
    """Sizes and seed for randomized snapshot generation.

    Attributes
    ----------
    k_nb : int
        Target number of basis functions per neighborhood and component.
    p_bf : int
        Extra random snapshots beyond ``k_nb``.
    t : int
        Layers of fine elements added around each neighborhood.
    seed : int
        Global seed; each neighborhood draws from its own derived stream.
    """

    k_nb: int
    p_bf: int = 4
    t: int = 2
    seed: int = 0

    def __post_init__(self):
        if int(self.k_nb) < 1:
            raise ValidationError(f"k_nb must be at least 1, got {self.k_nb}")
        if int(self.p_bf) < 0:
            raise ValidationError(f"p_bf must be nonnegative, got {self.p_bf}")
        if int(self.t) < 0:
            raise ValidationError(f"t must be nonnegative, got {self.t}")

    @property
    def per_component(self):
        """Snapshots per field component, the constant one included."""
        return self.k_nb + self.p_bf + 1


def neighborhood_rng(seed, index):
    """Independent generator for one neighborhood, fixed by ``(seed, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def random_boundary_vectors(ld, count, rng):
    """Standard-normal boundary data, one column per requested snapshot.

    Rows follow ``ld.boundary``.  Columns are drawn row-major from the
    generator so that a larger ``count`` extends rather than reshuffles the
    set obtained with a smaller one.
    """
    if count < 1:
        raise ValidationError(f"count must be at least 1, got {count}")
    return rng.standard_normal((count, len(ld.boundary))).T


def _constant_data(system, ld):
    """Boundary data of the constant function, one column per component."""
    ncomp = system.ncomp
    comp = ld.dofs[ld.boundary] % ncomp
    G = np.zeros((len(ld.boundary), ncomp))
    G[np.arange(len(comp)), comp] = 1.0
    return G


def randomized_snapshots(system, neighborhood, config, mesh=None):
    """Randomized snapshot set for one neighborhood.

    Parameters
    ----------
    system : FineSystem
    neighborhood : Neighborhood
        The original (not oversampled) neighborhood.
    config : RandomizedConfig
    mesh : FineMesh, optional
        Defaults to ``system.mesh``.

    Returns
    -------
    SnapshotSet
        Columns on the DOFs of ``neighborhood``; ``meta`` records the number
        of local solves and of full-snapshot boundary DOFs on the enlarged
        region.
    """
    mesh = system.mesh if mesh is None else mesh
    plus = oversample(neighborhood, config.t, mesh)
    ld = local_dofs(system, plus.fine_elements)
    rng = neighborhood_rng(config.seed, neighborhood.coarse_node)
    count = system.ncomp * (config.k_nb + config.p_bf)
    G = np.hstack([random_boundary_vectors(ld, count, rng), _constant_data(system, ld)])
    cols, extra = harmonic_extension(system, ld, G)
    target = local_dofs(system, neighborhood.fine_elements)
    rows = np.searchsorted(ld.dofs, target.dofs)
    meta = {
        "solves": G.shape[1],
        "full_count": len(ld.boundary),
        "oversample_layers": config.t,
        **extra,
    }
    return SnapshotSet(neighborhood, target.dofs, _surviving_span(system, target, cols[rows]), RANDOMIZED, meta)


def snapshot_fraction(config, neighborhoods, system, per_solve=False):
    """Randomized snapshot count relative to the full boundary-delta set.

    The full set on an enlarged region has one snapshot per boundary DOF.
    By default the randomized count is ``k_nb + p_bf + 1`` per neighborhood,
    so a vector-valued random draw counts once however many field components
    it spans.  With ``per_solve=True`` it is the number of local solves
    actually performed, ``ncomp`` times larger for vector fields.
    """
    used = full = 0
    for nb in neighborhoods:
        plus = oversample(nb, config.t, system.mesh)
        used += config.per_component * (system.ncomp if per_solve else 1)
        full += len(local_dofs(system, plus.fine_elements).boundary)
    if full == 0:
        raise ValidationError("no boundary DOFs in any neighborhood")
    return used / full
