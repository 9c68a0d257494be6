"""Snapshot spaces, local spectral decomposition and the coarse solve.

Per coarse node ``i`` the offline pipeline is

1. a snapshot space on the neighborhood (harmonic extensions of boundary
   deltas, or every local fine function),
2. the pencil ``A_off v = lam S_off v`` in snapshot coordinates, keeping the
   eigenvectors of the smallest eigenvalues,
3. multiplication by the coarse hat function of node ``i`` so the global
   basis functions are conforming.

The basis coefficient vectors form the rows of ``R0``; the coarse system is
``R0 A R0^T u0 = R0 F`` and the fine-scale reconstruction is ``R0^T u0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import linalg
from .errors import (
    CoarseInfSupFailure,
    DimensionMismatch,
    NotPositiveDefinite,
    RankDeficientCoarseSpace,
    SingularCoarseMatrix,
    SingularLocalSystem,
    SingularMatrix,
    ValidationError,
)
from .fem import DIRICHLET, Stokes, node_dofs, stokes_saddle
from .mesher import OUTER, PERFORATION, patch_boundary_edges

HARMONIC, SPECTRAL, RANDOMIZED = "harmonic", "spectral", "randomized"


@dataclass(frozen=True, eq=False)
class LocalDofs:
    """DOF-level view of a patch for a given fine system.

    ``dofs`` are sorted global DOF indices; ``boundary``, ``perforation``,
    ``interior`` are positions into ``dofs``.
    """

    elements: np.ndarray
    nodes: np.ndarray
    dofs: np.ndarray
    boundary: np.ndarray
    perforation: np.ndarray
    interior: np.ndarray

    @property
    def free(self):
        """Positions of DOFs that are not perforation-constrained."""
        mask = np.ones(len(self.dofs), dtype=bool)
        mask[self.perforation] = False
        return np.flatnonzero(mask)


def local_dofs(system, elements):
    space = system.space
    ncomp = system.ncomp
    elements = np.asarray(elements)
    nodes = np.unique(space.cells[elements])
    bedges = patch_boundary_edges(system.mesh, elements)
    bnodes = np.unique(bedges)
    if space.degree == 2:
        bnodes = np.union1d(bnodes, space.midpoints_of(bedges))
    bnodes = bnodes[space.markers[bnodes] != PERFORATION]
    if system.operator.perforation_bc == DIRICHLET or isinstance(system.operator, Stokes):
        pnodes = nodes[space.markers[nodes] == PERFORATION]
    else:
        pnodes = np.zeros(0, dtype=np.int64)
    dofs = node_dofs(nodes, ncomp)
    pos = lambda sub: np.searchsorted(dofs, node_dofs(sub, ncomp))  # noqa: E731
    boundary = pos(bnodes)
    perforation = pos(pnodes)
    mask = np.ones(len(dofs), dtype=bool)
    mask[boundary] = False
    mask[perforation] = False
    return LocalDofs(elements, nodes, dofs, boundary, perforation, np.flatnonzero(mask))


@dataclass(eq=False)
class SnapshotSet:
    """Snapshot columns on the DOFs of a neighborhood's base patch.

    ``dofs`` are the global fine DOFs indexing the rows of ``columns``.
    """

    neighborhood: object
    dofs: np.ndarray
    columns: np.ndarray
    provenance: str
    meta: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.columns.shape[1]


def _element_components(system, elements):
    """Edge-connected components of a patch, as a label per element."""
    tris = system.mesh.triangles[elements]
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    owner = np.tile(np.arange(len(tris)), 3)
    key = e[:, 0] * system.mesh.n_nodes + e[:, 1]
    order = np.argsort(key, kind="stable")
    ks, os_ = key[order], owner[order]
    same = ks[1:] == ks[:-1]
    a, b = os_[:-1][same], os_[1:][same]
    graph = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(len(tris), len(tris)))
    return connected_components(graph, directed=False)


class _LocalStokes:
    """Local Taylor-Hood saddle point on a patch with velocity fixed on its boundary.

    Pressures are the P1 vertices of the patch, gauged by one mean-zero
    constraint per connected component.  ``flux`` holds, per component, the
    net-flux functional of boundary velocity data.
    """

    def __init__(self, system, ld):
        A = system.local_matrix("A", ld.elements, ld.dofs)
        pnodes = np.unique(system.mesh.triangles[ld.elements])
        B = system.local_divergence(ld.elements, ld.dofs, pnodes)
        n_conn, labels = _element_components(system, ld.elements)
        Pc = np.zeros((len(pnodes), n_conn))
        tri_p = np.searchsorted(pnodes, system.mesh.triangles[ld.elements])
        Pc[tri_p.ravel(), np.repeat(labels, 3)] = 1.0
        flux = (Pc.T @ B[:, ld.boundary].toarray()).T
        self.flux = flux[:, np.abs(flux).sum(axis=0) > 0]
        Mp = np.asarray(sp.csr_matrix(
            (np.ones(tri_p.size), (tri_p.ravel(), np.repeat(np.arange(len(ld.elements)), 3))),
            shape=(len(pnodes), len(ld.elements)),
        ) @ (system.mesh.areas()[ld.elements] / 3.0)).ravel()
        W = sp.csr_matrix(Pc * Mp[:, None])
        I = ld.interior
        K = sp.bmat([[A[I][:, I], -B[:, I].T, None], [-B[:, I], None, W], [None, W.T, None]], format="csc")
        try:
            self._solve = linalg.factor_sym_indefinite(K)
        except SingularMatrix as exc:
            raise SingularLocalSystem(str(exc)) from None
        self.K, self.B, self.pnodes, self.n_gauge = K, B, pnodes, W.shape[1]

    def solve(self, f_velocity, g_pressure):
        """Solve with momentum load ``f_velocity`` (interior rows) and divergence load ``g_pressure``."""
        m = f_velocity.shape[1]
        rhs = np.vstack([f_velocity, g_pressure, np.zeros((self.n_gauge, m))])
        x = self._solve(rhs)
        return x + self._solve(rhs - self.K @ x)


def harmonic_extension(system, ld, boundary_values):
    """Extend boundary data into a patch by solving the homogeneous local problem.

    Parameters
    ----------
    system : FineSystem
    ld : LocalDofs
        The patch; its ``boundary`` positions carry the data.
    boundary_values : ndarray, shape (len(ld.boundary), m)

    Returns
    -------
    columns : ndarray, shape (len(ld.dofs), m)
        Extensions; zero on perforation-constrained DOFs.
    extra : dict
        ``boundary_values`` actually imposed.  For Stokes the data is first
        projected to zero net flux on each connected component of the patch,
        and the local pressures are returned as well.
    """
    G = np.asarray(boundary_values, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if len(ld.boundary) == 0:
        raise SingularLocalSystem("neighborhood has no boundary DOFs")
    if G.shape[0] != len(ld.boundary):
        raise DimensionMismatch(f"{G.shape[0]} boundary values for {len(ld.boundary)} boundary DOFs")
    n, m = len(ld.dofs), G.shape[1]
    A = system.local_matrix("A", ld.elements, ld.dofs)
    I, D = ld.interior, ld.boundary
    out = np.zeros((n, m))
    extra = {}
    if isinstance(system.operator, Stokes):
        loc = _LocalStokes(system, ld)
        if loc.flux.shape[1]:
            Qc, _ = np.linalg.qr(loc.flux)
            G = G - Qc @ (Qc.T @ G)
        X = loc.solve(-(A[I][:, D] @ G), loc.B[:, D] @ G)
        out[I] = X[: len(I)]
        extra["pressure"] = X[len(I): len(I) + len(loc.pnodes)]
        extra["pressure_nodes"] = loc.pnodes
    else:
        try:
            solve = linalg.factor_spd(A[I][:, I])
        except (NotPositiveDefinite, SingularMatrix) as exc:
            raise SingularLocalSystem(str(exc)) from None
        if len(I):
            out[I] = solve(-(A[I][:, D] @ G))
    out[D] = G
    extra["boundary_values"] = G
    return out, extra


def _surviving_span(system, ld, cols, tol=1e-10):
    """Drop snapshot combinations that the coarse assembly would zero out.

    The hat function of the patch's coarse node vanishes on the patch
    boundary away from the outer boundary, and Dirichlet DOFs are zeroed, so
    only values elsewhere reach the global basis.  Combinations vanishing
    there (bare boundary spikes, or pairs of boundary DOFs cancelling on a
    shared interior neighbor) are projected out.
    """
    bdofs = ld.dofs[ld.boundary]
    on_outer = system.space.markers[bdofs // system.ncomp] == OUTER
    fixed = np.isin(bdofs, system.dirichlet_dofs)
    seen = np.ones(len(ld.dofs), dtype=bool)
    seen[ld.boundary[~on_outer | fixed]] = False
    seen[ld.perforation] = False
    W = cols[seen]
    if W.size == 0:
        return cols[:, :0]
    _, sv, Vt = np.linalg.svd(W, full_matrices=False)
    r = int(np.count_nonzero(sv > tol * sv[0])) if sv[0] > 0 else 0
    if r == cols.shape[1]:
        return cols
    return cols @ Vt[:r].T


def snapshot_harmonic(system, neighborhood, oversampled=None):
    """Harmonic-extension snapshots of every boundary delta.

    One column per boundary DOF of the snapshot patch (so two per boundary
    node for vector fields), less any combinations that vanish wherever the
    partition of unity and boundary conditions let them through.  With ``oversampled`` (an enlarged neighborhood
    containing ``neighborhood``) the extensions are computed there and
    restricted to the original patch.
    """
    source = neighborhood if oversampled is None else oversampled
    ld = local_dofs(system, source.fine_elements)
    cols, extra = harmonic_extension(system, ld, np.eye(len(ld.boundary)))
    target = local_dofs(system, neighborhood.fine_elements) if oversampled is not None else ld
    rows = np.searchsorted(ld.dofs, target.dofs)
    meta = {"source_dofs": ld.dofs, "source_columns": cols, **extra}
    return SnapshotSet(neighborhood, target.dofs, _surviving_span(system, target, cols[rows]), HARMONIC, meta)


def snapshot_spectral(system, neighborhood):
    """All local fine basis functions (identity on non-perforation DOFs)."""
    ld = local_dofs(system, neighborhood.fine_elements)
    free = ld.free
    cols = np.zeros((len(ld.dofs), len(free)))
    cols[free, np.arange(len(free))] = 1.0
    return SnapshotSet(neighborhood, ld.dofs, cols, SPECTRAL)


def local_forms(system, neighborhood, snapshots):
    """Offline matrices ``(A_off, S_off)`` in snapshot coordinates."""
    if snapshots.count == 0:
        raise DimensionMismatch("empty snapshot set")
    ld = local_dofs(system, neighborhood.base_elements)
    if len(snapshots.dofs) != len(ld.dofs) or not np.array_equal(snapshots.dofs, ld.dofs):
        raise DimensionMismatch("snapshot rows do not match the neighborhood DOFs")
    A = system.local_matrix("A", ld.elements, ld.dofs)
    S = system.local_matrix("S", ld.elements, ld.dofs)
    P = snapshots.columns
    return P.T @ (A @ P), P.T @ (S @ P)


@dataclass(eq=False)
class OfflineBasis:
    """Smallest-eigenvalue modes of one neighborhood's offline pencil."""

    neighborhood: object
    dofs: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    insufficient: bool = False

    @property
    def M_off(self):
        return self.vectors.shape[1]

    def truncate(self, m):
        short = m > len(self.eigenvalues)
        return OfflineBasis(self.neighborhood, self.dofs, self.eigenvalues[:m], self.vectors[:, :m],
                            self.insufficient or short)


def select_offline(A_off, S_off, M_off, rank_tol=1e-10):
    """Smallest ``M_off`` eigenpairs of ``A_off v = lam S_off v``.

    Returns ``(eigenvalues, coordinates, insufficient)``; when the retained
    rank is below ``M_off`` all available pairs are returned and the flag
    is set.
    """
    if M_off < 1:
        raise ValidationError("M_off must be at least 1")
    lam, V = linalg.eig_sym_generalized(A_off, S_off, rank_tol)
    insufficient = len(lam) < M_off
    return lam[:M_off], V[:, :M_off], insufficient


def offline_basis(system, neighborhood, snapshots, M_off=None, rank_tol=1e-10, orth_tol=1e-10):
    """Offline basis of a neighborhood, mapped back to fine DOFs.

    Non-identity snapshot sets are orthonormalized first (span-preserving) to
    keep the pencil well scaled.  ``M_off=None`` keeps every eigenpair.
    """
    P = snapshots.columns
    if snapshots.provenance != SPECTRAL:
        P, _ = linalg.orthonormalize_cols(P, orth_tol)
        snapshots = SnapshotSet(snapshots.neighborhood, snapshots.dofs, P, snapshots.provenance, snapshots.meta)
    A_off, S_off = local_forms(system, neighborhood, snapshots)
    m = A_off.shape[0] if M_off is None else M_off
    lam, Y, insufficient = select_offline(A_off, S_off, m, rank_tol)
    vectors = linalg.fix_signs(P @ Y)
    return OfflineBasis(neighborhood, snapshots.dofs, lam, vectors, insufficient)


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Coarse hat functions sampled at the nodes of a fine space, shape (n_coarse, n_nodes)."""

    chi: np.ndarray

    def __getitem__(self, i):
        return self.chi[i]


def build_pou(coarse, space):
    """Nodal interpolants of the coarse P1 hat functions on a fine space."""
    tri, bary = coarse.barycentric(space.coords)
    bary = np.clip(bary, 0.0, 1.0)
    bary /= bary.sum(axis=1, keepdims=True)
    chi = np.zeros((len(coarse.nodes), space.n_nodes))
    cols = np.arange(space.n_nodes)
    for k in range(3):
        np.add.at(chi, (coarse.triangles[tri, k], cols), bary[:, k])
    chi[np.abs(chi) < 1e-15] = 0.0
    return PartitionOfUnity(chi)


@dataclass(eq=False)
class GlobalCoarseSpace:
    """Coarse-to-fine map.

    ``R0`` has one row per coarse basis function over all fine DOFs (zero on
    Dirichlet DOFs); ``R`` is its restriction to the free DOFs.
    """

    R0: sp.csr_matrix
    R: sp.csr_matrix
    owner: np.ndarray
    compressed: bool = False
    insufficient: int = 0

    @property
    def dim(self):
        return self.R0.shape[0]


def assemble_R0(bases, pou, system, check_rank=True, compress=False, rank_tol=1e-10):
    """Global coarse space from per-node offline bases.

    Basis function ``(i, k)`` is ``chi_i * psi_k(i)`` evaluated nodally, zeroed
    on Dirichlet DOFs.  With ``compress=True`` a rank-deficient space is replaced by an orthonormal
    (mass inner product) basis of its span instead of raising.
    """
    ncomp = system.ncomp
    fixed = np.zeros(system.n_dofs, dtype=bool)
    fixed[system.dirichlet_dofs] = True
    rows, cols, vals, owner = [], [], [], []
    r = 0
    for basis in bases:
        node = basis.neighborhood.coarse_node
        V = basis.vectors * pou.chi[node][basis.dofs // ncomp][:, None]
        V[fixed[basis.dofs]] = 0.0
        k, j = np.nonzero(V.T)
        rows.append(r + k)
        cols.append(basis.dofs[j])
        vals.append(V[j, k])
        owner.extend([node] * V.shape[1])
        r += V.shape[1]
    if r == 0:
        raise RankDeficientCoarseSpace("empty coarse space")
    R0 = linalg.csr_from_triplets(
        r, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), shape=(r, system.n_dofs)
    )
    owner = np.array(owner)
    free = system.free_dofs
    R = R0[:, free].tocsr()
    if not (check_rank or compress):
        return GlobalCoarseSpace(R0, R, owner)
    Mff = system.M[free][:, free]
    Gram = (R @ Mff @ R.T).toarray()
    rank = linalg.pivoted_cholesky_rank(Gram, rank_tol)
    if rank == r:
        return GlobalCoarseSpace(R0, R, owner)
    if not compress:
        raise RankDeficientCoarseSpace(f"coarse space has rank {rank} < {r}")
    g, V = np.linalg.eigh(0.5 * (Gram + Gram.T))
    keep = g > rank_tol * g.max()
    T = sp.csr_matrix((V[:, keep] / np.sqrt(g[keep])).T)
    R = (T @ R).tocsr()
    embed = sp.csr_matrix((np.ones(len(free)), (np.arange(len(free)), free)), shape=(len(free), system.n_dofs))
    return GlobalCoarseSpace((R @ embed).tocsr(), R, np.full(R.shape[0], -1), compressed=True)


def _dense_spd_solve(K, b):
    K = 0.5 * (K + K.T)
    try:
        c = sla.cho_factor(K)
    except np.linalg.LinAlgError as exc:
        raise SingularCoarseMatrix(f"coarse matrix is not positive definite: {exc}") from None
    d = np.diag(c[0])
    if d.min() <= 1e-10 * d.max():
        raise SingularCoarseMatrix("coarse matrix is numerically singular")
    return sla.cho_solve(c, b)


def galerkin(R, A):
    """Dense ``R A R^T`` for sparse ``A``.

    ``A R^T`` is formed sparse-times-dense; a mostly filled ``R`` (as after
    compression) is densified so the outer product runs through BLAS.
    """
    AR = A @ R.T.toarray()
    if R.nnz > 0.1 * R.shape[0] * R.shape[1]:
        return R.toarray() @ AR
    return np.asarray(R @ AR)


def coarse_solve(space, system):
    """Galerkin solve in the coarse space and downscale to the fine grid.

    Returns ``(u0, u_ms)`` where ``u_ms = R0^T u0 + lift`` over all fine DOFs.
    """
    if isinstance(system.operator, Stokes):
        raise ValidationError("use coarse_solve_stokes for the Stokes operator")
    free, d = system.free_dofs, system.dirichlet_dofs
    g = system.lift()
    Af = system.A[free]
    rhs = system.F[free] - Af[:, d] @ g[d]
    K0 = galerkin(space.R, Af[:, free])
    u0 = _dense_spd_solve(K0, space.R @ rhs)
    u = g.copy()
    u[free] = space.R.T @ u0
    return u0, u


@dataclass(frozen=True, eq=False)
class PressureSpace:
    """Pressure trial space for the coarse Stokes solve.

    ``B`` holds ``int q_k div v`` for every velocity DOF, ``weights`` the
    integrals of ``q_k`` (mean-zero gauge) and ``to_fine`` maps coefficients
    to fine P1 nodal pressure.
    """

    B: sp.csr_matrix
    weights: np.ndarray
    to_fine: sp.csr_matrix
    name: str

    @property
    def dim(self):
        return self.B.shape[0]


def fine_pressure_space(system):
    n = system.n_pressure
    return PressureSpace(system.B, system.pressure_weights, sp.identity(n, format="csr"), "fine-P1")


def coarse_pressure_space(system, coarse):
    """Piecewise constants on coarse triangles intersected with the fluid region."""
    mesh = system.mesh
    T = mesh.n_triangles
    rowsum = system.Be.sum(axis=2)  # int_t div(phi_a), (T, 12)
    parent = mesh.coarse_parent
    B = sp.csr_matrix(
        (rowsum.ravel(), (np.repeat(parent, rowsum.shape[1]), system.cell_dofs.ravel())),
        shape=(len(coarse.triangles), system.n_dofs),
    )
    area = mesh.areas()
    weights = np.bincount(parent, weights=area, minlength=len(coarse.triangles))
    used = np.flatnonzero(weights > 0)
    B = B[used]
    weights = weights[used]
    remap = np.full(len(coarse.triangles), -1)
    remap[used] = np.arange(len(used))
    # nodal value = area-weighted average of the constants on adjacent fine triangles
    rows = mesh.triangles.ravel()
    cols = np.repeat(remap[parent], 3)
    w = np.repeat(area, 3)
    P = sp.csr_matrix((w, (rows, cols)), shape=(mesh.n_nodes, len(used)))
    P = sp.diags(1.0 / np.asarray(P.sum(axis=1)).ravel()) @ P
    return PressureSpace(B.tocsr(), weights, P.tocsr(), "coarse-P0")


def coarse_solve_stokes(space, pressure, system):
    """Coarse saddle-point solve for Stokes with velocity basis ``space``.

    Returns ``(u0, p0, u_ms, p_ms)``; ``p_ms`` is the fine P1 nodal pressure,
    shifted to zero mean.
    """
    free, d = system.free_dofs, system.dirichlet_dofs
    g = system.lift()
    Af = system.A[free]
    R = space.R
    Kvv = galerkin(R, Af[:, free])
    Bc = (pressure.B[:, free] @ R.T).toarray()
    fv = R @ (system.F[free] - Af[:, d] @ g[d])
    fp = pressure.B[:, d] @ g[d]
    Nv, Np = Kvv.shape[0], Bc.shape[0]
    K = np.zeros((Nv + Np + 1, Nv + Np + 1))
    K[:Nv, :Nv] = Kvv
    K[:Nv, Nv:Nv + Np] = -Bc.T
    K[Nv:Nv + Np, :Nv] = -Bc
    K[Nv:Nv + Np, -1] = pressure.weights
    K[-1, Nv:Nv + Np] = pressure.weights
    b = np.concatenate([fv, fp, [0.0]])
    lu, piv = sla.lu_factor(K, check_finite=True)
    dg = np.abs(np.diag(lu))
    if dg.min() <= 1e-12 * dg.max():
        raise CoarseInfSupFailure(
            "coarse saddle-point matrix is singular; the velocity space is too small "
            "for the pressure space (add velocity basis functions)"
        )
    x = sla.lu_solve((lu, piv), b)
    u0, p0 = x[:Nv], x[Nv:Nv + Np]
    u = g.copy()
    u[free] = R.T @ u0
    p = pressure.to_fine @ p0
    p = p - (system.pressure_weights @ p) / system.pressure_weights.sum()
    return u0, p0, u, p


def export_offline(bases, path):
    """Text dump of eigenvalues and basis sparsity per neighborhood."""
    lines = [f"NEIGHBORHOODS {len(bases)}"]
    for b in bases:
        nnz = np.count_nonzero(b.vectors, axis=0)
        lines.append(f"NEIGHBORHOOD {b.neighborhood.coarse_node} dofs {len(b.dofs)} M_off {b.M_off}")
        lines.append("EIGENVALUES " + " ".join(f"{v:.12e}" for v in b.eigenvalues))
        lines.append("NNZ " + " ".join(str(int(v)) for v in nnz))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
