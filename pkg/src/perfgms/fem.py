"""Fine-scale finite elements for the Laplace, elasticity and Stokes operators.

P1 Lagrange elements for Laplace and plane-strain elasticity, Taylor-Hood
P2/P1 for Stokes.  Vector fields are numbered interleaved: the DOF of
component ``c`` at node ``n`` is ``ncomp * n + c``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import DegenerateTriangle, InconsistentBC, SingularMatrix, ValidationError
from .mesher import INTERIOR, OUTER, PERFORATION, FineMesh

DIRICHLET, NEUMANN = "dirichlet", "neumann"


# --------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class LameParams:
    mu_lame: float
    lambda_lame: float

    @classmethod
    def from_young(cls, E, nu):
        return cls(E / (2.0 * (1.0 + nu)), E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))


def _check_bc(flag):
    if flag not in (DIRICHLET, NEUMANN):
        raise ValidationError(f"perforation_bc must be 'dirichlet' or 'neumann', got {flag!r}")


@dataclass(frozen=True)
class Laplace:
    perforation_bc: str = DIRICHLET
    name = "laplace"
    ncomp = 1

    def __post_init__(self):
        _check_bc(self.perforation_bc)


@dataclass(frozen=True)
class Elasticity:
    E: float = 1e9
    nu: float = 0.22
    perforation_bc: str = DIRICHLET
    name = "elasticity"
    ncomp = 2

    def __post_init__(self):
        _check_bc(self.perforation_bc)
        if not self.E > 0:
            raise ValidationError(f"Young modulus must be positive, got {self.E}")
        if not 0 < self.nu < 0.5:
            raise ValidationError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")

    @property
    def lame(self):
        return LameParams.from_young(self.E, self.nu)


@dataclass(frozen=True)
class Stokes:
    mu: float = 1.0
    perforation_bc: str = DIRICHLET
    name = "stokes"
    ncomp = 2

    def __post_init__(self):
        _check_bc(self.perforation_bc)
        if not self.mu > 0:
            raise ValidationError(f"viscosity must be positive, got {self.mu}")


Operator = Union[Laplace, Elasticity, Stokes]


# --------------------------------------------------------------------------
# quadrature and shape functions

# degree-4 six-point rule (barycentric points, weights sum to one)
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_BARY = np.array([
    [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2],
])
QUAD_W = np.array([_W1] * 3 + [_W2] * 3)

# P2 node order: vertices 0,1,2 then midpoints of edges (1,2), (2,0), (0,1)
P2_EDGES = ((1, 2), (2, 0), (0, 1))


def p2_values(L):
    """P2 shape function values at barycentric points ``L`` (Q, 3) -> (Q, 6)."""
    L0, L1, L2 = L[:, 0], L[:, 1], L[:, 2]
    return np.column_stack([
        L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1),
        4 * L1 * L2, 4 * L2 * L0, 4 * L0 * L1,
    ])


def p2_dvalues(L):
    """Derivatives of P2 shape functions w.r.t. the barycentric coordinates, (Q, 6, 3)."""
    Q = len(L)
    D = np.zeros((Q, 6, 3))
    for i in range(3):
        D[:, i, i] = 4 * L[:, i] - 1
    for m, (a, b) in enumerate(P2_EDGES):
        D[:, 3 + m, a] = 4 * L[:, b]
        D[:, 3 + m, b] = 4 * L[:, a]
    return D


def _geometry(p):
    """Areas and barycentric gradients for a stack of triangles ``p`` (T, 3, 2)."""
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    span = np.max(np.ptp(p, axis=1), axis=1)
    if np.any(det <= 1e-14 * np.maximum(span, 1e-300) ** 2) or np.any(~np.isfinite(det)):
        raise DegenerateTriangle("triangle with non-positive or vanishing area")
    G = np.empty(p.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        G[:, i, 0] = (y[:, j] - y[:, k]) / det
        G[:, i, 1] = (x[:, k] - x[:, j]) / det
    return 0.5 * det, G


def _stack(tri_coords):
    p = np.asarray(tri_coords, dtype=float)
    return p[None] if p.ndim == 2 else p


# --------------------------------------------------------------------------
# element matrices (batched over a leading axis)


def _sym(K):
    """Exact symmetrization; einsum rounding can differ between (i, j) and (j, i)."""
    return 0.5 * (K + np.swapaxes(K, -1, -2))


def laplace_matrices(p):
    area, G = _geometry(p)
    return _sym(area[:, None, None] * np.einsum("tid,tjd->tij", G, G))


def mass_matrices(p):
    area, _ = _geometry(p)
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return area[:, None, None] * base


def _strain_operator(G):
    """Voigt strain-displacement matrices (T, 3, 6) for P1 gradients ``G``."""
    T = len(G)
    Bm = np.zeros((T, 3, 6))
    Bm[:, 0, 0::2] = G[:, :, 0]
    Bm[:, 1, 1::2] = G[:, :, 1]
    Bm[:, 2, 0::2] = G[:, :, 1]
    Bm[:, 2, 1::2] = G[:, :, 0]
    return Bm


def elasticity_matrices(p, lame):
    area, G = _geometry(p)
    mu, lam = lame.mu_lame, lame.lambda_lame
    D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    Bm = _strain_operator(G)
    return _sym(area[:, None, None] * np.einsum("tki,kl,tlj->tij", Bm, D, Bm))


def _vector(M):
    """Block-expand scalar element matrices (T, k, k) to interleaved 2-vector form."""
    T, k, _ = M.shape
    out = np.zeros((T, 2 * k, 2 * k))
    out[:, 0::2, 0::2] = M
    out[:, 1::2, 1::2] = M
    return out


def vector_mass_matrices(p):
    return _vector(mass_matrices(p))


def p2_gradients(p):
    """Areas and P2 gradients at quadrature points, (T, Q, 6, 2)."""
    area, G = _geometry(p)
    return area, np.einsum("qaj,tjd->tqad", p2_dvalues(QUAD_BARY), G)


def stokes_matrices(p):
    """Taylor-Hood element blocks.

    Returns the vector Laplacian (T, 12, 12) on interleaved P2 velocity DOFs
    and the divergence block (T, 12, 3) with entries ``int q_k d_c phi_a``.
    """
    area, dphi = p2_gradients(p)
    w = area[:, None] * QUAD_W[None, :]
    K6 = _sym(np.einsum("tq,tqad,tqbd->tab", w, dphi, dphi))
    D = np.zeros((len(p), 12, 3))
    Lq = QUAD_BARY
    for c in range(2):
        D[:, c::2, :] = np.einsum("tq,tqa,qk->tak", w, dphi[..., c], Lq)
    return _vector(K6), D


def p2_mass_matrices(p):
    area, _ = _geometry(p)
    phi = p2_values(QUAD_BARY)
    return area[:, None, None] * _sym(np.einsum("q,qa,qb->ab", QUAD_W, phi, phi))[None]


def element_laplace(tri_coords):
    """P1 stiffness matrix (3x3) of one triangle."""
    return laplace_matrices(_stack(tri_coords))[0]


def element_mass(tri_coords):
    """P1 consistent mass matrix (3x3) of one triangle."""
    return mass_matrices(_stack(tri_coords))[0]


def element_elasticity(tri_coords, lame):
    """Plane-strain P1 stiffness (6x6, interleaved x/y DOFs)."""
    return elasticity_matrices(_stack(tri_coords), lame)[0]


def element_stokes(tri_coords):
    """Taylor-Hood blocks of one triangle: (velocity 12x12, divergence 12x3)."""
    K, D = stokes_matrices(_stack(tri_coords))
    return K[0], D[0]


# --------------------------------------------------------------------------
# spaces


@dataclass(frozen=True, eq=False)
class Space:
    """Scalar Lagrange space on a fine mesh.

    For degree 2 the nodes are the mesh vertices followed by one midpoint per
    unique edge; ``cells`` lists the 6 nodes per triangle in P2 order.
    """

    mesh: FineMesh
    degree: int
    coords: np.ndarray
    cells: np.ndarray
    markers: np.ndarray
    edges: np.ndarray = None

    @property
    def n_nodes(self):
        return len(self.coords)

    def midpoints_of(self, edges):
        """Midpoint node indices for sorted vertex pairs (degree 2 only)."""
        key = self.edges[:, 0] * self.mesh.n_nodes + self.edges[:, 1]
        e = np.sort(np.asarray(edges).reshape(-1, 2), axis=1)
        q = e[:, 0] * self.mesh.n_nodes + e[:, 1]
        pos = np.searchsorted(key, q)
        return self.mesh.n_nodes + pos


def p1_space(mesh):
    return Space(mesh, 1, mesh.nodes, mesh.triangles, mesh.node_markers)


def p2_space(mesh):
    tris = mesh.triangles
    edges = np.unique(np.sort(np.vstack([tris[:, list(e)] for e in P2_EDGES]), axis=1), axis=0)
    nv = mesh.n_nodes
    key = edges[:, 0] * nv + edges[:, 1]
    cells = np.empty((len(tris), 6), dtype=np.int64)
    cells[:, :3] = tris
    for m, (a, b) in enumerate(P2_EDGES):
        e = np.sort(tris[:, [a, b]], axis=1)
        cells[:, 3 + m] = nv + np.searchsorted(key, e[:, 0] * nv + e[:, 1])
    coords = np.vstack([mesh.nodes, mesh.nodes[edges].mean(axis=1)])
    markers = np.concatenate([mesh.node_markers, np.full(len(edges), INTERIOR, dtype=np.int64)])
    bkey = mesh.edges.min(axis=1) * nv + mesh.edges.max(axis=1)
    markers[nv + np.searchsorted(key, bkey)] = mesh.edge_markers
    return Space(mesh, 2, coords, cells, markers, edges)


def node_dofs(nodes, ncomp):
    """Interleaved DOF indices for a set of nodes, (len(nodes) * ncomp,)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    return (ncomp * nodes[:, None] + np.arange(ncomp)[None, :]).ravel()


# --------------------------------------------------------------------------
# boundary data


Value = Union[float, Sequence[float], Callable]


@dataclass(frozen=True)
class DirichletRule:
    """Prescribed values on part of the outer boundary.

    ``where`` is one of "outer", "left", "right", "bottom", "top";
    ``components`` restricts the rule to some field components (all if None).
    """

    where: str = "outer"
    value: Value = 0.0
    components: tuple[int, ...] | None = None


@dataclass(frozen=True)
class BoundaryData:
    dirichlet: tuple[DirichletRule, ...] = ()
    load: Value = 0.0


def laplace_default_bc():
    """u = 1 on the outer boundary, zero source."""
    return BoundaryData((DirichletRule("outer", 1.0),), 0.0)


def elasticity_default_bc():
    """Rollers on the left and bottom sides, uniform body force of 1e7 per component."""
    return BoundaryData(
        (DirichletRule("left", 0.0, (0,)), DirichletRule("bottom", 0.0, (1,))),
        (1e7, 1e7),
    )


def stokes_default_bc():
    """Velocity (1, 0) on the outer boundary, zero body force."""
    return BoundaryData((DirichletRule("outer", (1.0, 0.0)),), (0.0, 0.0))


def _evaluate(value, xy, ncomp):
    """Broadcast a constant, per-component tuple or callable to (n, ncomp)."""
    n = len(xy)
    out = np.asarray(value(xy[:, 0], xy[:, 1]) if callable(value) else value, dtype=float)
    if out.ndim == 0:
        return np.full((n, ncomp), float(out))
    if out.ndim == 1 and ncomp == 1 and out.shape[0] in (1, n):
        return np.broadcast_to(out.reshape(-1, 1), (n, 1)).copy()
    if out.ndim == 1 and out.shape[0] == ncomp:
        return np.tile(out, (n, 1))
    if out.shape == (n, ncomp):
        return out
    if out.shape == (ncomp, n):
        return out.T.copy()
    raise InconsistentBC(f"value of shape {out.shape} for a {ncomp}-component field on {n} nodes")


def _side_mask(where, xy, bbox, markers):
    on_outer = markers == OUTER
    tol = 1e-10
    if where == "outer":
        return on_outer
    sides = {
        "left": np.abs(xy[:, 0] - bbox[0]) < tol,
        "right": np.abs(xy[:, 0] - bbox[2]) < tol,
        "bottom": np.abs(xy[:, 1] - bbox[1]) < tol,
        "top": np.abs(xy[:, 1] - bbox[3]) < tol,
    }
    if where not in sides:
        raise InconsistentBC(f"unknown boundary part {where!r}")
    return on_outer & sides[where]


def dirichlet_data(operator, space, boundary, bbox=None):
    """Constrained DOFs and their values (outer data wins over perforations)."""
    ncomp = operator.ncomp
    if bbox is None:
        bbox = (*space.coords.min(axis=0), *space.coords.max(axis=0))
    values = {}
    if operator.perforation_bc == DIRICHLET:
        for d in node_dofs(np.flatnonzero(space.markers == PERFORATION), ncomp):
            values[int(d)] = 0.0
    for rule in boundary.dirichlet:
        comps = tuple(range(ncomp)) if rule.components is None else tuple(rule.components)
        if any(c < 0 or c >= ncomp for c in comps):
            raise InconsistentBC(f"component index out of range for {operator.name}")
        nodes = np.flatnonzero(_side_mask(rule.where, space.coords, bbox, space.markers))
        vals = _evaluate(rule.value, space.coords[nodes], ncomp)
        for c in comps:
            for n, v in zip(nodes, vals[:, c]):
                values[int(ncomp * n + c)] = float(v)
    dofs = np.array(sorted(values), dtype=np.int64)
    return dofs, np.array([values[d] for d in dofs.tolist()], dtype=float)


# --------------------------------------------------------------------------
# assembly


def _scatter(Ke, cell_dofs, n_rows, n_cols=None, col_dofs=None):
    col_dofs = cell_dofs if col_dofs is None else col_dofs
    T, a, b = Ke.shape
    rows = np.repeat(cell_dofs, b, axis=1).ravel()
    cols = np.tile(col_dofs, (1, a)).ravel()
    shape = (n_rows, n_rows if n_cols is None else n_cols)
    return linalg.csr_from_triplets(shape[0], rows, cols, Ke.ravel(), shape=shape)


def mesh_id(mesh):
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(mesh.nodes).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()[:12]


@dataclass(eq=False)
class FineSystem:
    """Assembled fine-grid system with all element data kept for local reuse.

    ``A`` is the operator's energy form, ``M`` the L2 mass form of the primary
    field, ``S`` the offline mass form (``(lambda + 2 mu) M`` for elasticity).
    For Stokes, ``A`` includes the viscosity and ``B`` is the divergence form
    ``int q div v`` (pressure rows, velocity columns).
    """

    operator: Operator
    mesh: FineMesh
    space: Space
    A: sp.csr_matrix
    M: sp.csr_matrix
    S: sp.csr_matrix
    F: np.ndarray
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray
    cell_dofs: np.ndarray
    Ke: np.ndarray
    Me: np.ndarray
    s_scale: float = 1.0
    B: sp.csr_matrix | None = None
    Be: np.ndarray | None = None
    pressure_space: Space | None = None
    pressure_weights: np.ndarray | None = None
    _free: np.ndarray | None = field(default=None, repr=False)

    @property
    def ncomp(self):
        return self.operator.ncomp

    @property
    def n_dofs(self):
        return self.A.shape[0]

    @property
    def n_pressure(self):
        return 0 if self.B is None else self.B.shape[0]

    @property
    def free_dofs(self):
        if self._free is None:
            mask = np.ones(self.n_dofs, dtype=bool)
            mask[self.dirichlet_dofs] = False
            self._free = np.flatnonzero(mask)
        return self._free

    def lift(self):
        g = np.zeros(self.n_dofs)
        g[self.dirichlet_dofs] = self.dirichlet_values
        return g

    def local_matrix(self, name, elements, dofs):
        """Assemble ``A``, ``M`` or ``S`` over a subset of elements on local DOFs."""
        Ke = {"A": self.Ke, "M": self.Me}[name[0] if name != "S" else "M"][elements]
        if name == "S":
            Ke = self.s_scale * Ke
        lookup = np.full(self.n_dofs, -1, dtype=np.int64)
        lookup[dofs] = np.arange(len(dofs))
        cd = lookup[self.cell_dofs[elements]]
        if np.any(cd < 0):
            raise ValidationError("element DOFs outside the requested local DOF set")
        return _scatter(Ke, cd, len(dofs))

    def local_divergence(self, elements, vdofs, pnodes):
        lookup_v = np.full(self.n_dofs, -1, dtype=np.int64)
        lookup_v[vdofs] = np.arange(len(vdofs))
        lookup_p = np.full(self.n_pressure, -1, dtype=np.int64)
        lookup_p[pnodes] = np.arange(len(pnodes))
        cv = lookup_v[self.cell_dofs[elements]]
        cp = lookup_p[self.mesh.triangles[elements]]
        Bt = np.transpose(self.Be[elements], (0, 2, 1))
        return _scatter(Bt, cp, len(pnodes), len(vdofs), col_dofs=cv)


def assemble(operator, mesh, boundary):
    """Assemble the fine system of an operator on a mesh with boundary data."""
    load = boundary.load
    if operator.ncomp == 1 and not callable(load) and np.ndim(load) > 0 and np.size(load) != 1:
        raise InconsistentBC("vector load for a scalar operator")
    for rule in boundary.dirichlet:
        if operator.ncomp == 1 and not callable(rule.value) and np.size(rule.value) != 1:
            raise InconsistentBC("vector boundary value for a scalar operator")

    if isinstance(operator, Stokes):
        space = p2_space(mesh)
        p = mesh.nodes[mesh.triangles]
        K, D = stokes_matrices(p)
        Ke = operator.mu * K
        Me = _vector(p2_mass_matrices(p))
    else:
        space = p1_space(mesh)
        p = mesh.nodes[mesh.triangles]
        if isinstance(operator, Laplace):
            Ke, Me = laplace_matrices(p), mass_matrices(p)
        elif isinstance(operator, Elasticity):
            Ke, Me = elasticity_matrices(p, operator.lame), vector_mass_matrices(p)
        else:
            raise ValidationError(f"unknown operator {operator!r}")
    ncomp = operator.ncomp
    cell_dofs = (ncomp * space.cells[:, :, None] + np.arange(ncomp)).reshape(len(space.cells), -1)
    n = ncomp * space.n_nodes
    A = _scatter(Ke, cell_dofs, n)
    M = _scatter(Me, cell_dofs, n)
    s_scale = 1.0
    if isinstance(operator, Elasticity):
        s_scale = operator.lame.lambda_lame + 2.0 * operator.lame.mu_lame
    S = M * s_scale if s_scale != 1.0 else M

    fvals = _evaluate(load, space.coords, ncomp).ravel()
    F = M @ fvals
    bbox = mesh_bbox(mesh)
    ddofs, dvals = dirichlet_data(operator, space, boundary, bbox)
    system = FineSystem(operator, mesh, space, A, M, S, F, ddofs, dvals, cell_dofs, Ke, Me, s_scale)
    if isinstance(operator, Stokes):
        Bt = np.transpose(D, (0, 2, 1))
        system.B = _scatter(Bt, mesh.triangles, mesh.n_nodes, n, col_dofs=cell_dofs)
        system.Be = D
        system.pressure_space = p1_space(mesh)
        system.pressure_weights = np.asarray(_scatter(mass_matrices(p), mesh.triangles, mesh.n_nodes).sum(axis=1)).ravel()
    return system


def mesh_bbox(mesh):
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    return (lo[0], lo[1], hi[0], hi[1])


# --------------------------------------------------------------------------
# solves


@dataclass(eq=False)
class Solution:
    values: np.ndarray
    operator: Operator
    mesh_id: str
    pressure: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def stokes_saddle(Aff, Bf, w):
    """Symmetric saddle-point matrix with a rank-one pressure mean constraint.

    Rows: velocity, pressure, multiplier.  The constraint block uses ``-B`` so
    the matrix is symmetric.
    """
    n_p = Bf.shape[0]
    w = sp.csr_matrix(np.asarray(w, dtype=float).reshape(-1, 1))
    return sp.bmat(
        [[Aff, -Bf.T, None], [-Bf, None, w], [None, w.T, None]], format="csc"
    ), n_p


def fine_solve(operator, mesh=None, boundary=None, system=None):
    """Reference fine-grid solution.

    Either pass ``operator, mesh, boundary`` or a pre-assembled ``system``.
    """
    if system is None:
        system = assemble(operator, mesh, boundary)
    free = system.free_dofs
    d = system.dirichlet_dofs
    g = system.lift()
    Aff = system.A[free][:, free]
    rhs = system.F[free] - system.A[free][:, d] @ g[d]
    u = g.copy()
    pressure = None
    if isinstance(system.operator, Stokes):
        Bf = system.B[:, free]
        K, n_p = stokes_saddle(Aff, Bf, system.pressure_weights)
        b = np.concatenate([rhs, system.B[:, d] @ g[d], [0.0]])
        x = linalg.sparse_solve_sym_indefinite(K, b)
        u[free] = x[: len(free)]
        pressure = x[len(free): len(free) + n_p]
        res = np.linalg.norm(K @ x - b) / max(np.linalg.norm(b), 1e-300)
    else:
        try:
            u[free] = linalg.sparse_solve_spd(Aff, rhs)
        except linalg.NotPositiveDefinite as exc:
            raise SingularMatrix(f"fine system is singular: {exc}") from None
        res = np.linalg.norm(Aff @ u[free] - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if res > 1e-9:
        raise SingularMatrix(f"fine solve residual {res:.2e} exceeds 1e-9")
    return Solution(u, system.operator, mesh_id(system.mesh), pressure, {"residual": res, "n_free": len(free)})
