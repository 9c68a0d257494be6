import numpy as np
import pytest
import scipy.sparse as sp

import helpers
from perfgms import fem, gmsfem, harness, mesher
from perfgms.errors import (
    CoarseInfSupFailure,
    DimensionMismatch,
    RankDeficientCoarseSpace,
    ValidationError,
)


def _energy(system, v):
    return float(np.sqrt(v @ (system.A @ v)))


@pytest.fixture(scope="module")
def lap():
    return helpers.experiment(**helpers.custom(operator="laplace", snapshots="harmonic", sweep=(1, 2, 4, 8)))


@pytest.fixture(scope="module")
def ela():
    return helpers.experiment(**helpers.custom(operator="elasticity", snapshots="harmonic", sweep=(1, 2, 4, 8)))


def _perforated(ex):
    return [nb for nb in ex.neighborhoods if len(nb.perforation_dofs)]


def _clean(ex):
    return [nb for nb in ex.neighborhoods if not len(nb.perforation_dofs)]


class TestHarmonicSnapshots:
    def test_constant_data_reproduced(self, lap):
        nb = _clean(lap)[7]
        snap = gmsfem.snapshot_harmonic(lap.system, nb)
        raw = snap.meta["source_columns"]
        assert np.abs(raw.sum(axis=1) - 1.0).max() < 1e-12

    @pytest.mark.parametrize("which", ["lap", "ela"])
    def test_interior_residual(self, which, request):
        ex = request.getfixturevalue(which)
        s = ex.system
        for nb in _perforated(ex)[:3] + _clean(ex)[:2]:
            snap = gmsfem.snapshot_harmonic(s, nb)
            ld = gmsfem.local_dofs(s, nb.fine_elements)
            A = s.local_matrix("A", ld.elements, ld.dofs)
            for cols in (snap.meta["source_columns"], snap.columns):
                res = (A @ cols)[ld.interior]
                assert np.abs(res).max() <= 1e-9 * abs(A).max() * np.abs(cols).max()

    @pytest.mark.parametrize("which", ["lap", "ela"])
    def test_vanish_on_perforations(self, which, request):
        ex = request.getfixturevalue(which)
        nb = _perforated(ex)[0]
        snap = gmsfem.snapshot_harmonic(ex.system, nb)
        ld = gmsfem.local_dofs(ex.system, nb.fine_elements)
        assert len(ld.perforation) and np.abs(snap.columns[ld.perforation]).max() == 0.0

    def test_column_count_per_component(self, ela):
        nb = _perforated(ela)[0]
        snap = gmsfem.snapshot_harmonic(ela.system, nb)
        assert snap.meta["source_columns"].shape[1] == 2 * len(nb.boundary_dofs)
        assert snap.count <= 2 * len(nb.boundary_dofs)

    def test_oversampled_restriction(self, lap):
        nb = lap.neighborhoods[14]
        plus = mesher.oversample(nb, 2, lap.mesh)
        snap = gmsfem.snapshot_harmonic(lap.system, nb, plus)
        assert np.array_equal(snap.dofs, gmsfem.local_dofs(lap.system, nb.fine_elements).dofs)
        assert snap.count == np.linalg.matrix_rank(snap.columns)

    def test_stokes_snapshots_divergence_free(self):
        ex = helpers.experiment(**helpers.custom(operator="stokes", snapshots="harmonic", sweep=(1, 2)))
        s = ex.system
        nb = _perforated(ex)[0]
        snap = gmsfem.snapshot_harmonic(s, nb)
        ld = gmsfem.local_dofs(s, nb.fine_elements)
        pnodes = np.unique(s.mesh.triangles[nb.fine_elements])
        Bl = s.local_divergence(nb.fine_elements, ld.dofs, pnodes)
        div = Bl @ snap.meta["source_columns"]
        assert np.abs(div).max() <= 1e-9 * abs(Bl).max() * np.abs(snap.meta["source_columns"]).max()


class TestSpectralSnapshots:
    def test_identity_on_free_dofs(self, lap):
        nb = _perforated(lap)[0]
        snap = gmsfem.snapshot_spectral(lap.system, nb)
        ld = gmsfem.local_dofs(lap.system, nb.fine_elements)
        assert snap.count == len(ld.free)
        assert np.all(np.count_nonzero(snap.columns, axis=0) == 1)
        assert np.array_equal(snap.columns[ld.free], np.eye(len(ld.free)))

    def test_full_rank_offline_space(self, lap):
        nb = _perforated(lap)[0]
        snap = gmsfem.snapshot_spectral(lap.system, nb)
        basis = gmsfem.offline_basis(lap.system, nb, snap)
        assert np.linalg.matrix_rank(basis.vectors) == snap.count


class TestLocalForms:
    def test_identity_snapshots_give_local_matrices(self, lap):
        s = lap.system
        nb = lap.neighborhoods[14]
        snap = gmsfem.snapshot_spectral(s, nb)
        A_off, S_off = gmsfem.local_forms(s, nb, snap)
        ld = gmsfem.local_dofs(s, nb.fine_elements)
        A = s.local_matrix("A", ld.elements, ld.dofs).toarray()[np.ix_(ld.free, ld.free)]
        assert np.array_equal(A_off, A)

    def test_constant_snapshot_with_perforation(self, lap):
        nb = _perforated(lap)[0]
        ld = gmsfem.local_dofs(lap.system, nb.fine_elements)
        col = np.ones((len(ld.dofs), 1))
        col[ld.perforation] = 0.0
        snap = gmsfem.SnapshotSet(nb, ld.dofs, col, gmsfem.HARMONIC)
        A_off, S_off = gmsfem.local_forms(lap.system, nb, snap)
        assert A_off[0, 0] > 0 and S_off[0, 0] > 0

    def test_elasticity_mass_scales(self, holes):
        mesh = holes[2]
        coarse = holes[1]
        nb = mesher.build_neighborhood(coarse, mesh, 14)
        out = []
        for E, nu in [(1e9, 0.22), (3e6, 0.3)]:
            op = fem.Elasticity(E=E, nu=nu)
            s = fem.assemble(op, mesh, fem.elasticity_default_bc())
            _, S_off = gmsfem.local_forms(s, nb, gmsfem.snapshot_spectral(s, nb))
            out.append(S_off / (op.lame.lambda_lame + 2 * op.lame.mu_lame))
        assert np.allclose(out[0], out[1], rtol=1e-12, atol=0)

    def test_mismatched_rows(self, lap):
        nb, other = lap.neighborhoods[14], lap.neighborhoods[15]
        snap = gmsfem.snapshot_spectral(lap.system, other)
        with pytest.raises(DimensionMismatch):
            gmsfem.local_forms(lap.system, nb, snap)


class TestSelectOffline:
    def test_equal_pencil(self, rng):
        X = rng.standard_normal((6, 6))
        S = X @ X.T + np.eye(6)
        lam, V, short = gmsfem.select_offline(S, S, 3)
        assert np.allclose(lam, 1.0) and not short
        assert np.allclose(V.T @ S @ V, np.eye(3), atol=1e-10)

    def test_diagonal_pencil(self):
        lam, V, _ = gmsfem.select_offline(np.diag([1.0, 4.0, 9.0]), np.eye(3), 2)
        assert np.allclose(lam, [1, 4])
        assert np.allclose(V, np.eye(3)[:, :2])

    def test_insufficient_rank(self):
        lam, V, short = gmsfem.select_offline(np.eye(3), np.diag([1.0, 1.0, 0.0]), 3)
        assert short and len(lam) == 2

    def test_invalid_count(self):
        with pytest.raises(ValidationError):
            gmsfem.select_offline(np.eye(2), np.eye(2), 0)

    def test_offline_invariants(self, lap):
        for basis in lap.offline()[:10]:
            nb = basis.neighborhood
            ld = gmsfem.local_dofs(lap.system, nb.fine_elements)
            S = lap.system.local_matrix("S", ld.elements, ld.dofs)
            G = basis.vectors.T @ (S @ basis.vectors)
            assert np.abs(G - np.eye(basis.M_off)).max() <= 1e-8
            assert basis.eigenvalues.min() >= -1e-10
            assert np.all(np.diff(basis.eigenvalues) >= -1e-12)

    def test_truncation_is_nested(self, lap):
        b = lap.offline()[14]
        t = b.truncate(4)
        assert np.array_equal(t.vectors, b.vectors[:, :4]) and not t.insufficient
        assert b.truncate(b.M_off + 1).insufficient


class TestPartitionOfUnity:
    def test_sums_to_one(self, lap, rng):
        chi = lap.pou.chi
        free = lap.system.free_dofs
        pick = rng.choice(free, 100, replace=False)
        assert np.abs(chi[:, pick].sum(axis=0) - 1.0).max() <= 1e-12
        assert chi.min() >= 0.0 and chi.max() <= 1.0

    def test_nodal_values(self, lap):
        coarse, mesh = lap.coarse, lap.mesh
        for i, xy in enumerate(coarse.nodes):
            j = np.flatnonzero(np.linalg.norm(mesh.nodes - xy, axis=1) < 1e-12)
            if len(j):
                col = lap.pou.chi[:, j[0]]
                assert col[i] == 1.0 and np.count_nonzero(col) == 1

    def test_support_inside_neighborhood(self, lap):
        mesh = lap.mesh
        for nb in lap.neighborhoods:
            support = np.flatnonzero(lap.pou.chi[nb.coarse_node] > 0)
            elems = np.flatnonzero(np.isin(mesh.triangles, support).any(axis=1))
            touching = elems[(lap.pou.chi[nb.coarse_node][mesh.triangles[elems]] > 0).sum(axis=1) > 1]
            assert set(touching) <= set(nb.fine_elements)


class TestCoarseSpace:
    def test_hat_functions_give_p1_coarse_matrix(self, plain):
        dom, coarse, mesh = plain
        s = fem.assemble(fem.Laplace(), mesh, fem.laplace_default_bc())
        pou = gmsfem.build_pou(coarse, s.space)
        bases = []
        for i in range(len(coarse.nodes)):
            nb = mesher.build_neighborhood(coarse, mesh, i)
            ld = gmsfem.local_dofs(s, nb.fine_elements)
            bases.append(gmsfem.OfflineBasis(nb, ld.dofs, np.zeros(1), np.ones((len(ld.dofs), 1))))
        space = gmsfem.assemble_R0(bases, pou, s)
        interior = [i for i, (x, y) in enumerate(coarse.nodes) if 0 < x < 1 and 0 < y < 1]
        free = s.free_dofs
        K = gmsfem.galerkin(space.R, s.A[free][:, free])[np.ix_(interior, interior)]
        Kc = np.zeros((len(coarse.nodes),) * 2)
        for t in coarse.triangles:
            Kc[np.ix_(t, t)] += fem.element_laplace(coarse.nodes[t])
        assert np.allclose(K, Kc[np.ix_(interior, interior)], rtol=0, atol=1e-12)
        for i in interior:
            assert np.allclose(space.R0[i].toarray().ravel(), pou.chi[i], atol=1e-15)

    def test_rows_supported_in_neighborhood(self, lap):
        space = lap.coarse_space(4)
        for row in range(space.dim):
            nb = lap.neighborhoods[space.owner[row]]
            cols = space.R0[row].indices
            assert set(cols) <= set(gmsfem.local_dofs(lap.system, nb.fine_elements).dofs)
        assert np.abs(space.R0[:, lap.system.dirichlet_dofs]).max() == 0.0

    def test_duplicate_basis_is_rank_deficient(self, lap):
        bases = [b.truncate(2) for b in lap.offline()]
        b0 = bases[14]
        bases[14] = gmsfem.OfflineBasis(b0.neighborhood, b0.dofs, b0.eigenvalues[[0, 0]], b0.vectors[:, [0, 0]])
        with pytest.raises(RankDeficientCoarseSpace):
            gmsfem.assemble_R0(bases, lap.pou, lap.system)
        space = gmsfem.assemble_R0(bases, lap.pou, lap.system, compress=True)
        assert space.compressed and space.dim == 2 * len(bases) - 1

    def test_nested_spaces_monotone(self, lap):
        ref = lap.reference.values
        errs = []
        for n in (1, 2, 4, 8):
            _, u = gmsfem.coarse_solve(lap.coarse_space(n), lap.system)
            errs.append(_energy(lap.system, u - ref))
        assert all(b <= a * (1 + 1e-10) for a, b in zip(errs, errs[1:]))

    def test_galerkin_optimality(self, lap, rng):
        space = lap.coarse_space(4)
        s = lap.system
        _, u = gmsfem.coarse_solve(space, s)
        ref = lap.reference.values
        best = _energy(s, u - ref)
        g = s.lift()
        for _ in range(20):
            v = g.copy()
            v[s.free_dofs] = space.R.T @ (rng.standard_normal(space.dim) * 0.1) + u[s.free_dofs]
            assert best <= _energy(s, v - ref)

    def test_interpolant_reproduction(self, plain):
        dom, coarse, mesh = plain
        bc = fem.BoundaryData((fem.DirichletRule("outer", lambda x, y: x * y + 1),), 0.0)
        s = fem.assemble(fem.Laplace(), mesh, bc)
        ref = fem.fine_solve(fem.Laplace(), system=s).values
        pou = gmsfem.build_pou(coarse, s.space)
        x, y = mesh.nodes.T
        # chi_i * {1, x, y, xy} summed over i contains the interpolant of x y + 1
        bases = []
        for i in range(len(coarse.nodes)):
            nb = mesher.build_neighborhood(coarse, mesh, i)
            d = gmsfem.local_dofs(s, nb.fine_elements).dofs
            V = np.column_stack([np.ones(len(d)), x[d], y[d], x[d] * y[d]])
            bases.append(gmsfem.OfflineBasis(nb, d, np.zeros(4), V))
        space = gmsfem.assemble_R0(bases, pou, s, compress=True)
        _, u = gmsfem.coarse_solve(space, s)
        v = x * y + 1
        assert _energy(s, u - ref) <= _energy(s, v - ref) * (1 + 1e-10)

    def test_dirichlet_exact(self, lap, ela):
        for ex in (lap, ela):
            _, u = gmsfem.coarse_solve(ex.coarse_space(2), ex.system)
            assert np.array_equal(u[ex.system.dirichlet_dofs], ex.system.dirichlet_values)

    def test_stokes_operator_rejected(self):
        ex = helpers.experiment(**helpers.custom(operator="stokes", snapshots="harmonic", sweep=(1, 2)))
        with pytest.raises(ValidationError):
            gmsfem.coarse_solve(ex.coarse_space(1), ex.system)


@pytest.fixture(scope="module")
def stk():
    return helpers.experiment(**helpers.custom(operator="stokes", snapshots="harmonic", sweep=(1, 2)))


class TestStokesCoarse:
    def test_pressure_mean_zero(self, stk):
        _, _, u, p = gmsfem.coarse_solve_stokes(stk.coarse_space(2), stk.pressure, stk.system)
        w = stk.system.pressure_weights
        assert abs(w @ p) <= 1e-10 * np.abs(p).max() * w.sum()
        assert np.array_equal(u[stk.system.dirichlet_dofs], stk.system.dirichlet_values)

    def test_coarse_pressure_space(self, stk):
        assert stk.pressure.dim == len(stk.coarse.triangles)
        assert np.isclose(stk.pressure.weights.sum(), stk.mesh.areas().sum())
        # a constant coarse pressure interpolates to a constant fine pressure
        assert np.allclose(stk.pressure.to_fine @ np.ones(stk.pressure.dim), 1.0)

    def test_too_small_velocity_space(self, stk):
        with pytest.raises(CoarseInfSupFailure):
            gmsfem.coarse_solve_stokes(stk.coarse_space(1), gmsfem.fine_pressure_space(stk.system), stk.system)


def test_export_offline(lap, tmp_path):
    path = tmp_path / "offline.txt"
    gmsfem.export_offline(lap.offline()[:3], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "NEIGHBORHOODS 3"
    assert lines[1].startswith("NEIGHBORHOOD 0 dofs")
    assert len(lines) == 1 + 3 * 3


def test_galerkin_product_matches_sparse(rng):
    A = sp.random(30, 30, 0.2, random_state=1) + sp.identity(30)
    A = (A + A.T).tocsr()
    for density in (0.05, 0.9):
        R = sp.random(5, 30, density, random_state=2, format="csr")
        assert np.allclose(gmsfem.galerkin(R, A), (R @ A @ R.T).toarray(), atol=1e-13)


def test_harness_uses_same_pipeline(lap):
    space = lap.coarse_space(2)
    _, u = gmsfem.coarse_solve(space, lap.system)
    assert np.array_equal(lap.solve(2).values, u)
    assert harness.relative_errors(u, u, lap.system) == (0.0, 0.0)
