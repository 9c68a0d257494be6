import numpy as np
import pytest

import helpers
from perfgms import fem
from perfgms.errors import DegenerateTriangle, InconsistentBC, SingularMatrix, ValidationError

UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _close(A, B, tol=1e-12):
    scale = max(np.abs(B).max(), 1.0)
    return np.abs(A - B).max() <= tol * scale


class TestLaplaceElement:
    def test_unit_triangle(self):
        K = fem.element_laplace(UNIT)
        assert np.allclose(K, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], rtol=0, atol=1e-15)

    def test_row_sums_vanish(self, rng):
        for tri in helpers.random_triangles(20, 1):
            assert np.abs(fem.element_laplace(tri).sum(axis=1)).max() < 1e-12 * np.abs(fem.element_laplace(tri)).max()

    def test_scale_invariance(self):
        tri = np.array([[0.1, 0.2], [0.7, 0.3], [0.4, 0.9]])
        assert np.allclose(fem.element_laplace(2 * tri), fem.element_laplace(tri), rtol=1e-14)

    def test_psd(self):
        for tri in helpers.random_triangles(20, 2):
            assert np.linalg.eigvalsh(fem.element_laplace(tri)).min() > -1e-12

    @pytest.mark.parametrize("tri", [[[0, 0], [1, 0], [2, 0]], [[0, 0], [0, 1], [1, 0]]])
    def test_degenerate_or_clockwise(self, tri):
        with pytest.raises(DegenerateTriangle):
            fem.element_laplace(np.array(tri, dtype=float))


class TestMassElement:
    def test_unit_triangle(self):
        expected = (0.5 / 12) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
        assert np.allclose(fem.element_mass(UNIT), expected, rtol=0, atol=1e-16)

    def test_total_is_area(self):
        for tri in helpers.random_triangles(10, 3):
            assert np.isclose(fem.element_mass(tri).sum(), helpers.triangle_area(tri), rtol=1e-14)

    def test_congruent_triangles(self):
        tri = np.array([[0.1, 0.2], [0.7, 0.3], [0.4, 0.9]])
        c, s = np.cos(0.7), np.sin(0.7)
        moved = tri @ np.array([[c, s], [-s, c]]) + [3.0, -1.0]
        assert np.allclose(fem.element_mass(moved), fem.element_mass(tri), rtol=1e-13)


class TestElasticityElement:
    def test_lame_parameters(self):
        lame = fem.Elasticity(E=1e9, nu=0.22).lame
        assert np.isclose(lame.mu_lame, 1e9 / 2.44)
        assert np.isclose(lame.lambda_lame, 1e9 * 0.22 / (1.22 * 0.56))

    def test_unit_triangle_against_quadrature(self):
        K = fem.element_elasticity(UNIT, fem.LameParams(1.0, 1.0))
        assert _close(K, helpers.elasticity_oracle(UNIT, 1.0, 1.0))

    def test_rigid_modes(self):
        tri = np.array([[0.1, 0.2], [0.7, 0.3], [0.4, 0.9]])
        K = fem.element_elasticity(tri, fem.Elasticity().lame)
        x, y = tri.T
        modes = [np.tile([1.0, 0.0], 3), np.tile([0.0, 1.0], 3), np.column_stack([-y, x]).ravel()]
        for m in modes:
            assert np.abs(K @ m).max() <= 1e-12 * np.abs(K).max()
        assert np.sum(np.linalg.eigvalsh(K) > 1e-9 * np.abs(K).max()) == 3


class TestStokesElement:
    def test_constant_velocity_divergence_free(self):
        _, D = fem.element_stokes(UNIT)
        for c in range(2):
            u = np.zeros(12)
            u[c::2] = 1.0
            assert np.abs(D.T @ u).max() < 1e-15

    def test_solenoidal_linear_field(self):
        tri = np.array([[0.1, 0.2], [0.7, 0.3], [0.4, 0.9]])
        _, D = fem.element_stokes(tri)
        nodes = helpers.lagrange_nodes(tri, 2)
        u = np.column_stack([nodes[:, 0], -nodes[:, 1]]).ravel()
        assert np.abs(D.T @ u).max() < 1e-15

    def test_blocks_against_quadrature(self):
        for tri in helpers.random_triangles(5, 4):
            K, D = fem.element_stokes(tri)
            K6 = helpers.stiffness_oracle(tri, 2)
            assert _close(K[0::2, 0::2], K6) and _close(K[1::2, 1::2], K6)
            assert np.abs(K[0::2, 1::2]).max() == 0.0
            assert _close(D, helpers.divergence_oracle(tri))


class TestAssembly:
    def test_constant_solution(self, plain):
        u = fem.fine_solve(fem.Laplace(), plain[2], fem.laplace_default_bc()).values
        assert np.abs(u - 1.0).max() < 1e-12

    def test_elasticity_zero_data(self, plain):
        bc = fem.BoundaryData((fem.DirichletRule("outer", 0.0),), 0.0)
        u = fem.fine_solve(fem.Elasticity(), plain[2], bc).values
        assert np.abs(u).max() == 0.0

    def test_pressure_nullspace(self, stokes_system):
        s = stokes_system
        hydro = s.B[:, s.free_dofs].T @ np.ones(s.n_pressure)
        assert np.abs(hydro).max() < 1e-14

    def test_symmetric(self, laplace_system, elasticity_system, stokes_system):
        for s in (laplace_system, elasticity_system, stokes_system):
            for K in (s.A, s.M):
                diff = (K - K.T).tocoo()
                assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0

    def test_elasticity_energy_positive(self, elasticity_system, rng):
        s = elasticity_system
        free = s.free_dofs
        Aff = s.A[free][:, free]
        for _ in range(100):
            v = rng.standard_normal(len(free))
            assert v @ (Aff @ v) > 0

    def test_vector_data_for_scalar_operator(self, plain):
        bc = fem.BoundaryData((fem.DirichletRule("outer", (1.0, 0.0)),), 0.0)
        with pytest.raises(InconsistentBC):
            fem.assemble(fem.Laplace(), plain[2], bc)

    def test_vector_load_for_scalar_operator(self, plain):
        with pytest.raises(InconsistentBC):
            fem.assemble(fem.Laplace(), plain[2], fem.BoundaryData((), (1.0, 2.0)))

    def test_operator_parameters_validated(self):
        with pytest.raises(ValidationError):
            fem.Elasticity(E=-1.0)
        with pytest.raises(ValidationError):
            fem.Elasticity(nu=0.5)
        with pytest.raises(ValidationError):
            fem.Stokes(mu=0.0)
        with pytest.raises(ValidationError):
            fem.Laplace(perforation_bc="robin")

    def test_neumann_perforations_add_no_constraints(self, holes):
        s = fem.assemble(fem.Laplace(perforation_bc=fem.NEUMANN), holes[2], fem.laplace_default_bc())
        assert np.all(holes[2].node_markers[s.dirichlet_dofs] == fem.OUTER)


class TestFineSolve:
    def test_linear_patch(self, plain):
        bc = fem.BoundaryData((fem.DirichletRule("outer", lambda x, y: x),), 0.0)
        sol = fem.fine_solve(fem.Laplace(), plain[2], bc)
        assert np.abs(sol.values - plain[2].nodes[:, 0]).max() < 1e-10

    def test_elasticity_linear_patch(self, plain):
        def g(x, y):
            return np.column_stack([0.01 * x + 0.02 * y, -0.03 * x + 0.005 * y])

        bc = fem.BoundaryData((fem.DirichletRule("outer", g),), (0.0, 0.0))
        sol = fem.fine_solve(fem.Elasticity(), plain[2], bc)
        exact = g(*plain[2].nodes.T).ravel()
        assert np.abs(sol.values - exact).max() < 1e-10 * np.abs(exact).max()

    def test_maximum_principle(self, laplace_system):
        u = fem.fine_solve(fem.Laplace(), system=laplace_system).values
        assert u.min() >= -1e-12 and u.max() <= 1 + 1e-12

    def test_dirichlet_values_exact(self, laplace_system, elasticity_system):
        for s in (laplace_system, elasticity_system):
            u = fem.fine_solve(s.operator, system=s).values
            assert np.array_equal(u[s.dirichlet_dofs], s.dirichlet_values)

    def test_stokes_incompressible_and_gauged(self, stokes_system):
        s = stokes_system
        sol = fem.fine_solve(s.operator, system=s)
        u, p = sol.values, sol.pressure
        assert np.abs(s.B @ u).max() <= 1e-10 * np.abs(s.B).max()
        assert abs(s.pressure_weights @ p) <= 1e-10 * np.abs(p).max()
        assert np.array_equal(u[s.dirichlet_dofs], s.dirichlet_values)
        assert sol.meta["residual"] <= 1e-9

    def test_stokes_outer_data_wins_at_shared_nodes(self, stokes_system):
        s = stokes_system
        lid = s.dirichlet_values.reshape(-1)[np.isin(s.dirichlet_dofs, 2 * np.flatnonzero(s.space.markers == fem.OUTER))]
        assert np.all(lid == 1.0)

    def test_pure_neumann_is_singular(self, holes):
        op = fem.Laplace(perforation_bc=fem.NEUMANN)
        with pytest.raises(SingularMatrix):
            fem.fine_solve(op, holes[2], fem.BoundaryData((), 1.0))

    def test_mesh_id_is_stable(self, holes):
        assert fem.mesh_id(holes[2]) == fem.mesh_id(holes[2])
