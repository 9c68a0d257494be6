import numpy as np
import pytest

import helpers
from perfgms import fem, mesher


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(helpers.ACCEPTANCE):
        ok, detail = helpers.ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def holes():
    """Three-hole test domain, its coarse grid and fine mesh."""
    dom = mesher.build_domain(inclusions=helpers.THREE_HOLES, polygon_segments=16, H=0.2)
    coarse = mesher.build_coarse_grid(dom, 0.2)
    mesh = mesher.generate_fine_mesh(dom, coarse, 1.0 / 30.0)
    return dom, coarse, mesh


@pytest.fixture(scope="session")
def plain():
    """Unperforated unit square with a coarse grid of size 1/5."""
    dom = mesher.build_domain()
    coarse = mesher.build_coarse_grid(dom, 0.2)
    mesh = mesher.generate_fine_mesh(dom, coarse, 1.0 / 20.0)
    return dom, coarse, mesh


@pytest.fixture(scope="session")
def laplace_system(holes):
    return fem.assemble(fem.Laplace(), holes[2], fem.laplace_default_bc())


@pytest.fixture(scope="session")
def elasticity_system(holes):
    return fem.assemble(fem.Elasticity(), holes[2], fem.elasticity_default_bc())


@pytest.fixture(scope="session")
def stokes_system(holes):
    return fem.assemble(fem.Stokes(), holes[2], fem.stokes_default_bc())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
