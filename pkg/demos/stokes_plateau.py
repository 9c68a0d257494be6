"""Stokes flow around the holes with harmonic velocity snapshots.

The coarse pressure is piecewise constant on the coarse triangles.  The
velocity error drops sharply over the first few basis functions, reaches
its minimum near four per node, then drifts slowly upwards towards the
error of the full fine velocity space paired with the same coarse
pressure.  Enriching the velocity alone cannot beat that limit.

    python3 demos/stokes_plateau.py
"""
from pathlib import Path

from perfgms import harness

cfg = harness.ExperimentConfig(domain="large", operator="stokes", snapshots="harmonic", sweep=tuple(range(1, 17)))
ex = harness.Experiment(cfg)
report = harness.run_experiment(cfg, ex)
print(report.to_csv(), end="")

out = Path("out")
out.mkdir(exist_ok=True)
harness.export_vtk(ex.reference, ex.mesh, out / "stokes_fine.vtk")
harness.export_vtk(ex.solve(16), ex.mesh, out / "stokes_gmsfem.vtk")
