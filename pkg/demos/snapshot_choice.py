"""Harmonic versus spectral snapshots for Laplace and elasticity.

Harmonic snapshots are local solves with unit boundary data; spectral
snapshots are all fine DOFs of the neighborhood.  With zero source the
Laplace solution is locally harmonic, so the harmonic space tends to win
there, while for elasticity the spectral space is at least as accurate.

    python3 demos/snapshot_choice.py [large|small]
"""
import sys

from perfgms import harness

domain = sys.argv[1] if len(sys.argv) > 1 else "large"
sweep = (1, 2, 4, 8, 12, 16)
for op in ("laplace", "elasticity"):
    print(f"{op} on {domain}")
    print(f"{'N_c':>4} {'harmonic H1':>12} {'spectral H1':>12}")
    reports = {
        mode: harness.run_experiment(harness.ExperimentConfig(domain=domain, operator=op, snapshots=mode, sweep=sweep))
        for mode in ("harmonic", "spectral")
    }
    for k, n in enumerate(sweep):
        print(f"{n:>4} {reports['harmonic'].rows[k].h1:>12.4g} {reports['spectral'].rows[k].h1:>12.4g}")
