"""Command-line entry point.

Every subcommand reads an optional config file, applies flag overrides, and
writes its outputs under ``--out-dir``.  Exit status is 0 on success, 1 for
invalid input and 2 when a numerical stage fails; failures also print one
JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, mesher
from .errors import PerfGmsError, SolverError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through exit code 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="seed for randomized snapshots")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--operator", choices=harness.OPERATORS)
    p.add_argument("--snapshots", choices=harness.SNAPSHOTS)
    p.add_argument("--oversample", type=int, metavar="T", help="oversampling layers")
    p.add_argument("--buffer", type=int, metavar="P", help="extra randomized snapshots")
    p.add_argument("--domain", help="preset name (large, small) or custom")
    return p


def build_parser():
    parser = _Parser(prog="perfgms", description="Multiscale solves in perforated domains.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()
    sub.add_parser("mesh", parents=[common], help="generate and save the fine mesh")
    sub.add_parser("solve-fine", parents=[common], help="reference fine-grid solve")
    g = sub.add_parser("solve-gmsfem", parents=[common], help="one multiscale solve")
    g.add_argument("--nc", type=int, help="basis functions per coarse node (default: largest in sweep)")
    sub.add_parser("sweep", parents=[common], help="error table over the basis-count sweep")
    c = sub.add_parser("compare", parents=[common], help="relative errors of one solution file against another")
    c.add_argument("candidate", help="solution file to assess")
    c.add_argument("reference", help="reference solution file")
    return parser


def _config(args):
    overrides = {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "operator": args.operator,
        "snapshots": args.snapshots,
        "oversample": args.oversample,
        "buffer": args.buffer,
        "domain": args.domain,
    }
    if args.config:
        return harness.load_config(args.config, **overrides)
    return harness.ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _out(config, name):
    d = Path(config.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _run(args, stdout):
    config = _config(args)
    ex = harness.Experiment(config)
    if args.command == "mesh":
        path = _out(config, "mesh.txt")
        mesher.save_mesh(ex.mesh, path)
        print(f"nodes={ex.mesh.n_nodes} triangles={ex.mesh.n_triangles} path={path}", file=stdout)
    elif args.command == "solve-fine":
        sol = ex.reference
        harness.save_solution(sol, _out(config, "fine.sol"))
        harness.export_vtk(sol, ex.mesh, _out(config, "fine.vtk"))
        print(f"dofs={ex.system.n_dofs} free={len(ex.system.free_dofs)} path={_out(config, 'fine.sol')}", file=stdout)
    elif args.command == "solve-gmsfem":
        n_c = args.nc if args.nc is not None else max(config.sweep)
        if n_c < 1:
            raise ValidationError("--nc must be at least 1")
        sol = ex.solve(n_c)
        harness.save_solution(sol, _out(config, "gmsfem.sol"))
        harness.export_vtk(sol, ex.mesh, _out(config, "gmsfem.vtk"))
        print(f"N_c={n_c} dim={sol.meta['dim']} path={_out(config, 'gmsfem.sol')}", file=stdout)
    elif args.command == "sweep":
        report = harness.run_experiment(config, ex)
        harness.export_csv(report, _out(config, "sweep.csv"))
        stdout.write(report.to_csv())
    elif args.command == "compare":
        cand = harness.load_solution(args.candidate, ex.operator)
        ref = harness.load_solution(args.reference, ex.operator)
        if cand.mesh_id != ref.mesh_id:
            raise ValidationError("solutions were computed on different meshes")
        if ref.mesh_id != harness.fem.mesh_id(ex.mesh):
            raise ValidationError("solutions do not belong to the mesh of this configuration")
        l2, h1 = harness.relative_errors(cand.values, ref.values, ex.system)
        stdout.write(f"L2,H1\n{l2:.6g},{h1:.6g}\n")


def _fail(code, exc, stage):
    record = {"error": type(exc).__name__, "stage": stage, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None, stdout=None):
    """Run the CLI; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        return _fail(EXIT_INVALID, ValidationError(str(exc)), "arguments")
    try:
        _run(args, stdout)
    except (ValidationError, OSError) as exc:
        return _fail(EXIT_INVALID, exc, args.command)
    except SolverError as exc:
        return _fail(EXIT_SOLVER, exc, args.command)
    except PerfGmsError as exc:  # pragma: no cover - every error is one of the two
        return _fail(EXIT_SOLVER, exc, args.command)
    return EXIT_OK
