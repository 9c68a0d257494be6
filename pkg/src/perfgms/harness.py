"""Experiment driver: domain presets, configuration, error sweeps and export.

A sweep shares one fine reference solve and one set of local
eigendecompositions (computed at the largest requested basis count) across
all entries; each entry only truncates the local bases, assembles ``R0`` and
solves the coarse system.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import fem, gmsfem, mesher
from .errors import ConfigError, RankDeficientCoarseSpace, ValidationError, ZeroReferenceNorm
from .randomized import RandomizedConfig, randomized_snapshots, snapshot_fraction

OPERATORS = ("laplace", "elasticity", "stokes")
SNAPSHOTS = ("harmonic", "spectral", "randomized")


# --------------------------------------------------------------------------
# domain presets


@dataclass(frozen=True)
class Preset:
    """Recipe for a rejection-sampled layout of circular inclusions."""

    count: int
    r_min: float
    r_max: float
    gap: float
    segments: int
    seed: int


PRESETS = {
    "large": Preset(count=12, r_min=0.06, r_max=0.10, gap=0.03, segments=16, seed=11),
    "small": Preset(count=60, r_min=0.015, r_max=0.03, gap=0.015, segments=12, seed=5),
}


def preset_inclusions(name, H=0.2, bbox=(0.0, 0.0, 1.0, 1.0), seed=None, min_crossing=30.0, max_tries=200000):
    """Sample the inclusion layout of a named preset.

    Circles are drawn one at a time with uniform centers and radii and kept
    when they respect the clearance ``gap`` to the box and to earlier
    circles, and when their polygon crosses the coarse grid at no less than
    ``min_crossing`` degrees with vertices well away from coarse edges.
    The result depends only on ``name``, ``H``, ``bbox`` and ``seed``.

    Returns
    -------
    list of ((x, y), r)
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    p = PRESETS[name]
    rng = np.random.default_rng(p.seed if seed is None else seed)
    coarse = mesher.build_coarse_grid(mesher.build_domain(bbox), H)
    xmin, ymin, xmax, ymax = bbox
    chosen = []
    for _ in range(max_tries):
        if len(chosen) == p.count:
            break
        r = rng.uniform(p.r_min, p.r_max)
        c = rng.uniform([xmin + r + p.gap, ymin + r + p.gap], [xmax - r - p.gap, ymax - r - p.gap])
        if any(math.dist(c, c2) < r + r2 + p.gap for c2, r2 in chosen):
            continue
        single = mesher.build_domain(bbox, [(tuple(c), r)], p.segments)
        angle, clearance = mesher.crossing_quality(single, coarse)
        if angle < min_crossing or clearance < 0.25 * 2.0 * np.pi * r / p.segments:
            continue
        chosen.append((tuple(float(v) for v in c), float(r)))
    if len(chosen) < p.count:
        raise ValidationError(f"could not place {p.count} inclusions for preset {name!r}")
    return chosen


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a sweep.

    ``domain`` is a preset name or ``"custom"`` (then ``inclusions`` lists
    ``((x, y), r)``).  ``oversample`` defaults to 2 layers for randomized
    snapshots and 0 otherwise; ``seed`` drives the randomized snapshots.
    """

    domain: str = "large"
    inclusions: tuple = ()
    preset_seed: int | None = None
    polygon_segments: int | None = None
    H: float = 0.2
    h: float = 1.0 / 30.0
    min_angle: float = 20.0
    operator: str = "laplace"
    E: float = 1e9
    nu: float = 0.22
    mu: float = 1.0
    perforation_bc: str = fem.DIRICHLET
    snapshots: str = "spectral"
    sweep: tuple = (1, 2, 4, 8, 12, 16)
    oversample: int | None = None
    buffer: int = 4
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ConfigError(f"unknown operator {self.operator!r}; expected one of {OPERATORS}")
        if self.snapshots not in SNAPSHOTS:
            raise ConfigError(f"unknown snapshot mode {self.snapshots!r}; expected one of {SNAPSHOTS}")
        if self.domain != "custom" and self.domain not in PRESETS:
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.domain == "custom" and self.preset_seed is not None:
            raise ConfigError("preset_seed only applies to preset domains")
        sweep = tuple(int(n) for n in self.sweep)
        if any(n < 1 for n in sweep) or any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ConfigError(f"sweep must be positive and strictly ascending, got {sweep}")
        object.__setattr__(self, "sweep", sweep)
        if self.oversample is not None and self.oversample < 0:
            raise ConfigError("oversample must be nonnegative")
        if self.snapshots == "spectral" and self.oversample:
            raise ConfigError("oversampling does not apply to spectral snapshots")
        if self.buffer < 0:
            raise ConfigError("buffer must be nonnegative")
        if self.perforation_bc not in (fem.DIRICHLET, fem.NEUMANN):
            raise ConfigError(f"perforation_bc must be {fem.DIRICHLET!r} or {fem.NEUMANN!r}")
        if self.operator == "stokes" and self.perforation_bc != fem.DIRICHLET:
            raise ConfigError("Stokes requires no-slip (dirichlet) perforations")

    @property
    def layers(self):
        if self.oversample is not None:
            return self.oversample
        return 2 if self.snapshots == "randomized" else 0

    def make_operator(self):
        if self.operator == "laplace":
            return fem.Laplace(perforation_bc=self.perforation_bc)
        if self.operator == "elasticity":
            return fem.Elasticity(E=self.E, nu=self.nu, perforation_bc=self.perforation_bc)
        return fem.Stokes(mu=self.mu)

    def boundary_data(self):
        return {
            "laplace": fem.laplace_default_bc,
            "elasticity": fem.elasticity_default_bc,
            "stokes": fem.stokes_default_bc,
        }[self.operator]()


def _parse_inclusions(text):
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = item.replace(",", " ").split()
        if len(parts) != 3:
            raise ValueError(f"inclusion needs 'x y r', got {item!r}")
        x, y, r = map(float, parts)
        out.append(((x, y), r))
    return tuple(out)


def _optional_int(text):
    return None if text.lower() in ("none", "") else int(text)


_PARSERS = {
    "domain": str,
    "inclusions": _parse_inclusions,
    "preset_seed": _optional_int,
    "polygon_segments": _optional_int,
    "H": float,
    "h": float,
    "min_angle": float,
    "operator": str.lower,
    "E": float,
    "nu": float,
    "mu": float,
    "perforation_bc": str.lower,
    "snapshots": str.lower,
    "sweep": lambda s: tuple(int(v) for v in s.replace(",", " ").split()),
    "oversample": _optional_int,
    "buffer": int,
    "seed": int,
    "out_dir": str,
}


def parse_config(text, **overrides):
    """Parse the flat ``key = value`` config format.

    Blank lines and ``#`` comments are ignored; keys are the fields of
    :class:`ExperimentConfig`.  Lists use commas or spaces (``sweep = 1, 2,
    4``); inclusions are ``x y r`` triples separated by ``;``.  ``overrides``
    (already typed) win over file values.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    if values.get("inclusions") and "domain" not in values:
        values["domain"] = "custom"
    return ExperimentConfig(**values)


def load_config(path, **overrides):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, **overrides)


def format_config(config):
    """Inverse of :func:`parse_config` for the fields that differ from defaults."""
    lines = []
    default = ExperimentConfig()
    for f in fields(ExperimentConfig):
        v = getattr(config, f.name)
        if v == getattr(default, f.name):
            continue
        if f.name == "inclusions":
            v = "; ".join(f"{x!r} {y!r} {r!r}" for (x, y), r in v)
        elif f.name == "sweep":
            v = ", ".join(map(str, v))
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# errors and reports


def relative_errors(u_ms, u_fine, system):
    """Relative errors in the mass norm and the energy norm.

    Both vectors live on the fine DOFs of ``system`` (velocity only for
    Stokes).  Returns ``(L2, H1)``.
    """
    u_ms = np.asarray(u_ms, dtype=float)
    u_fine = np.asarray(u_fine, dtype=float)
    if u_ms.shape != u_fine.shape or u_fine.shape[0] != system.n_dofs:
        raise ValidationError(f"solution sizes {u_ms.shape}, {u_fine.shape} do not match {system.n_dofs} DOFs")
    e = u_fine - u_ms
    out = []
    for K in (system.M, system.A):
        ref = float(u_fine @ (K @ u_fine))
        if not ref > 0.0:
            raise ZeroReferenceNorm("reference solution has zero norm")
        out.append(math.sqrt(max(float(e @ (K @ e)), 0.0) / ref))
    return tuple(out)


@dataclass(frozen=True)
class ReportRow:
    n_c: int
    dim: int
    l2: float
    h1: float


@dataclass
class ErrorReport:
    """Sweep results, one row per basis count, plus run metadata."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self):
        lines = ["N_c,dim,L2,H1"]
        lines += [f"{r.n_c},{r.dim},{r.l2:.6g},{r.h1:.6g}" for r in self.rows]
        return "\n".join(lines) + "\n"


def export_csv(report, path):
    """Write ``N_c,dim,L2,H1`` rows with six significant digits and LF endings."""
    Path(path).write_bytes(report.to_csv().encode("ascii"))


def read_csv(path):
    """Parse a file written by :func:`export_csv` back into an ErrorReport."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "N_c,dim,L2,H1":
        raise ValidationError(f"{path}: missing N_c,dim,L2,H1 header")
    rows = []
    for line in lines[1:]:
        n, d, l2, h1 = line.split(",")
        rows.append(ReportRow(int(n), int(d), float(l2), float(h1)))
    return ErrorReport(rows)


# --------------------------------------------------------------------------
# pipeline


class Experiment:
    """Lazily built, cached pipeline for one configuration.

    Attributes are computed on first access and reused, so a sweep performs
    exactly one fine solve and one local eigendecomposition per
    neighborhood.
    """

    def __init__(self, config):
        self.config = config
        self.timings = {}
        self._offline = None

    def _timed(self, stage, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0
        return out

    @cached_property
    def inclusions(self):
        c = self.config
        if c.domain == "custom":
            return list(c.inclusions)
        return preset_inclusions(c.domain, H=c.H, seed=c.preset_seed)

    @cached_property
    def domain(self):
        c = self.config
        segments = c.polygon_segments or (PRESETS[c.domain].segments if c.domain in PRESETS else 16)
        return mesher.build_domain(inclusions=self.inclusions, polygon_segments=segments, H=c.H)

    @cached_property
    def coarse(self):
        return mesher.build_coarse_grid(self.domain, self.config.H)

    @cached_property
    def mesh(self):
        return self._timed(
            "mesh", lambda: mesher.generate_fine_mesh(self.domain, self.coarse, self.config.h, self.config.min_angle)
        )

    @cached_property
    def operator(self):
        return self.config.make_operator()

    @cached_property
    def system(self):
        return self._timed("assemble", lambda: fem.assemble(self.operator, self.mesh, self.config.boundary_data()))

    @cached_property
    def reference(self):
        return self._timed("fine_solve", lambda: fem.fine_solve(self.operator, system=self.system))

    @cached_property
    def neighborhoods(self):
        return [mesher.build_neighborhood(self.coarse, self.mesh, i) for i in range(len(self.coarse.nodes))]

    @cached_property
    def pou(self):
        return gmsfem.build_pou(self.coarse, self.system.space)

    @cached_property
    def pressure(self):
        return gmsfem.coarse_pressure_space(self.system, self.coarse)

    @property
    def randomized_config(self):
        c = self.config
        return RandomizedConfig(k_nb=max(c.sweep) if c.sweep else 1, p_bf=c.buffer, t=c.layers, seed=c.seed)

    def snapshots(self, nb):
        mode, t = self.config.snapshots, self.config.layers
        if mode == "spectral":
            return gmsfem.snapshot_spectral(self.system, nb)
        if mode == "harmonic":
            plus = mesher.oversample(nb, t, self.mesh) if t else None
            return gmsfem.snapshot_harmonic(self.system, nb, plus)
        return randomized_snapshots(self.system, nb, self.randomized_config)

    def offline(self):
        """All local eigenpairs, one OfflineBasis per coarse node."""
        if self._offline is None:
            self._offline = self._timed(
                "offline",
                lambda: [gmsfem.offline_basis(self.system, nb, self.snapshots(nb)) for nb in self.neighborhoods],
            )
        return self._offline

    def coarse_space(self, n_c):
        """Coarse space with ``n_c`` basis functions per node and field component.

        A numerically dependent set is replaced by an orthonormal basis of
        its span; ``compressed`` is set on the result in that case.
        """
        bases = [b.truncate(n_c * self.system.ncomp) for b in self.offline()]
        try:
            space = gmsfem.assemble_R0(bases, self.pou, self.system)
        except RankDeficientCoarseSpace:
            space = gmsfem.assemble_R0(bases, self.pou, self.system, compress=True)
        space.insufficient = sum(b.insufficient for b in bases)
        return space

    def solve(self, n_c):
        """Multiscale solution with ``n_c`` basis functions per node and component."""
        space = self.coarse_space(n_c)

        def run():
            if isinstance(self.operator, fem.Stokes):
                _, _, u, p = gmsfem.coarse_solve_stokes(space, self.pressure, self.system)
            else:
                _, u = gmsfem.coarse_solve(space, self.system)
                p = None
            return u, p

        u, p = self._timed("coarse_solve", run)
        meta = {"n_c": n_c, "dim": space.dim, "compressed": space.compressed, "insufficient": space.insufficient}
        return fem.Solution(u, self.operator, fem.mesh_id(self.mesh), p, meta)

    def errors(self, solution):
        return relative_errors(solution.values, self.reference.values, self.system)


def run_experiment(config, experiment=None):
    """Run the basis-count sweep of ``config``.

    Returns an ErrorReport; an empty sweep returns an empty report without
    building anything.
    """
    if not config.sweep:
        return ErrorReport([], {"seed": config.seed})
    ex = Experiment(config) if experiment is None else experiment
    rows, flags = [], []
    for n_c in config.sweep:
        sol = ex.solve(n_c)
        l2, h1 = ex.errors(sol)
        rows.append(ReportRow(n_c, sol.meta["dim"], l2, h1))
        flags.append({k: sol.meta[k] for k in ("compressed", "insufficient")})
    meta = {
        "fine_dim": len(ex.system.free_dofs),
        "n_triangles": ex.mesh.n_triangles,
        "seed": config.seed,
        "flags": flags,
        "timings": dict(ex.timings),
    }
    if config.snapshots == "randomized":
        rc = ex.randomized_config
        meta["snapshot_fraction"] = snapshot_fraction(rc, ex.neighborhoods, ex.system)
        meta["solve_fraction"] = snapshot_fraction(rc, ex.neighborhoods, ex.system, per_solve=True)
    return ErrorReport(rows, meta)


# --------------------------------------------------------------------------
# solution files and VTK


def _vertex_fields(solution, mesh):
    """Point data on mesh vertices: ``(u, pressure)`` with ``u`` of shape (n,) or (n, 2)."""
    n = mesh.n_nodes
    ncomp = solution.operator.ncomp
    u = np.asarray(solution.values, dtype=float)
    if ncomp == 1:
        u = u[:n]
    else:
        # P2 spaces list the vertices first, so the first 2n entries are vertex values
        u = u[: ncomp * n].reshape(n, ncomp)
    p = None if solution.pressure is None else np.asarray(solution.pressure, dtype=float)[:n]
    return u, p


def export_vtk(solution, mesh, path):
    """Legacy ASCII VTK unstructured grid with point data ``u`` (and ``pressure``)."""
    u, p = _vertex_fields(solution, mesh)
    tris = mesh.triangles
    lines = [
        "# vtk DataFile Version 3.0",
        f"{solution.operator.name} solution",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {len(tris)} {4 * len(tris)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tris]
    lines.append(f"CELL_TYPES {len(tris)}")
    lines += ["5"] * len(tris)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    if u.ndim == 1:
        lines += ["SCALARS u double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in u]
    else:
        lines.append("VECTORS u double")
        lines += [f"{a:.17g} {b:.17g} 0" for a, b in u]
    if p is not None:
        lines += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in p]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def save_solution(solution, path):
    """Plain-text solution file: header, ``VALUES n`` block, optional ``PRESSURE m`` block."""
    lines = [f"SOLUTION {solution.operator.name} {solution.mesh_id}"]
    lines.append(f"VALUES {len(solution.values)}")
    lines += [repr(float(v)) for v in solution.values]
    if solution.pressure is not None:
        lines.append(f"PRESSURE {len(solution.pressure)}")
        lines += [repr(float(v)) for v in solution.pressure]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def load_solution(path, operator=None):
    """Read a file written by :func:`save_solution`.

    ``operator`` supplies the operator object; by default a default-parameter
    operator of the recorded kind is used.
    """
    lines = Path(path).read_text(encoding="ascii").splitlines()
    try:
        tag, name, mid = lines[0].split()
        if tag != "SOLUTION":
            raise ValueError("missing SOLUTION header")
        blocks, i = {}, 1
        while i < len(lines):
            key, n = lines[i].split()
            n = int(n)
            blocks[key] = np.array([float(v) for v in lines[i + 1: i + 1 + n]])
            if len(blocks[key]) != n:
                raise ValueError(f"{key} block is truncated")
            i += 1 + n
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed solution file ({exc})") from None
    if operator is None:
        operator = {"laplace": fem.Laplace, "elasticity": fem.Elasticity, "stokes": fem.Stokes}[name]()
    elif operator.name != name:
        raise ValidationError(f"{path}: holds a {name} solution, expected {operator.name}")
    return fem.Solution(blocks["VALUES"], operator, mid, blocks.get("PRESSURE"))


def with_overrides(config, **kw):
    """Copy of ``config`` with the non-None keyword values replaced."""
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
