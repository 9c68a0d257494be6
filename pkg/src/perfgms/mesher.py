"""Perforated-domain geometry, coarse grid, conforming fine mesh, neighborhoods.

The fine mesh is a constrained Delaunay triangulation refined to a minimum
angle (Shewchuk's Triangle).  Coarse-grid edges and the inclusion polygons
enter as constraints, so every coarse edge is a union of fine edges and every
hole is an internal boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import triangle

from .errors import (
    InclusionOutsideDomain,
    InvalidDomain,
    MalformedMeshFile,
    NonDivisibleH,
    OverlappingInclusions,
    RefinementFailure,
    TangentInclusion,
)

INTERIOR, OUTER, PERFORATION = 0, 1, 2
MARKER_NAMES = {INTERIOR: "Interior", OUTER: "Outer", PERFORATION: "Perforation"}

_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class PerforatedDomain:
    """Axis-aligned box minus a set of disjoint circular inclusions.

    Circles are represented by inscribed regular polygons with
    ``polygon_segments`` sides; all geometry downstream uses the polygons.
    """

    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    inclusions: tuple[Circle, ...] = ()
    polygon_segments: int = 16

    @property
    def width(self):
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self):
        return self.bbox[3] - self.bbox[1]

    def polygon(self, k):
        c = self.inclusions[k]
        theta = 2.0 * np.pi * np.arange(self.polygon_segments) / self.polygon_segments
        return np.column_stack(
            [c.center[0] + c.radius * np.cos(theta), c.center[1] + c.radius * np.sin(theta)]
        )

    def polygons(self):
        return [self.polygon(k) for k in range(len(self.inclusions))]

    def polygon_area(self, k):
        n = self.polygon_segments
        r = self.inclusions[k].radius
        return 0.5 * n * r * r * np.sin(2.0 * np.pi / n)

    def area(self):
        """Area of the perforated region with polygonal holes."""
        holes = sum(self.polygon_area(k) for k in range(len(self.inclusions)))
        return self.width * self.height - holes

    def hole_index(self, points):
        """Index of the inclusion polygon containing each point, -1 if none."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(points), -1, dtype=int)
        for k in range(len(self.inclusions)):
            inside = points_in_polygon(points, self.polygon(k))
            out[inside] = k
        return out


def points_in_polygon(points, poly):
    """Even-odd rule point-in-polygon test (points on the boundary are unspecified)."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xint)
    return inside


def build_domain(bbox=(0.0, 0.0, 1.0, 1.0), inclusions=(), polygon_segments=16, H=None):
    """Validate a perforated domain.

    Parameters
    ----------
    bbox : (xmin, ymin, xmax, ymax)
    inclusions : iterable of Circle or ((cx, cy), r)
    polygon_segments : int
        Number of sides of the inscribed polygon approximating each circle.
    H : float, optional
        Coarse mesh size.  When given, inclusions tangent to a coarse edge
        (within 1e-9) are rejected.
    """
    xmin, ymin, xmax, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise InvalidDomain(f"degenerate bounding box {bbox}")
    if int(polygon_segments) < 8:
        raise InvalidDomain("polygon_segments must be >= 8")
    circles = []
    for inc in inclusions:
        if not isinstance(inc, Circle):
            center, radius = inc
            inc = Circle((float(center[0]), float(center[1])), float(radius))
        if inc.radius <= 0:
            raise InvalidDomain(f"non-positive radius {inc.radius}")
        cx, cy = inc.center
        if not (xmin < cx - inc.radius and cx + inc.radius < xmax
                and ymin < cy - inc.radius and cy + inc.radius < ymax):
            raise InclusionOutsideDomain(f"inclusion {inc} not strictly inside {bbox}")
        circles.append(inc)
    for a in range(len(circles)):
        for b in range(a + 1, len(circles)):
            ca, cb = circles[a], circles[b]
            d = np.hypot(ca.center[0] - cb.center[0], ca.center[1] - cb.center[1])
            if d <= ca.radius + cb.radius:
                raise OverlappingInclusions(f"inclusions {a} and {b} intersect or touch")
    domain = PerforatedDomain((xmin, ymin, xmax, ymax), tuple(circles), int(polygon_segments))
    if H is not None:
        coarse = build_coarse_grid(domain, H)
        for k, c in enumerate(circles):
            d = _segment_distances(np.array(c.center), coarse.nodes, coarse.edges)
            if np.any(np.abs(d - c.radius) < 1e-9):
                raise TangentInclusion(f"inclusion {k} is tangent to a coarse edge")
    return domain


def crossing_quality(domain, coarse):
    """Worst crossing angle (degrees) and closest vertex clearance.

    Returns the smallest angle between any inclusion-polygon edge and a coarse
    edge it crosses (90 if nothing crosses), and the smallest distance from a
    polygon vertex to a coarse edge.  Sharp crossings create input angles the
    quality mesher cannot remove.
    """
    worst_angle, clearance = 90.0, np.inf
    a = coarse.nodes[coarse.edges[:, 0]]
    b = coarse.nodes[coarse.edges[:, 1]]
    d = b - a
    dn = np.hypot(*d.T)
    for poly in domain.polygons():
        for v in poly:
            clearance = min(clearance, _segment_distances(v, coarse.nodes, coarse.edges).min())
        for e in range(len(poly)):
            p, q = poly[e], poly[(e + 1) % len(poly)]
            r = q - p
            denom = d[:, 0] * r[1] - d[:, 1] * r[0]
            w = p - a
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (w[:, 0] * r[1] - w[:, 1] * r[0]) / denom
                u = (w[:, 0] * d[:, 1] - w[:, 1] * d[:, 0]) / denom
            hit = (s >= 0) & (s <= 1) & (u >= 0) & (u <= 1)
            if np.any(hit):
                sin = np.abs(denom[hit]) / (dn[hit] * np.hypot(*r))
                worst_angle = min(worst_angle, float(np.degrees(np.arcsin(np.clip(sin, 0, 1))).min()))
    return worst_angle, clearance


def _segment_distances(p, nodes, edges):
    a = nodes[edges[:, 0]]
    b = nodes[edges[:, 1]]
    ab = b - a
    s = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.hypot(*(proj - p).T)


@dataclass(frozen=True, eq=False)
class CoarseGrid:
    """Uniform right-triangle split of a square lattice.

    Square (i, j) with corners a=(i,j), b=(i+1,j), c=(i+1,j+1), d=(i,j+1)
    yields triangles (a,b,c) and (a,c,d); node (i, j) has index j*(nx+1)+i.
    """

    H: float
    nx: int
    ny: int
    origin: tuple[float, float]
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray

    def locate(self, points):
        """Coarse triangle index containing each point (ties resolved consistently)."""
        points = np.atleast_2d(points)
        u = (points[:, 0] - self.origin[0]) / self.H
        v = (points[:, 1] - self.origin[1]) / self.H
        i = np.clip(np.floor(u).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor(v).astype(int), 0, self.ny - 1)
        upper = (v - j) > (u - i)
        return 2 * (j * self.nx + i) + upper.astype(int)

    def barycentric(self, points, tri=None):
        """Barycentric coordinates of points in their (or given) coarse triangles."""
        points = np.atleast_2d(points)
        if tri is None:
            tri = self.locate(points)
        p = self.nodes[self.triangles[tri]]
        v0 = p[:, 1] - p[:, 0]
        v1 = p[:, 2] - p[:, 0]
        w = points - p[:, 0]
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (w[:, 0] * v1[:, 1] - w[:, 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * w[:, 1] - v0[:, 1] * w[:, 0]) / det
        return tri, np.column_stack([1.0 - l1 - l2, l1, l2])

    def node_triangles(self, i):
        return np.flatnonzero(np.any(self.triangles == i, axis=1))


def build_coarse_grid(domain, H):
    """Uniform triangulation of the bounding box with mesh size H."""
    H = float(H)
    if H <= 0:
        raise NonDivisibleH(f"H must be positive, got {H}")
    counts = []
    for length in (domain.width, domain.height):
        n = length / H
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise NonDivisibleH(f"side {length} is not an integer multiple of H={H}")
        counts.append(int(round(n)))
    nx, ny = counts
    x0, y0 = domain.bbox[0], domain.bbox[1]
    jj, ii = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    nodes = np.column_stack([x0 + ii.ravel() * H, y0 + jj.ravel() * H])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            tris.append((a, b, c))
            tris.append((a, c, d))
    triangles = np.array(tris, dtype=np.int64)
    edges = _unique_edges(triangles)
    for arr in (nodes, triangles, edges):
        arr.setflags(write=False)
    return CoarseGrid(H, nx, ny, (x0, y0), nodes, triangles, edges)


def _unique_edges(triangles):
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def edge_incidence(triangles):
    """Sorted unique edges and how many triangles share each."""
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


@dataclass(frozen=True, eq=False)
class FineMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_markers: np.ndarray
    node_markers: np.ndarray
    coarse_parent: np.ndarray
    min_angle: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        return signed_areas(self.nodes, self.triangles)

    def angles(self):
        """Interior angles in degrees, shape (n_triangles, 3)."""
        p = self.nodes[self.triangles]
        out = np.empty((len(p), 3))
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cosang = np.einsum("ij,ij->i", u, v) / (np.hypot(*u.T) * np.hypot(*v.T))
            out[:, k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return out

    def triangle_neighbors(self):
        """Edge-adjacent triangle pairs as an (m, 2) array."""
        if "neighbors" not in self._cache:
            t = self.triangles
            e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            owner = np.tile(np.arange(len(t)), 3)
            key = e[:, 0] * self.n_nodes + e[:, 1]
            order = np.argsort(key, kind="stable")
            ks, os_ = key[order], owner[order]
            same = ks[1:] == ks[:-1]
            self._cache["neighbors"] = np.column_stack([os_[:-1][same], os_[1:][same]])
        return self._cache["neighbors"]

    def same_as(self, other, atol=1e-15):
        return (
            np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.edge_markers, other.edge_markers)
            and np.array_equal(self.node_markers, other.node_markers)
            and np.array_equal(self.coarse_parent, other.coarse_parent)
            and self.nodes.shape == other.nodes.shape
            and np.allclose(self.nodes, other.nodes, rtol=0.0, atol=atol)
        )


def signed_areas(nodes, triangles):
    p = nodes[triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def _clip_segment(a, b, polygons, poly_points):
    """Split segment ab at polygon crossings; keep pieces outside all holes.

    Intersection points are appended to ``poly_points[k]`` as (edge index,
    edge parameter, point) so the polygon outline can be refined to match.
    """
    d = b - a
    cuts = [0.0, 1.0]
    for k, poly in enumerate(polygons):
        n = len(poly)
        for e in range(n):
            p, q = poly[e], poly[(e + 1) % n]
            r = q - p
            denom = d[0] * r[1] - d[1] * r[0]
            w = p - a
            if abs(denom) < _GEOM_TOL * np.hypot(*d) * np.hypot(*r):
                # parallel; collinear overlap is a degenerate configuration
                if abs(w[0] * d[1] - w[1] * d[0]) < _GEOM_TOL * np.hypot(*d) ** 2:
                    s0 = np.dot(p - a, d) / np.dot(d, d)
                    s1 = np.dot(q - a, d) / np.dot(d, d)
                    if max(s0, s1) > 0 and min(s0, s1) < 1:
                        raise RefinementFailure("inclusion polygon edge overlaps a coarse edge")
                continue
            s = (w[0] * r[1] - w[1] * r[0]) / denom
            u = (w[0] * d[1] - w[1] * d[0]) / denom
            if -_GEOM_TOL <= s <= 1 + _GEOM_TOL and -_GEOM_TOL <= u <= 1 + _GEOM_TOL:
                s = min(max(s, 0.0), 1.0)
                cuts.append(s)
                if _GEOM_TOL < u < 1 - _GEOM_TOL:
                    poly_points[k].append((e, u, a + s * d))
    cuts = np.unique(np.round(np.array(cuts), 14))
    pieces = []
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        if s1 - s0 < 1e-13:
            continue
        mid = a + 0.5 * (s0 + s1) * d
        if not any(points_in_polygon(mid[None], poly)[0] for poly in polygons):
            pieces.append((a + s0 * d, a + s1 * d))
    return pieces


class _PointIndex:
    def __init__(self, tol=1e-12):
        self.tol = tol
        self.points = []
        self.lookup = {}

    def add(self, p):
        key = (round(p[0] / self.tol), round(p[1] / self.tol))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                hit = self.lookup.get((key[0] + dx, key[1] + dy))
                if hit is not None and np.hypot(*(self.points[hit] - p)) <= self.tol:
                    return hit
        self.points.append(np.asarray(p, dtype=float))
        self.lookup[key] = len(self.points) - 1
        return len(self.points) - 1


def generate_fine_mesh(domain, coarse, h_target=None, min_angle=20.0, max_area=None):
    """Conforming quality triangulation of the perforated domain.

    Parameters
    ----------
    domain : PerforatedDomain
    coarse : CoarseGrid
    h_target : float
        Target fine edge length; the area bound is that of an equilateral
        triangle with this edge, ``sqrt(3)/4 * h_target**2``.
    min_angle : float
        Minimum interior angle in degrees (at most 30).
    max_area : float, optional
        Explicit area bound overriding ``h_target``.
    """
    if min_angle > 30.0:
        raise RefinementFailure(f"min_angle {min_angle} exceeds 30 degrees")
    if max_area is None:
        if h_target is None or not (0 < h_target < coarse.H):
            raise RefinementFailure(f"h_target must lie in (0, H), got {h_target}")
        max_area = 0.25 * np.sqrt(3.0) * h_target * h_target

    polygons = domain.polygons()
    extra = [[] for _ in polygons]
    index = _PointIndex()
    segments, seg_marker = [], []

    def add_segment(p, q, marker):
        i, j = index.add(p), index.add(q)
        if i != j:
            segments.append((i, j))
            seg_marker.append(marker)

    xmin, ymin, xmax, ymax = domain.bbox
    for a_idx, b_idx in coarse.edges:
        a, b = coarse.nodes[a_idx], coarse.nodes[b_idx]
        on_outer = (
            (abs(a[0] - b[0]) < _GEOM_TOL and (abs(a[0] - xmin) < _GEOM_TOL or abs(a[0] - xmax) < _GEOM_TOL))
            or (abs(a[1] - b[1]) < _GEOM_TOL and (abs(a[1] - ymin) < _GEOM_TOL or abs(a[1] - ymax) < _GEOM_TOL))
        )
        for p, q in _clip_segment(a, b, polygons, extra):
            add_segment(p, q, OUTER if on_outer else INTERIOR)

    for k, poly in enumerate(polygons):
        n = len(poly)
        outline = []
        for e in range(n):
            outline.append(poly[e])
            hits = sorted((u, tuple(pt)) for (edge, u, pt) in extra[k] if edge == e)
            outline.extend(np.array(pt) for _, pt in hits)
        for i in range(len(outline)):
            add_segment(outline[i], outline[(i + 1) % len(outline)], PERFORATION)

    # A box corner touched by no coarse diagonal would otherwise sit in a fine
    # triangle with all three vertices on the outer boundary; seeding a vertex
    # just inside couples the corner to the interior.
    h = np.sqrt(4.0 * max_area / np.sqrt(3.0))
    degree = np.bincount(np.asarray(coarse.edges).ravel(), minlength=len(coarse.nodes))
    for x, y in ((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)):
        node = int(np.argmin(np.hypot(coarse.nodes[:, 0] - x, coarse.nodes[:, 1] - y)))
        if degree[node] > 2:
            continue
        seed = np.array([x + 0.5 * h * np.sign(0.5 * (xmin + xmax) - x),
                         y + 0.5 * h * np.sign(0.5 * (ymin + ymax) - y)])
        if domain.inclusions and any(np.hypot(*(seed - c.center)) < c.radius + 0.5 * h for c in domain.inclusions):
            continue
        index.add(seed)

    pslg = {
        "vertices": np.array(index.points),
        "segments": np.array(segments, dtype=np.int32),
    }
    if polygons:
        pslg["holes"] = np.array([c.center for c in domain.inclusions])
    out = triangle.triangulate(pslg, f"pq{min_angle:.6g}a{max_area:.12g}Q")
    nodes = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)

    # belt and braces: drop anything whose centroid sits in a hole
    centroids = nodes[tris].mean(axis=1)
    tris = tris[domain.hole_index(centroids) < 0]
    used = np.unique(tris)
    remap = np.full(len(nodes), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes, tris = nodes[used], remap[tris]

    area = signed_areas(nodes, tris)
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    edges, counts = edge_incidence(tris)
    if np.any(counts > 2):
        raise RefinementFailure("non-manifold triangulation")
    bedges = edges[counts == 1]
    mid = nodes[bedges].mean(axis=1)
    outer = (
        (np.abs(mid[:, 0] - xmin) < 1e-10) | (np.abs(mid[:, 0] - xmax) < 1e-10)
        | (np.abs(mid[:, 1] - ymin) < 1e-10) | (np.abs(mid[:, 1] - ymax) < 1e-10)
    )
    emark = np.where(outer, OUTER, PERFORATION).astype(np.int64)
    nmark = np.zeros(len(nodes), dtype=np.int64)
    nmark[bedges[emark == PERFORATION].ravel()] = PERFORATION
    nmark[bedges[emark == OUTER].ravel()] = OUTER

    parent = coarse.locate(nodes[tris].mean(axis=1))
    mesh = FineMesh(nodes, tris, bedges, emark, nmark, parent, float(min_angle))
    worst = mesh.angles().min()
    if worst < min_angle - 1e-6:
        raise RefinementFailure(
            f"minimum angle {worst:.3f} below bound {min_angle}; "
            "an inclusion probably meets a coarse edge at a sharp angle"
        )
    for arr in (nodes, tris, bedges, emark, nmark, parent):
        arr.setflags(write=False)
    return mesh


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Fine-element patch around one coarse node.

    ``base_elements`` is the un-oversampled patch; it equals
    ``fine_elements`` when ``oversample_layers == 0``.
    """

    coarse_node: int
    fine_elements: np.ndarray
    local_to_global: np.ndarray
    boundary_dofs: np.ndarray
    perforation_dofs: np.ndarray
    oversample_layers: int
    base_elements: np.ndarray


def patch_boundary_edges(mesh, elements):
    """Vertex pairs of edges used by exactly one triangle of the patch."""
    edges, counts = edge_incidence(mesh.triangles[elements])
    return edges[counts == 1]


def _make_neighborhood(mesh, i, elements, layers, base):
    elements = np.unique(elements)
    nodes = np.unique(mesh.triangles[elements])
    bnd = np.unique(patch_boundary_edges(mesh, elements))
    bnd = bnd[mesh.node_markers[bnd] != PERFORATION]
    perf = nodes[mesh.node_markers[nodes] == PERFORATION]
    for arr in (elements, nodes, bnd, perf):
        arr.setflags(write=False)
    return Neighborhood(int(i), elements, nodes, bnd, perf, int(layers),
                        elements if base is None else base)


def build_neighborhood(coarse, mesh, i):
    """Coarse neighborhood of coarse node ``i`` (no oversampling)."""
    ctris = coarse.node_triangles(i)
    elements = np.flatnonzero(np.isin(mesh.coarse_parent, ctris))
    return _make_neighborhood(mesh, i, elements, 0, None)


def oversample(neighborhood, t, mesh):
    """Grow a neighborhood by ``t`` layers of fine triangles.

    Each layer adds every triangle sharing at least a vertex with the current
    region, the unstructured analogue of a ring of fine grid cells.
    """
    if t == 0:
        return neighborhood
    if t < 0:
        raise ValueError("oversampling layers must be non-negative")
    inside = np.zeros(mesh.n_triangles, dtype=bool)
    inside[neighborhood.fine_elements] = True
    for _ in range(t):
        touched = np.zeros(mesh.n_nodes, dtype=bool)
        touched[mesh.triangles[inside]] = True
        inside |= touched[mesh.triangles].any(axis=1)
    return _make_neighborhood(
        mesh,
        neighborhood.coarse_node,
        np.flatnonzero(inside),
        neighborhood.oversample_layers + t,
        neighborhood.base_elements,
    )


def save_mesh(mesh, path):
    """Write the plain-text mesh format (NODES / TRIANGLES / EDGES sections)."""
    lines = [f"NODES {mesh.n_nodes}"]
    lines += [
        f"{i} {x!r} {y!r} {m}"
        for i, ((x, y), m) in enumerate(zip(mesh.nodes.tolist(), mesh.node_markers.tolist()))
    ]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [
        f"{i} {a} {b} {c} {p}"
        for i, ((a, b, c), p) in enumerate(zip(mesh.triangles.tolist(), mesh.coarse_parent.tolist()))
    ]
    lines.append(f"EDGES {len(mesh.edges)}")
    lines += [f"{a} {b} {m}" for (a, b), m in zip(mesh.edges.tolist(), mesh.edge_markers.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def load_mesh(path, min_angle=0.0):
    """Read a mesh written by :func:`save_mesh`, validating indices and orientation."""
    raw = Path(path).read_text(encoding="ascii").split("\n")
    pos = 0

    def header(name):
        nonlocal pos
        while pos < len(raw) and not raw[pos].strip():
            pos += 1
        if pos >= len(raw):
            raise MalformedMeshFile(f"missing {name} section", pos + 1)
        parts = raw[pos].split()
        if len(parts) != 2 or parts[0] != name or not parts[1].isdigit():
            raise MalformedMeshFile(f"expected '{name} <count>'", pos + 1)
        pos += 1
        return int(parts[1])

    def rows(count, width, kinds):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(raw):
                raise MalformedMeshFile("unexpected end of file", pos + 1)
            parts = raw[pos].split()
            if len(parts) != width:
                raise MalformedMeshFile(f"expected {width} fields, got {len(parts)}", pos + 1)
            try:
                out.append([k(v) for k, v in zip(kinds, parts)])
            except ValueError as exc:
                raise MalformedMeshFile(str(exc), pos + 1) from None
            pos += 1
        return out

    n = header("NODES")
    node_start = pos + 1
    nrows = rows(n, 4, (int, float, float, int))
    m = header("TRIANGLES")
    tri_start = pos + 1
    trows = rows(m, 5, (int,) * 5)
    k = header("EDGES")
    edge_start = pos + 1
    erows = rows(k, 3, (int,) * 3)

    for i, r in enumerate(nrows):
        if r[0] != i:
            raise MalformedMeshFile(f"node index {r[0]} out of sequence", node_start + i)
        if r[3] not in MARKER_NAMES:
            raise MalformedMeshFile(f"unknown node marker {r[3]}", node_start + i)
    nodes = np.array([[r[1], r[2]] for r in nrows], dtype=float).reshape(-1, 2)
    for i, r in enumerate(trows):
        if r[0] != i:
            raise MalformedMeshFile(f"triangle index {r[0]} out of sequence", tri_start + i)
        if min(r[1:4]) < 0 or max(r[1:4]) >= n:
            raise MalformedMeshFile("triangle references a missing node", tri_start + i)
    tris = np.array([r[1:4] for r in trows], dtype=np.int64).reshape(-1, 3)
    area = signed_areas(nodes, tris)
    bad = np.flatnonzero(area <= 0)
    if len(bad):
        raise MalformedMeshFile("triangle has non-positive signed area", tri_start + int(bad[0]))
    for i, r in enumerate(erows):
        if min(r[:2]) < 0 or max(r[:2]) >= n:
            raise MalformedMeshFile("edge references a missing node", edge_start + i)
        if r[2] not in (OUTER, PERFORATION):
            raise MalformedMeshFile(f"unknown edge marker {r[2]}", edge_start + i)
    return FineMesh(
        nodes,
        tris,
        np.array([r[:2] for r in erows], dtype=np.int64).reshape(-1, 2),
        np.array([r[2] for r in erows], dtype=np.int64),
        np.array([r[3] for r in nrows], dtype=np.int64),
        np.array([r[4] for r in trows], dtype=np.int64),
        float(min_angle),
    )
