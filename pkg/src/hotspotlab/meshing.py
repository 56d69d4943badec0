"""Boundary-conforming triangulation of the mixed domains.

Strategy: place graded boundary nodes along each curve (spacing h, refined by
a factor 4 next to the two corners), thin a multi-resolution interior lattice
against the local size target, Delaunay-triangulate, and run a few Laplacian
smoothing sweeps with retriangulation.  Convexity of the domains guarantees
the Delaunay triangulation of the node set fills exactly the polygon through
the boundary nodes, so boundary edges are the consecutive boundary pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import BoundaryCurve, MixedDomain, points_in_polygon

NEUMANN = 1
DIRICHLET = 2

_CORNER_REFINE = 4.0
_GRADE_SLOPE = 0.5


class MeshingError(RuntimeError):
    pass


@dataclass
class TriMesh:
    """Conforming triangulation with tagged boundary edges.

    ``vertices`` is (n, 2); ``triangles`` (m, 3) with positive orientation;
    ``boundary_edges`` (e, 2) vertex pairs with parallel ``boundary_tags``
    (NEUMANN on gamma1, DIRICHLET on gamma2).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    h: float
    domain: MixedDomain | None = None
    _tri_finder: Delaunay | None = field(default=None, repr=False)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def dirichlet_vertices(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        mask[self.boundary_edges[self.boundary_tags == DIRICHLET].ravel()] = True
        return mask

    @cached_property
    def edge_count(self) -> int:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        return len(np.unique(e, axis=0))

    def euler_characteristic(self) -> int:
        """V - E + F with the outer face excluded (1 for a disk-like mesh)."""
        return len(self.vertices) - self.edge_count + len(self.triangles)

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, i] - p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            cosang = np.sum(a * b, axis=1) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cosang, -1, 1)))
        return float(np.min(angles))

    def find_triangles(self, points: np.ndarray) -> np.ndarray:
        if self._tri_finder is None:
            raise MeshingError("mesh carries no point-location structure")
        return self._tri_finder.find_simplex(points)

    def interpolate(self, values: np.ndarray, points: np.ndarray,
                    pull_anchor=None) -> np.ndarray:
        """P1 interpolation of a nodal field; points marginally outside the
        polygon (curved-boundary samples) are pulled toward ``pull_anchor``."""
        pts = np.asarray(points, dtype=float).copy()
        simplex = self.find_triangles(pts)
        missing = simplex < 0
        if np.any(missing):
            if pull_anchor is None:
                pull_anchor = self.vertices.mean(axis=0)
            anchor = np.asarray(pull_anchor, dtype=float)
            for idx in np.nonzero(missing)[0]:
                p = pts[idx]
                lo, hi = 0.0, 1.0  # walk toward the anchor until inside
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    cand = p + mid * (anchor - p)
                    if self._tri_finder.find_simplex(cand[None, :])[0] >= 0:
                        hi = mid
                    else:
                        lo = mid
                pts[idx] = p + hi * (anchor - p)
            simplex = self.find_triangles(pts)
            if np.any(simplex < 0):
                raise MeshingError("interpolation point outside the mesh")
        trans = self._tri_finder.transform[simplex]
        bary = np.einsum("nij,nj->ni", trans[:, :2],
                         pts - trans[:, 2])
        bary = np.concatenate([bary, 1 - bary.sum(axis=1, keepdims=True)], axis=1)
        tri_vertices = self._tri_finder.simplices[simplex]
        return np.sum(values[tri_vertices] * bary, axis=1)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{len(self.vertices)}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            fh.write(f"{len(self.triangles)}\n")
            for i, j, k in self.triangles:
                fh.write(f"{i} {j} {k}\n")
            for (i, j), tag in zip(self.boundary_edges, self.boundary_tags):
                name = "NEUMANN" if tag == NEUMANN else "DIRICHLET"
                fh.write(f"{i} {j} {name}\n")


def load_mesh(path) -> TriMesh:
    with open(path) as fh:
        lines = fh.read().split("\n")
    pos = 0
    nv = int(lines[pos]); pos += 1
    verts = np.array([[float(v) for v in lines[pos + i].split()] for i in range(nv)])
    pos += nv
    nt = int(lines[pos]); pos += 1
    tris = np.array([[int(v) for v in lines[pos + i].split()] for i in range(nt)],
                    dtype=int)
    pos += nt
    edges, tags = [], []
    for line in lines[pos:]:
        if not line.strip():
            continue
        i, j, name = line.split()
        edges.append((int(i), int(j)))
        tags.append(NEUMANN if name == "NEUMANN" else DIRICHLET)
    mesh = TriMesh(verts, tris, np.array(edges, dtype=int),
                   np.array(tags, dtype=int), h=0.0)
    finder = Delaunay(verts)
    mesh._tri_finder = finder
    return mesh


# ---------------------------------------------------------------------------
# construction


def _curve_nodes(curve: BoundaryCurve, h: float) -> np.ndarray:
    """Nodes along one curve, graded to h/4 near both endpoints, on-curve."""
    dense_t = np.linspace(0.0, 1.0, 4096)
    dense = curve.point(dense_t)
    seg = np.abs(np.diff(dense))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    length = s[-1]

    def target(si):
        return min(h, h / _CORNER_REFINE + _GRADE_SLOPE * min(si, length - si))

    # one greedy pass, then rescale so the walk lands exactly on the far corner
    walk = [0.0]
    while walk[-1] < length:
        walk.append(walk[-1] + target(walk[-1]))
    walk = np.asarray(walk) * (length / walk[-1])
    t_nodes = np.interp(walk, s, dense_t)
    return np.asarray(curve.point(t_nodes))


def _interior_seeds(domain: MixedDomain, h: float) -> np.ndarray:
    poly = domain.boundary_polygon
    corners = np.array(domain.corners)
    lo = np.array([poly.real.min(), poly.imag.min()]) - h
    hi = np.array([poly.real.max(), poly.imag.max()]) + h
    out = []
    for pitch in (h, h / 2, h / _CORNER_REFINE):
        nx = int(np.ceil((hi[0] - lo[0]) / pitch)) + 1
        ny = int(np.ceil((hi[1] - lo[1]) / (pitch * math.sqrt(3) / 2))) + 1
        xs = lo[0] + pitch * np.arange(nx)
        ys = lo[1] + pitch * math.sqrt(3) / 2 * np.arange(ny)
        X, Y = np.meshgrid(xs, ys)
        X[1::2] += pitch / 2
        pts = X.ravel() + 1j * Y.ravel()
        dc = np.min(np.abs(pts[:, None] - corners[None, :]), axis=1)
        band = np.minimum(h, h / _CORNER_REFINE + _GRADE_SLOPE * dc)
        if pitch == h:
            keep = band >= h * 0.999
        else:
            keep = (band <= 2 * pitch) & (band > pitch * 0.999)
        out.append(pts[keep])
    return np.concatenate(out)


def mesh_domain(domain: MixedDomain, h: float, smoothing_sweeps: int = 3) -> TriMesh:
    """Boundary-conforming triangulation with corner-graded resolution."""
    if not 0 < h < domain.diameter / 4:
        raise ValueError("h must lie in (0, diameter/4)")
    g1_nodes = _curve_nodes(domain.gamma1, h)
    g2_nodes = _curve_nodes(domain.gamma2, h)
    # closed loop: gamma1 then reversed gamma2 without repeated corners
    boundary = np.concatenate([g1_nodes, g2_nodes[::-1][1:-1]])
    n1 = len(g1_nodes)
    nb = len(boundary)

    corners = np.array(domain.corners)
    dc = np.min(np.abs(boundary[:, None] - corners[None, :]), axis=1)
    local = np.minimum(h, h / _CORNER_REFINE + _GRADE_SLOPE * dc)

    seeds = _interior_seeds(domain, h)
    inside = points_in_polygon(boundary, seeds)
    seeds = seeds[inside]
    sc = np.min(np.abs(seeds[:, None] - corners[None, :]), axis=1)
    seed_local = np.minimum(h, h / _CORNER_REFINE + _GRADE_SLOPE * sc)

    # clear the boundary band, then Poisson-thin against accepted points
    btree = cKDTree(np.c_[boundary.real, boundary.imag])
    d_b, _ = btree.query(np.c_[seeds.real, seeds.imag])
    keep = d_b > 0.72 * seed_local
    seeds, seed_local = seeds[keep], seed_local[keep]

    order = np.lexsort((seeds.real, seeds.imag, np.round(seed_local / h * 8)))
    seeds, seed_local = seeds[order], seed_local[order]
    accepted = list(boundary)
    accepted_r = list(local)
    tree_pts = np.c_[np.real(accepted), np.imag(accepted)]
    tree = cKDTree(tree_pts)
    batch_new = []
    for z, rloc in zip(seeds, seed_local):
        near = tree.query_ball_point([z.real, z.imag], 0.78 * rloc)
        ok = not near
        if ok and batch_new:
            arr = np.asarray(batch_new)
            if np.any(np.abs(arr - z) < 0.78 * rloc):
                ok = False
        if ok:
            batch_new.append(z)
            if len(batch_new) >= 256:
                accepted.extend(batch_new)
                tree_pts = np.c_[np.real(accepted), np.imag(accepted)]
                tree = cKDTree(tree_pts)
                batch_new = []
    accepted.extend(batch_new)
    pts = np.asarray(accepted)

    xy = np.c_[pts.real, pts.imag]
    tri = Delaunay(xy)
    for _ in range(smoothing_sweeps):
        xy = _smooth(tri, xy, nb)
        tri = Delaunay(xy)

    triangles = tri.simplices.copy()
    p = xy[triangles]
    areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                   - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = areas < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    degenerate = np.abs(areas) < 1e-14 * h * h
    if np.any(degenerate):
        raise MeshingError("Delaunay produced a degenerate triangle")

    idx = np.arange(nb)
    edges = np.c_[idx, (idx + 1) % nb]
    tags = np.where(edges[:, 0] < n1 - 1, NEUMANN, DIRICHLET)
    # the closing edge (last boundary node back to node 0) lies on gamma2,
    # as do all edges whose first node is past the gamma1 run
    mesh = TriMesh(xy, triangles, edges, tags.astype(int), h, domain)
    mesh._tri_finder = tri
    return mesh


def _smooth(tri: Delaunay, xy: np.ndarray, n_boundary: int) -> np.ndarray:
    n = len(xy)
    indptr, indices = tri.vertex_neighbor_vertices
    new = xy.copy()
    for v in range(n_boundary, n):
        nb = indices[indptr[v]:indptr[v + 1]]
        if len(nb):
            new[v] = xy[nb].mean(axis=0)
    return new
