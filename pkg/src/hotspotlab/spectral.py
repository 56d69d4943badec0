"""Mixed Dirichlet-Neumann ground state on a triangulated domain.

P1 conforming elements, Dirichlet degrees of freedom eliminated, Neumann
natural.  The smallest eigenpair comes from shift-invert inverse iteration
with a sparse factorization and a deterministic all-ones start; the second
eigenvalue (needed only for the expansion cross-check precondition) from a
two-vector block of the same iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import bessel
from .geometry import MixedDomain
from .meshing import DIRICHLET, NEUMANN, TriMesh


class EigenSolveError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# assembly


def triangle_stiffness(coords: np.ndarray) -> np.ndarray:
    """3x3 P1 stiffness block for one triangle given its vertex coordinates."""
    b = np.array([coords[1, 1] - coords[2, 1],
                  coords[2, 1] - coords[0, 1],
                  coords[0, 1] - coords[1, 1]])
    c = np.array([coords[2, 0] - coords[1, 0],
                  coords[0, 0] - coords[2, 0],
                  coords[1, 0] - coords[0, 0]])
    area = 0.5 * ((coords[1, 0] - coords[0, 0]) * (coords[2, 1] - coords[0, 1])
                  - (coords[1, 1] - coords[0, 1]) * (coords[2, 0] - coords[0, 0]))
    if area <= 0:
        raise EigenSolveError("degenerate or misoriented triangle")
    return (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)


@dataclass
class AssembledSystem:
    """Stiffness/mass pair on the free (non-Dirichlet) vertices."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    free: np.ndarray           # indices of free vertices
    M_full: sp.csr_matrix      # mass on all vertices (for integrals)
    mesh: TriMesh


def assemble(mesh: TriMesh) -> AssembledSystem:
    verts = mesh.vertices
    tris = mesh.triangles
    p = verts[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(area <= 0):
        raise EigenSolveError("mesh contains a degenerate triangle")

    b = np.stack([p[:, 1, 1] - p[:, 2, 1],
                  p[:, 2, 1] - p[:, 0, 1],
                  p[:, 0, 1] - p[:, 1, 1]], axis=1)
    c = np.stack([p[:, 2, 0] - p[:, 1, 0],
                  p[:, 0, 0] - p[:, 2, 0],
                  p[:, 1, 0] - p[:, 0, 0]], axis=1)
    ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) \
        / (4.0 * area)[:, None, None]
    me = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = len(verts)
    K_full = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M_full = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    free = np.nonzero(~mesh.dirichlet_vertices)[0]
    K = K_full[np.ix_(free, free)].tocsr()
    M = M_full[np.ix_(free, free)].tocsr()
    return AssembledSystem(K, M, free, M_full, mesh)


# ---------------------------------------------------------------------------
# eigensolve


@dataclass
class EigenPair:
    mu1: float
    psi1: np.ndarray           # nodal values on ALL vertices, Dirichlet rows 0
    residual: float
    mesh: TriMesh
    mu2: Optional[float] = None

    def value_at(self, points: np.ndarray, pull_anchor=None) -> np.ndarray:
        return self.mesh.interpolate(self.psi1, points, pull_anchor=pull_anchor)


def smallest_eigenpair(system: AssembledSystem, tol: float = 1e-10,
                       max_iter: int = 200, want_second: bool = False) -> EigenPair:
    """Smallest generalized eigenpair by inverse iteration from shift 0."""
    K, M = system.K, system.M
    n = K.shape[0]
    lu = splu(K.tocsc())
    k_vec = 2 if want_second else 1
    X = np.ones((n, k_vec))
    if want_second:
        X[::2, 1] = -1.0  # deterministic second start, M-independent of ones
    mu = np.zeros(k_vec)
    residual = math.inf
    for _ in range(max_iter):
        Y = np.column_stack([lu.solve(np.asarray(M @ X[:, j])) for j in range(k_vec)])
        # M-orthonormalize (Gram-Schmidt, then Rayleigh-Ritz for the block)
        for j in range(k_vec):
            for i in range(j):
                Y[:, j] -= (Y[:, i] @ (M @ Y[:, j])) * Y[:, i]
            Y[:, j] /= math.sqrt(Y[:, j] @ (M @ Y[:, j]))
        if k_vec > 1:
            Kr = Y.T @ (K @ Y)
            Mr = Y.T @ (M @ Y)
            w, V = np.linalg.eigh(np.linalg.solve(Mr, Kr))
            order = np.argsort(w)
            Y = Y @ V[:, order]
            for j in range(k_vec):
                Y[:, j] /= math.sqrt(Y[:, j] @ (M @ Y[:, j]))
            mu = w[order]
        else:
            mu = np.array([(Y[:, 0] @ (K @ Y[:, 0]))])
        X = Y
        r = K @ X[:, 0] - mu[0] * (M @ X[:, 0])
        residual = float(np.linalg.norm(r) / np.linalg.norm(X[:, 0]))
        if residual < tol * max(mu[0], 1.0):
            break
    else:
        raise EigenSolveError(
            f"inverse iteration stalled at residual {residual:.3e}")

    x = X[:, 0]
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    psi = np.zeros(len(system.mesh.vertices))
    psi[system.free] = x
    pair = EigenPair(float(mu[0]), psi, residual, system.mesh,
                     mu2=float(mu[1]) if want_second else None)
    return pair


# ---------------------------------------------------------------------------
# closed-form references


HALF_DISK_NEUMANN_ARC = "half_disk_neumann_arc"
HALF_DISK_DIRICHLET_ARC = "half_disk_dirichlet_arc"
SECTOR = "sector"


def reference_eigen(case: str, half_angle: float | None = None):
    """Exact ground pair by separation of variables.

    Returns ``(mu1, psi)`` with ``psi`` an unnormalized evaluator on (n, 2)
    coordinate arrays, matching the built-in domain orientations (upper
    half-disk for the Neumann-arc case, lower for the Dirichlet-arc case,
    sector symmetric about the vertical axis).
    """
    if case == HALF_DISK_NEUMANN_ARC:
        root = bessel.j_prime_zero(1.0)

        def psi(pts):
            pts = np.asarray(pts, dtype=float)
            r = np.hypot(pts[..., 0], pts[..., 1])
            th = np.arctan2(pts[..., 1], pts[..., 0])
            return _bessel_vec(1.0, root * r) * np.sin(th)

        return root**2, psi
    if case == HALF_DISK_DIRICHLET_ARC:
        root = bessel.j_zero(0.0)

        def psi(pts):
            pts = np.asarray(pts, dtype=float)
            r = np.hypot(pts[..., 0], pts[..., 1])
            return _bessel_vec(0.0, root * r)

        return root**2, psi
    if case == SECTOR:
        if half_angle is None:
            raise ValueError("sector reference needs the half-angle")
        nu = math.pi / (2.0 * half_angle)
        root = bessel.j_prime_zero(nu)
        theta0 = math.pi / 2 - half_angle

        def psi(pts):
            pts = np.asarray(pts, dtype=float)
            r = np.hypot(pts[..., 0], pts[..., 1])
            th = np.arctan2(pts[..., 1], pts[..., 0])
            return _bessel_vec(nu, root * r) * np.sin(nu * (th - theta0))

        return root**2, psi
    raise ValueError(f"unsupported reference case {case!r}")


def _bessel_vec(nu: float, x: np.ndarray) -> np.ndarray:
    flat = np.asarray(x, dtype=float).ravel()
    out = np.array([bessel.bessel_j(nu, xi) for xi in flat])
    return out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# hot spot and monotonicity


@dataclass
class HotspotReport:
    argmax: complex
    max_value: float
    dist_to_gamma1: float


def hotspot_locate(pair: EigenPair, mesh: TriMesh) -> HotspotReport:
    """Vertex argmax of psi1 with a quadratic refinement over its star."""
    psi = pair.psi1
    v = int(np.argmax(psi))
    finder = mesh._tri_finder
    indptr, indices = finder.vertex_neighbor_vertices
    star = np.concatenate([[v], indices[indptr[v]:indptr[v + 1]]])
    pts = mesh.vertices[star]
    vals = psi[star]
    best = mesh.vertices[v]
    best_val = float(psi[v])
    if len(star) >= 6:
        x, y = pts[:, 0] - best[0], pts[:, 1] - best[1]
        A = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
        coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
        H = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]])
        gradc = np.array([coef[1], coef[2]])
        eig = np.linalg.eigvalsh(H)
        if np.all(eig < 0):
            step = np.linalg.solve(H, -gradc)
            radius = float(np.max(np.hypot(x, y)))
            if np.hypot(*step) <= radius:
                cand = best + step
                cand_val = float(coef[0] + gradc @ step + 0.5 * step @ H @ step)
                best, best_val = cand, max(best_val, cand_val)
    z = complex(best[0], best[1])
    dist = float(pair.mesh.domain.distance_to_gamma1(z)[0])
    return HotspotReport(z, best_val, dist)


@dataclass
class RayCurve:
    """Sample path ordered toward gamma1 along which monotonicity is asserted."""

    kind: str                  # "euclidean" | "hyperbolic"
    theta: float
    points: np.ndarray         # complex samples, last one on (or near) gamma1


def euclidean_rays(domain: MixedDomain, thetas, n: int = 48,
                   r_start: float = 0.04) -> list:
    """Radii {r e^{i theta}} clipped to the domain, ordered toward gamma1.

    When gamma1 is the circular arc the rays run outward and end on the arc.
    For the swapped half-disk (gamma1 = diameter) the part of each radius in D
    runs from the arc down to the origin, which lies on gamma1, so the samples
    are ordered by decreasing radius and end at 0.
    """
    out = []
    toward_origin = domain.arc_role == "gamma2"
    for th in np.atleast_1d(thetas):
        if toward_origin:
            r = np.linspace(1.0, 0.0, n)
        else:
            r = np.linspace(r_start, 1.0, n)
        pts = r * np.exp(1j * th)
        out.append(RayCurve("euclidean", float(th), pts))
    return out


def hyperbolic_rays(map_like, thetas, n: int = 48, r_start: float = 0.02) -> list:
    """Images under the disk map of the radii of U+, ordered toward gamma1."""
    out = []
    for th in np.atleast_1d(thetas):
        r = np.linspace(r_start, 1.0, n)
        pts = np.asarray(map_like.eval(r * np.exp(1j * th), 0))
        out.append(RayCurve("hyperbolic", float(th), pts))
    return out


@dataclass
class MonotonicityReport:
    violations: int
    min_increment: float


def monotonicity_along_curve(mesh: TriMesh, values: np.ndarray,
                             curve: RayCurve) -> MonotonicityReport:
    """Count strict decreases of the P1-interpolated field along the curve."""
    pts = np.c_[curve.points.real, curve.points.imag]
    field = mesh.interpolate(values, pts)
    rng = float(np.max(values) - np.min(values)) or 1.0
    inc = np.diff(field)
    tolerance = 1e-8 * rng
    return MonotonicityReport(int(np.sum(inc < -tolerance)),
                              float(np.min(inc)) if len(inc) else 0.0)


# ---------------------------------------------------------------------------
# spectral vs Monte Carlo expansion cross-check


@dataclass
class CrosscheckRow:
    probe: complex
    mc_value: float
    mc_stderr: float
    prediction: float
    deviation_sigma: float


def expansion_crosscheck(pair: EigenPair, system: AssembledSystem,
                         mu2: float, estimates, t: float):
    """Compare MC survival against e^{-mu1 t} psi1(z) * integral(psi1).

    ``estimates`` is a list of SurvivalEstimate-like objects with ``query``
    carrying the probe point, plus ``value`` and ``stderr``.  Requires the
    spectral gap to suppress the remainder: e^{-(mu2-mu1) t} < 0.05.
    """
    gap_factor = math.exp(-(mu2 - pair.mu1) * t)
    if gap_factor >= 0.05:
        raise ValueError(
            f"spectral gap too small at t={t}: e^(-(mu2-mu1)t) = {gap_factor:.3f}")
    ones = np.ones(len(pair.psi1))
    integral = float(ones @ (system.M_full @ pair.psi1))
    rows = []
    for est in estimates:
        z = complex(est.query["start"][0], est.query["start"][1])
        psi_z = float(pair.value_at(np.array([[z.real, z.imag]]))[0])
        pred = math.exp(-pair.mu1 * t) * psi_z * integral
        sigma = max(est.stderr, 1e-300)
        rows.append(CrosscheckRow(z, est.value, est.stderr, pred,
                                  abs(est.value - pred) / sigma))
    worst = max(r.deviation_sigma for r in rows)
    return worst, rows
