"""Planar mixed-boundary domains: circle inversion, symmetrization, and the
geometric certificates used throughout the laboratory.

Conventions
-----------
Points are complex numbers ``z = x + iy``.  A domain ``D`` is bounded by two
curves sharing their endpoints: ``gamma1`` (reflecting / Neumann) and
``gamma2`` (killing / Dirichlet), exactly one of which is stored as an exact
circular arc.  Curves carry N uniformly-parameterized samples (default 512);
every predicate is a sampled predicate with an explicit tolerance (default
``GEOM_TOL`` scaled by domain size where noted).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Optional

import numpy as np

GEOM_TOL = 1e-9
CURVE_SAMPLES = 512
CLIP_RADIUS = 50.0


class Side(Enum):
    INTERIOR = "interior"
    ON_GAMMA1 = "on_gamma1"
    ON_GAMMA2 = "on_gamma2"
    OUTSIDE = "outside"


class SingularInputError(ValueError):
    """Inversion of the circle center (or equivalent degenerate input)."""


class UnboundedImageError(ValueError):
    """Symmetrization would wrap around infinity (center inside the domain)."""


# ---------------------------------------------------------------------------
# circles and inversion


@dataclass(frozen=True)
class Circle:
    center: complex
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"circle radius must be positive, got {self.radius}")
        if not (math.isfinite(self.center.real) and math.isfinite(self.center.imag)):
            raise ValueError("circle center must be finite")

    def point(self, angle: float) -> complex:
        return self.center + self.radius * np.exp(1j * angle)

    def invert(self, z):
        return invert_point(self, z)


def invert_point(circle: Circle, z):
    """Circle inversion sigma_C(z) = z0 + R^2 / conj(z - z0).

    Accepts scalars or complex arrays.  Points on C are fixed; the center is
    rejected as singular.
    """
    w = np.asarray(z, dtype=complex) - circle.center
    if np.any(w == 0):
        raise SingularInputError("inversion is singular at the circle center")
    out = circle.center + circle.radius**2 / np.conj(w)
    if np.isscalar(z) or np.ndim(z) == 0:
        return complex(out)
    return out


# ---------------------------------------------------------------------------
# boundary curves


@dataclass(frozen=True)
class BoundaryCurve:
    """One boundary piece, uniformly sampled on t in [0, 1].

    ``arc`` carries the exact circle when the curve is a true circular arc
    (angles in radians, signed sweep).  For sampled curves built from known
    geometry, ``tangent_hints`` supplies exact unit half-tangents at the two
    endpoints, pointing along increasing t.
    """

    points: np.ndarray
    arc: Optional[Circle] = None
    angles: Optional[tuple] = None
    tangent_hints: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or len(pts) < 3:
            raise ValueError("a boundary curve needs at least 3 sample points")
        if not np.all(np.isfinite(pts.view(float))):
            raise ValueError("curve samples must be finite")
        if self.arc is not None:
            if self.angles is None:
                raise ValueError("arc curves must carry (start, end) angles")
            sweep = self.angles[1] - self.angles[0]
            if not 0 < abs(sweep) < 2 * math.pi:
                raise ValueError("arc angular extent must lie in (0, 2*pi)")

    @staticmethod
    def from_arc(circle: Circle, a0: float, a1: float,
                 n: int = CURVE_SAMPLES) -> "BoundaryCurve":
        th = np.linspace(a0, a1, n)
        return BoundaryCurve(circle.center + circle.radius * np.exp(1j * th),
                             arc=circle, angles=(a0, a1))

    @staticmethod
    def from_points(points, tangent_hints=None) -> "BoundaryCurve":
        pts = np.asarray(points, dtype=complex)
        # pairwise-distinct consecutive samples; exact duplicates break tangents
        if np.any(np.abs(np.diff(pts)) == 0):
            raise ValueError("sampled curve has coincident consecutive points")
        return BoundaryCurve(pts, tangent_hints=tangent_hints)

    @property
    def kind(self) -> str:
        return "arc" if self.arc is not None else "sampled"

    @property
    def start(self) -> complex:
        return complex(self.points[0])

    @property
    def end(self) -> complex:
        return complex(self.points[-1])

    def point(self, t):
        """Evaluate the curve at parameter t in [0, 1] (arcs exactly)."""
        t = np.asarray(t, dtype=float)
        if self.arc is not None:
            a0, a1 = self.angles
            th = a0 + (a1 - a0) * t
            out = self.arc.center + self.arc.radius * np.exp(1j * th)
        else:
            n = len(self.points) - 1
            x = np.clip(t, 0.0, 1.0) * n
            i = np.minimum(x.astype(int), n - 1)
            frac = x - i
            out = self.points[i] * (1 - frac) + self.points[i + 1] * frac
        return out if out.ndim else complex(out)

    def tangent(self, endpoint: int) -> complex:
        """Unit half-tangent at endpoint 0 or 1, pointing along increasing t."""
        if self.arc is not None:
            a0, a1 = self.angles
            th = a0 if endpoint == 0 else a1
            vec = 1j * np.exp(1j * th) * np.sign(a1 - a0)
        elif self.tangent_hints is not None:
            vec = self.tangent_hints[endpoint]
        else:
            if endpoint == 0:
                vec = self.points[1] - self.points[0]
            else:
                vec = self.points[-1] - self.points[-2]
        mag = abs(vec)
        if mag < 1e-300:
            raise ValueError("zero-length tangent estimate at curve endpoint")
        return complex(vec / mag)

    def arclength(self) -> float:
        return float(np.sum(np.abs(np.diff(self.points))))

    def reversed(self) -> "BoundaryCurve":
        hints = None
        if self.tangent_hints is not None:
            hints = (-self.tangent_hints[1], -self.tangent_hints[0])
        if self.arc is not None:
            return BoundaryCurve(self.points[::-1].copy(), arc=self.arc,
                                 angles=(self.angles[1], self.angles[0]))
        return BoundaryCurve(self.points[::-1].copy(), tangent_hints=hints)


# ---------------------------------------------------------------------------
# polygon helpers (vectorized, shared by predicates below)


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts.real, pts.imag
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def points_in_polygon(poly: np.ndarray, z) -> np.ndarray:
    """Even-odd crossing test. ``poly`` is a closed loop given without repeat."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    px, py = poly.real, poly.imag
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    inside = np.zeros(z.shape, dtype=bool)
    # chunk queries to bound the (Q, E) intermediate
    step = max(1, 2_000_000 // max(len(poly), 1))
    for s in range(0, len(z), step):
        zz = z[s:s + step]
        x = zz.real[:, None]
        y = zz.imag[:, None]
        cond = (py[None, :] > y) != (qy[None, :] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = px[None, :] + (y - py[None, :]) * (qx - px)[None, :] / (qy - py)[None, :]
        crossing = cond & (x < xint)
        inside[s:s + step] = np.sum(crossing, axis=1) % 2 == 1
    return inside


def distance_to_polyline(pts: np.ndarray, z, closed: bool = False) -> np.ndarray:
    """Euclidean distance from each query point to an open/closed polyline."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    a = pts
    b = np.roll(pts, -1) if closed else pts[1:]
    a = a if closed else pts[:-1]
    seg = b - a
    seglen2 = np.abs(seg) ** 2
    seglen2 = np.where(seglen2 == 0, 1.0, seglen2)
    out = np.empty(z.shape, dtype=float)
    step = max(1, 2_000_000 // max(len(a), 1))
    for s in range(0, len(z), step):
        zz = z[s:s + step][:, None]
        t = np.clip(((zz - a[None, :]) * np.conj(seg[None, :])).real / seglen2[None, :], 0.0, 1.0)
        proj = a[None, :] + t * seg[None, :]
        out[s:s + step] = np.min(np.abs(zz - proj), axis=1)
    return out


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b - a).real * (c - a).imag - (b - a).imag * (c - a).real)

    return (orient(p1, p2, q1) != orient(p1, p2, q2)
            and orient(q1, q2, p1) != orient(q1, q2, p2))


def polyline_is_simple(pts: np.ndarray, closed: bool = True) -> bool:
    """Non-self-intersection check for a polyline (O(n^2), vectorized)."""
    n = len(pts)
    a = pts
    b = np.roll(pts, -1) if closed else None
    if not closed:
        a, b = pts[:-1], pts[1:]
    m = len(a) if closed else n - 1

    def cross(o, u, v):
        return (u.real - o.real) * (v.imag - o.imag) - (u.imag - o.imag) * (v.real - o.real)

    for i in range(m):
        p1, p2 = a[i], (b[i] if not closed else pts[(i + 1) % n])
        # skip adjacent segments
        j = np.arange(i + 2, m if not closed or i > 0 else m - 1)
        if len(j) == 0:
            continue
        q1 = a[j]
        q2 = pts[(j + 1) % n] if closed else b[j]
        d1 = np.sign(cross(p1, p2, q1))
        d2 = np.sign(cross(p1, p2, q2))
        d3 = np.sign(cross(q1, q2, np.full(len(j), p1)))
        d4 = np.sign(cross(q1, q2, np.full(len(j), p2)))
        if np.any((d1 != d2) & (d3 != d4) & (d1 * d2 != 0) & (d3 * d4 != 0)):
            return False
    return True


def is_convex(points, tol: float | None = None):
    """Convexity of a closed sampled curve via consecutive cross-products.

    Returns ``(True, None)`` or ``(False, (p_i, p_j, p_k))`` with the first
    violating vertex triple.  ``tol`` defaults to 1e-9 times the squared
    diameter of the point set.
    """
    pts = np.asarray(points, dtype=complex)
    if len(pts) < 3:
        raise ValueError("convexity test needs at least 3 points")
    if abs(pts[0] - pts[-1]) == 0:
        pts = pts[:-1]
    sub = pts[:: max(1, len(pts) // 64)]
    scale = float(np.max(np.abs(sub[:, None] - sub[None, :]))) or 1.0
    if tol is None:
        tol = 1e-9 * scale * scale
    u = np.roll(pts, -1) - pts
    v = np.roll(pts, -2) - np.roll(pts, -1)
    cross = u.real * v.imag - u.imag * v.real
    ref = 1.0 if _polygon_area(pts) >= 0 else -1.0
    bad = np.nonzero(ref * cross < -tol)[0]
    if len(bad) == 0:
        return True, None
    i = int(bad[0])
    n = len(pts)
    return False, (complex(pts[i]), complex(pts[(i + 1) % n]), complex(pts[(i + 2) % n]))


# ---------------------------------------------------------------------------
# the mixed domain


@dataclass(frozen=True)
class MixedDomain:
    """Convex planar domain bounded by gamma1 (Neumann) and gamma2 (Dirichlet).

    Both curves run from ``corner0`` to ``corner1``; ``arc_role`` names the one
    stored as an exact circular arc.
    """

    gamma1: BoundaryCurve
    gamma2: BoundaryCurve
    arc_role: str  # "gamma1" | "gamma2"
    kind: str = "sampled"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arc_role not in ("gamma1", "gamma2"):
            raise ValueError("arc_role must be 'gamma1' or 'gamma2'")
        arc_curve = self.gamma1 if self.arc_role == "gamma1" else self.gamma2
        other = self.gamma2 if self.arc_role == "gamma1" else self.gamma1
        if arc_curve.arc is None:
            raise ValueError(f"{self.arc_role} must carry exact arc data")
        if other.arc is not None:
            raise ValueError("exactly one boundary curve may be a circular arc")
        scale = self.diameter
        tol = 1e-7 * scale
        if abs(self.gamma1.start - self.gamma2.start) > tol or \
           abs(self.gamma1.end - self.gamma2.end) > tol:
            raise ValueError("gamma1 and gamma2 must share both corner points")
        poly = self.boundary_polygon
        if abs(_polygon_area(poly)) < 1e-12 * scale * scale:
            raise ValueError("domain has empty interior")
        if not polyline_is_simple(poly[::2], closed=True):
            raise ValueError("domain boundary is self-intersecting")
        ok, witness = is_convex(poly)
        if not ok:
            raise ValueError(f"domain boundary is not convex near {witness[1]:.6f}")

    @cached_property
    def boundary_polygon(self) -> np.ndarray:
        """Closed CCW loop: gamma1 samples then reversed gamma2 (no repeat)."""
        loop = np.concatenate([self.gamma1.points, self.gamma2.points[::-1][1:-1]])
        if _polygon_area(loop) < 0:
            loop = loop[::-1]
        return loop

    @property
    def corner0(self) -> complex:
        return self.gamma1.start

    @property
    def corner1(self) -> complex:
        return self.gamma1.end

    @property
    def corners(self) -> tuple:
        return (self.corner0, self.corner1)

    @cached_property
    def diameter(self) -> float:
        pts = np.concatenate([self.gamma1.points[::8], self.gamma2.points[::8]])
        return float(np.max(np.abs(pts[:, None] - pts[None, :])))

    @cached_property
    def area(self) -> float:
        return abs(_polygon_area(self.boundary_polygon))

    def distance_to_gamma1(self, z) -> np.ndarray:
        return distance_to_polyline(self.gamma1.points, z)

    def distance_to_gamma2(self, z) -> np.ndarray:
        return distance_to_polyline(self.gamma2.points, z)

    def sample_interior(self, n: int, rng: np.random.Generator,
                        margin: float = 0.0) -> np.ndarray:
        """Rejection-sample n interior points (optionally a boundary margin)."""
        poly = self.boundary_polygon
        lo = complex(np.min(poly.real), np.min(poly.imag))
        hi = complex(np.max(poly.real), np.max(poly.imag))
        out = []
        while len(out) < n:
            m = max(4 * (n - len(out)), 64)
            cand = (lo.real + (hi.real - lo.real) * rng.random(m)
                    + 1j * (lo.imag + (hi.imag - lo.imag) * rng.random(m)))
            keep = points_in_polygon(poly, cand)
            if margin > 0:
                keep &= distance_to_polyline(poly, cand, closed=True) > margin
            out.extend(cand[keep])
        return np.asarray(out[:n])


def contains(domain: MixedDomain, z, tol: float | None = None):
    """Classify points against the domain: INTERIOR / ON_GAMMA1 / ON_GAMMA2 / OUTSIDE.

    Boundary classification uses a band of width ``tol`` (default 1e-9 times
    the domain diameter).  At the shared corners gamma2 takes precedence.
    """
    scalar = np.isscalar(z) or np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if tol is None:
        tol = 1e-9 * domain.diameter
    d1 = domain.distance_to_gamma1(z)
    d2 = domain.distance_to_gamma2(z)
    inside = points_in_polygon(domain.boundary_polygon, z)
    out = np.where(inside, Side.INTERIOR, Side.OUTSIDE)
    out = np.where(d1 <= tol, Side.ON_GAMMA1, out)
    out = np.where(d2 <= tol, Side.ON_GAMMA2, out)
    if scalar:
        return out.flat[0]
    return out


def corner_angles(domain: MixedDomain) -> tuple:
    """Interior angles between the two half-tangents at each shared corner."""
    angles = []
    for endpoint in (0, 1):
        t1 = domain.gamma1.tangent(endpoint)
        t2 = domain.gamma2.tangent(endpoint)
        if endpoint == 1:  # point the tangents away from the corner
            t1, t2 = -t1, -t2
        dot = (t1 * np.conj(t2)).real
        angles.append(float(np.arccos(np.clip(dot, -1.0, 1.0))))
    return tuple(angles)


def is_starlike_complement(domain: MixedDomain, grid: int = 40,
                           t_values=None, tol: float | None = None):
    """Check that U \\ D is starlike about the origin (gamma1 on the unit circle).

    Samples a polar grid of points of the open unit disk lying outside D and
    verifies t*z stays outside D for t in {0.1, ..., 0.9}.  Returns
    ``(True, None)`` or ``(False, (z, t))``.
    """
    if domain.arc_role != "gamma1":
        raise ValueError("starlike-complement check requires gamma1 to be the arc")
    circ = domain.gamma1.arc
    if abs(circ.center) > 1e-9 or abs(circ.radius - 1.0) > 1e-9:
        raise ValueError("gamma1 must lie on the unit circle centered at the origin")
    poly = domain.boundary_polygon
    if float(np.max(np.abs(poly))) > 1.0 + 1e-7:
        raise ValueError("domain is not contained in the closed unit disk")
    if t_values is None:
        t_values = np.arange(1, 10) / 10.0
    rr = np.linspace(0.02, 0.995, grid)
    th = np.linspace(0.0, 2 * math.pi, 2 * grid, endpoint=False)
    zs = (rr[:, None] * np.exp(1j * th)[None, :]).ravel()
    band = 1e-9 * domain.diameter if tol is None else tol
    outside = contains(domain, zs, tol=band) == Side.OUTSIDE
    zs = zs[outside]
    for t in t_values:
        cls = contains(domain, t * zs, tol=band)
        bad = cls == Side.INTERIOR
        if np.any(bad):
            return False, (complex(zs[np.argmax(bad)]), float(t))
    return True, None


def _circumcircle_through_origin(z1: complex, z2: complex):
    # circle through 0, z1, z2: solve 2 Re(conj(c) z) = |z|^2 for both points
    ax, ay = z1.real, z1.imag
    bx, by = z2.real, z2.imag
    det = 2.0 * (ax * by - ay * bx)
    if abs(det) < 1e-15 * max(abs(z1), abs(z2)) ** 2:
        return None
    r1 = abs(z1) ** 2
    r2 = abs(z2) ** 2
    cx = (by * r1 - ay * r2) / det
    cy = (ax * r2 - bx * r1) / det
    c = complex(cx, cy)
    return c, abs(c)


def origin_arc_contained(domain: MixedDomain, z1: complex, z2: complex,
                         samples: int = 256, tol: float | None = None) -> bool:
    """True when the arc through 0, z1, z2 between z1 and z2 (not containing 0)
    lies in D union gamma2.  Degenerates to the segment test when collinear.
    """
    band = 1e-7 * domain.diameter if tol is None else tol
    c1 = contains(domain, z1, tol=band)
    if c1 != Side.INTERIOR:
        raise ValueError("z1 must lie in the open domain")
    c2 = contains(domain, z2, tol=band)
    if c2 not in (Side.INTERIOR, Side.ON_GAMMA2):
        raise ValueError("z2 must lie in the domain or on gamma2")

    circ = _circumcircle_through_origin(z1, z2)
    if circ is None:  # collinear with the origin: segment test
        t = np.linspace(0.0, 1.0, samples)
        pts = z1 * (1 - t) + z2 * t
    else:
        c, R = circ
        a1 = math.atan2(z1.imag - c.imag, z1.real - c.real)
        a2 = math.atan2(z2.imag - c.imag, z2.real - c.real)
        a0 = math.atan2(-c.imag, -c.real)  # angle of the origin on the circle
        fwd = (a2 - a1) % (2 * math.pi)
        origin_in_fwd = (a0 - a1) % (2 * math.pi) < fwd
        if origin_in_fwd:
            sweep = fwd - 2 * math.pi  # go the other way
        else:
            sweep = fwd
        th = a1 + sweep * np.linspace(0.0, 1.0, samples)
        pts = c + R * np.exp(1j * th)
    cls = contains(domain, pts, tol=band)
    ok = (cls == Side.INTERIOR) | (cls == Side.ON_GAMMA2)
    return bool(np.all(ok))


# ---------------------------------------------------------------------------
# symmetrization across the gamma2 circle


@dataclass(frozen=True)
class SymmetrizedDomain:
    """D* = D union gamma2 union sigma_C(D), sampled along its boundary.

    ``full_boundary`` is a closed CCW loop (no repeated point).  For unbounded
    images (inversion center on the domain boundary) the region is clipped to
    ``|z| <= clip_radius`` and ``clipped`` is set.
    """

    original: MixedDomain
    mirror_boundary: BoundaryCurve
    full_boundary: np.ndarray
    inversion_circle: Circle
    clipped: bool
    anchor: complex  # midpoint of gamma2; interior point of D*

    def membership(self, z) -> np.ndarray:
        """Exact D* membership oracle: z in D*, via the inversion involution."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        band = 1e-9 * self.original.diameter
        cls = contains(self.original, z, tol=band)
        inside = (cls == Side.INTERIOR) | (cls == Side.ON_GAMMA2)
        rest = ~inside & (np.abs(z - self.inversion_circle.center) > 1e-14)
        if np.any(rest):
            mirrored = invert_point(self.inversion_circle, z[rest])
            inside[rest] = contains(self.original, mirrored, tol=band) == Side.INTERIOR
        return inside

    def radial_boundary(self, center: complex | None = None):
        """(phi, rho) samples of the boundary about an interior center."""
        c = self.anchor if center is None else center
        w = self.full_boundary
        phi = np.unwrap(np.angle(w - c))
        rho = np.abs(w - c)
        if phi[-1] < phi[0]:
            phi, rho = phi[::-1], rho[::-1]
        return phi, rho


def symmetrize_domain(domain: MixedDomain, clip_radius: float = CLIP_RADIUS,
                      rays: int = 1024) -> SymmetrizedDomain:
    """Reflect D across the circle carrying gamma2 and assemble D*.

    Bounded images use the exact construction (gamma1 followed by the reversed
    pointwise inversion of gamma1).  When the inversion center lies on the
    domain boundary the image is an unbounded convex region (half-plane or
    wedge); its boundary is then sampled by ray casting against the exact
    membership oracle and clipped to ``|z| <= clip_radius``.  A center interior
    to D (arc subtending an angle >= pi around it) is rejected: the image would
    wrap around infinity.
    """
    if domain.arc_role != "gamma2":
        raise ValueError("symmetrization requires gamma2 to be the circular arc")
    circ = domain.gamma2.arc
    center_side = contains(domain, circ.center, tol=1e-9 * domain.diameter)
    if center_side == Side.INTERIOR:
        raise UnboundedImageError(
            "gamma2 subtends an angle >= pi seen from its circle center, which "
            "lies inside D; the inversion image wraps around infinity")

    a0, a1 = domain.gamma2.angles
    anchor = circ.point(0.5 * (a0 + a1))

    g1 = domain.gamma1.points
    singular = np.abs(g1 - circ.center) < 1e-13 * domain.diameter
    mirror_pts = np.empty_like(g1)
    mirror_pts[~singular] = invert_point(circ, g1[~singular])
    mirror_pts[singular] = np.inf

    unbounded = (center_side != Side.OUTSIDE) or np.any(
        np.abs(mirror_pts[np.isfinite(mirror_pts)]) > clip_radius)

    if not unbounded:
        mirror = BoundaryCurve.from_points(mirror_pts)
        full = np.concatenate([g1, mirror_pts[::-1][1:-1]])
        if _polygon_area(full) < 0:
            full = full[::-1]
        sym = SymmetrizedDomain(domain, mirror, full, circ, False, anchor)
    else:
        finite = np.isfinite(mirror_pts)
        keep = finite & (np.abs(mirror_pts) <= clip_radius)
        mirror = BoundaryCurve.from_points(
            mirror_pts[keep] if np.sum(keep) >= 3 else
            np.array([anchor, anchor + 1e-9, anchor + 2e-9]))
        sym = SymmetrizedDomain(domain, mirror,
                                np.empty(0, dtype=complex), circ, True, anchor)
        full = _raycast_boundary(sym, anchor, clip_radius, rays)
        object.__setattr__(sym, "full_boundary", full)

    loop = sym.full_boundary
    if len(loop) >= 3 and not polyline_is_simple(loop[::4], closed=True):
        raise RuntimeError("symmetrized boundary came out self-intersecting")
    return sym


def _raycast_boundary(sym: SymmetrizedDomain, anchor: complex,
                      clip_radius: float, rays: int) -> np.ndarray:
    """Sample the boundary of the clipped D* by bisection along rays."""
    phis = np.linspace(0.0, 2 * math.pi, rays, endpoint=False)
    dirs = np.exp(1j * phis)
    # max ray length staying inside |z| <= clip_radius
    b = (anchor * np.conj(dirs)).real
    hi = -b + np.sqrt(b * b + clip_radius**2 - abs(anchor) ** 2)
    lo = np.zeros_like(hi)
    inside_hi = sym.membership(anchor + hi * dirs)
    work_lo = lo.copy()
    work_hi = hi.copy()
    for _ in range(46):
        mid = 0.5 * (work_lo + work_hi)
        inside = sym.membership(anchor + mid * dirs)
        work_lo = np.where(inside, mid, work_lo)
        work_hi = np.where(inside, work_hi, mid)
    rho = np.where(inside_hi, hi, 0.5 * (work_lo + work_hi))
    return anchor + rho * dirs


# ---------------------------------------------------------------------------
# built-in domains


def half_disk(dirichlet: str = "diameter", n: int = CURVE_SAMPLES) -> MixedDomain:
    """Half-disk of the unit circle.

    ``dirichlet="diameter"``: upper half-disk, Neumann semicircular arc on top,
    killing on the flat diameter (the native half-ball setting).
    ``dirichlet="arc"``: lower half-disk, killing on the lower semicircle,
    reflecting diameter (the arc-gamma2 orientation with -i on gamma2).
    """
    unit = Circle(0j, 1.0)
    if dirichlet == "diameter":
        g1 = BoundaryCurve.from_arc(unit, 0.0, math.pi, n)  # 1 -> -1 through i
        seg = np.linspace(1.0 + 0j, -1.0 + 0j, n)
        g2 = BoundaryCurve.from_points(seg, tangent_hints=(-1 + 0j, -1 + 0j))
        return MixedDomain(g1, g2, "gamma1", "half_disk",
                           {"dirichlet": "diameter"})
    if dirichlet == "arc":
        g2 = BoundaryCurve.from_arc(unit, 0.0, -math.pi, n)  # 1 -> -1 through -i
        seg = np.linspace(1.0 + 0j, -1.0 + 0j, n)
        g1 = BoundaryCurve.from_points(seg, tangent_hints=(-1 + 0j, -1 + 0j))
        return MixedDomain(g1, g2, "gamma2", "half_disk", {"dirichlet": "arc"})
    raise ValueError("dirichlet must be 'diameter' or 'arc'")


def sector(half_angle: float, dirichlet: str = "radii",
           n: int = CURVE_SAMPLES) -> MixedDomain:
    """Circular sector of the unit disk, symmetric about the vertical axis.

    Opening angle 2*half_angle, vertex at the origin.  The default places the
    Neumann condition on the arc and the killing on the two radii; with
    ``dirichlet="arc"`` the roles swap (arc-gamma2 orientation, vertex on
    gamma1), whose symmetrization is the infinite wedge.
    """
    if not 0 < half_angle < math.pi / 2:
        raise ValueError("half_angle must lie in (0, pi/2)")
    unit = Circle(0j, 1.0)
    b0 = math.pi / 2 - half_angle
    b1 = math.pi / 2 + half_angle
    arc = BoundaryCurve.from_arc(unit, b0, b1, n)
    c0, c1 = np.exp(1j * b0), np.exp(1j * b1)
    m = n // 2
    leg0 = np.linspace(c0, 0, m, endpoint=False)
    leg1 = np.linspace(0, c1, n - m)
    radii = BoundaryCurve.from_points(np.concatenate([leg0, leg1]),
                                      tangent_hints=(-c0, c1))
    if dirichlet == "radii":
        return MixedDomain(arc, radii, "gamma1", "sector",
                           {"half_angle": half_angle, "dirichlet": "radii"})
    if dirichlet == "arc":
        return MixedDomain(radii, arc, "gamma2", "sector",
                           {"half_angle": half_angle, "dirichlet": "arc"})
    raise ValueError("dirichlet must be 'radii' or 'arc'")


def circular_cap(half_aperture: float, n: int = CURVE_SAMPLES) -> MixedDomain:
    """Disk cap above a chord: Neumann arc of the unit circle, Dirichlet chord."""
    if not 0 < half_aperture <= math.pi / 2:
        raise ValueError("half_aperture must lie in (0, pi/2]")
    unit = Circle(0j, 1.0)
    b0 = math.pi / 2 - half_aperture
    b1 = math.pi / 2 + half_aperture
    g1 = BoundaryCurve.from_arc(unit, b0, b1, n)
    c0, c1 = np.exp(1j * b0), np.exp(1j * b1)
    g2 = BoundaryCurve.from_points(np.linspace(c0, c1, n))
    return MixedDomain(g1, g2, "gamma1", "arc_gamma1",
                       {"half_aperture": half_aperture})


def warped_half_disk(bulge: float, n: int = CURVE_SAMPLES) -> MixedDomain:
    """Image of the upper half-disk under w = exp(i*bulge*z).

    gamma2 is the arc of the unit circle between angles -bulge and +bulge;
    gamma1 is the analytic inner curve exp(i*bulge*e^{i*theta}), which meets
    the circle at right angles.  The symmetrized region is the convex oval
    exp(i*bulge*U) with an exact power-series map, making this the canonical
    bounded arc-gamma2 test domain.
    """
    if not 0 < bulge <= 1.0:
        raise ValueError("bulge must lie in (0, 1]")
    unit = Circle(0j, 1.0)
    g2 = BoundaryCurve.from_arc(unit, bulge, -bulge, n)
    th = np.pi * np.arange(n) / (n - 1)
    pts = np.exp(1j * bulge * np.exp(1j * th))
    dpts = 1j * bulge * 1j * np.exp(1j * th) * pts  # d/dtheta
    hints = (dpts[0] / abs(dpts[0]), dpts[-1] / abs(dpts[-1]))
    g1 = BoundaryCurve.from_points(pts, tangent_hints=hints)
    return MixedDomain(g1, g2, "gamma2", "arc_gamma2",
                       {"family": "warped", "bulge": bulge})


def lens(corner_angle: float, half_width: float = math.pi / 6,
         n: int = CURVE_SAMPLES) -> MixedDomain:
    """Lens between the lower unit-circle arc and a second circular arc.

    The arcs meet at the prescribed interior angle (<= pi/2).  gamma2 runs
    along the unit circle through -i between angles -pi/2 -+ half_width;
    gamma1 is the arc of a circle centered on the imaginary axis, sampled,
    with exact tangent hints.  ``corner_angle = pi/2`` gives the orthogonal
    lens whose symmetrization is exactly a disk.
    """
    if not 0 < corner_angle <= math.pi / 2 + 1e-12:
        raise ValueError("corner_angle must lie in (0, pi/2]")
    if not 0 < half_width < math.pi / 2:
        raise ValueError("half_width must lie in (0, pi/2)")
    unit = Circle(0j, 1.0)
    a0 = -math.pi / 2 - half_width
    a1 = -math.pi / 2 + half_width
    w0, w1 = np.exp(1j * a0), np.exp(1j * a1)

    def interior_angle(y1):
        # same convention as corner_angles: half-tangents into the curves at w0
        c1 = -1j * y1
        b0 = math.atan2(w0.imag - c1.imag, w0.real - c1.real)
        b1 = math.atan2(w1.imag - c1.imag, w1.real - c1.real)
        t_g2 = 1j * w0 * np.sign(a1 - a0)
        t_g1 = 1j * np.exp(1j * b0) * np.sign(b1 - b0)
        dot = (t_g1 * np.conj(t_g2)).real
        return math.acos(np.clip(dot, -1, 1))

    # interior_angle decreases in y1 toward the chord limit (= half_width)
    lo, hi = 1.0 + 1e-7, 1e5
    if not interior_angle(hi) <= corner_angle <= interior_angle(lo):
        raise ValueError("requested lens corner angle is not reachable "
                         f"for half_width={half_width}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if interior_angle(mid) > corner_angle:
            lo = mid
        else:
            hi = mid
    y1 = 0.5 * (lo + hi)
    c1 = -1j * y1
    r1 = abs(w0 - c1)
    b0 = math.atan2(w0.imag - c1.imag, w0.real - c1.real)
    b1 = math.atan2(w1.imag - c1.imag, w1.real - c1.real)
    th = np.linspace(b0, b1, n)
    pts = c1 + r1 * np.exp(1j * th)
    hints = (1j * np.exp(1j * b0) * np.sign(b1 - b0),
             1j * np.exp(1j * b1) * np.sign(b1 - b0))
    g1 = BoundaryCurve.from_points(pts, tangent_hints=hints)
    g2 = BoundaryCurve.from_arc(unit, a0, a1, n)
    dom = MixedDomain(g1, g2, "gamma2", "arc_gamma2",
                      {"family": "lens", "corner_angle": corner_angle,
                       "half_width": half_width})
    return dom


# ---------------------------------------------------------------------------
# JSON domain descriptions


def domain_from_spec(spec: dict) -> MixedDomain:
    """Build a domain from its JSON description.

    Kinds: half_disk {dirichlet}, sector {half_angle},
    arc_gamma1 {half_aperture}, arc_gamma2 {family: warped|lens, ...},
    sampled {gamma1, gamma2, arc_role, arc}.
    """
    kind = spec.get("kind")
    if kind == "half_disk":
        return half_disk(spec.get("dirichlet", "diameter"))
    if kind == "sector":
        return sector(float(spec["half_angle"]), spec.get("dirichlet", "radii"))
    if kind == "arc_gamma1":
        return circular_cap(float(spec["half_aperture"]))
    if kind == "arc_gamma2":
        family = spec.get("family", "warped")
        if family == "warped":
            return warped_half_disk(float(spec["bulge"]))
        if family == "lens":
            return lens(float(spec["corner_angle"]),
                        float(spec.get("half_width", math.pi / 6)))
        raise ValueError(f"unknown arc_gamma2 family {family!r}")
    if kind == "sampled":
        arc = spec["arc"]
        circ = Circle(complex(arc["center"][0], arc["center"][1]),
                      float(arc["radius"]))
        a0, a1 = arc["angles"]

        def curve(key):
            pts = np.array([complex(p[0], p[1]) for p in spec[key]])
            return BoundaryCurve.from_points(pts)

        if spec["arc_role"] == "gamma1":
            g1 = BoundaryCurve.from_arc(circ, a0, a1)
            g2 = curve("gamma2")
        else:
            g2 = BoundaryCurve.from_arc(circ, a0, a1)
            g1 = curve("gamma1")
        return MixedDomain(g1, g2, spec["arc_role"], "sampled", dict(spec))
    raise ValueError(f"unknown domain kind {kind!r}")


def domain_to_spec(domain: MixedDomain) -> dict:
    if domain.kind == "half_disk":
        return {"kind": "half_disk", **domain.params}
    if domain.kind == "sector":
        return {"kind": "sector", **domain.params}
    if domain.kind == "arc_gamma1":
        return {"kind": "arc_gamma1", **domain.params}
    if domain.kind == "arc_gamma2":
        return {"kind": "arc_gamma2", **domain.params}
    arc_curve = domain.gamma1 if domain.arc_role == "gamma1" else domain.gamma2
    other_key = "gamma2" if domain.arc_role == "gamma1" else "gamma1"
    other = getattr(domain, other_key)
    return {
        "kind": "sampled",
        "arc_role": domain.arc_role,
        "arc": {"center": [arc_curve.arc.center.real, arc_curve.arc.center.imag],
                "radius": arc_curve.arc.radius,
                "angles": list(arc_curve.angles)},
        other_key: [[p.real, p.imag] for p in other.points],
    }


def load_domain(path) -> MixedDomain:
    with open(path) as fh:
        return domain_from_spec(json.load(fh))
