"""Conformal maps of the unit disk onto symmetrized targets.

The builder runs a Theodorsen conjugate-function iteration on the boundary
correspondence (FFT conjugation), normalized so the map sends 0 to the
midpoint of gamma2 with derivative argument aligned to the tangent of the
inversion circle there.  By uniqueness of the normalized Riemann map this
forces the reflection symmetry g(conj z) = sigma_C(g(z)), which is what the
Schwarz extension step verifies.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import (Circle, MixedDomain, SymmetrizedDomain,
                       distance_to_polyline, domain_from_spec, domain_to_spec,
                       invert_point, symmetrize_domain)

COEFF_FLOOR = 1e-14
TAIL_LIMIT = 1e-10


class MapBuildError(RuntimeError):
    """Theodorsen iteration failed; carries the residual history."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class ReflectionError(RuntimeError):
    """Schwarz-reflection consistency check failed."""


class CriticalPointError(ZeroDivisionError):
    """Derivative vanished where the convexity functional was requested."""


# ---------------------------------------------------------------------------
# map objects


class PowerSeriesMap:
    """Truncated power series g(z) = sum c_k z^k on the closed unit disk."""

    def __init__(self, coefficients, target: Optional[SymmetrizedDomain] = None,
                 normalization: Optional[dict] = None):
        c = np.asarray(coefficients, dtype=complex)
        if c.ndim != 1 or len(c) < 2:
            raise ValueError("need at least coefficients c0, c1")
        if not np.all(np.isfinite(c.view(float))):
            raise ValueError("coefficients must be finite")
        if c[1] == 0:
            raise ValueError("c1 must be nonzero for a univalent disk map")
        self.coefficients = c
        self.target = target
        self.normalization = normalization or {
            "center": [c[0].real, c[0].imag],
            "derivative_arg": float(np.angle(c[1])),
        }

    @property
    def truncation(self) -> int:
        return len(self.coefficients) - 1

    @property
    def tail_ratio(self) -> float:
        c = np.abs(self.coefficients)
        return float(c[-1] / c.max())

    def eval(self, z, order: int = 0):
        """Horner evaluation of the series or its termwise derivative."""
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1, or 2")
        scalar = np.isscalar(z) or np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if np.any(np.abs(z) > 1 + 1e-12):
            raise ValueError("evaluation point outside the closed unit disk")
        c = self.coefficients
        k = np.arange(len(c), dtype=float)
        if order >= 1:
            c = c[1:] * k[1:]
            k = k[:-1]
        if order == 2:
            c = c[1:] * k[1:]
        out = np.zeros_like(z)
        for ck in c[::-1]:
            out = out * z + ck
        if scalar:
            return complex(out[0])
        return out

    def __call__(self, z):
        return self.eval(z, 0)

    def to_dict(self) -> dict:
        d = {
            "coefficients": [[c.real, c.imag] for c in self.coefficients],
            "normalization": self.normalization,
        }
        if self.target is not None:
            d["domain"] = domain_to_spec(self.target.original)
        return d


class MobiusMap:
    """Exact Moebius map (a z + b) / (c z + d) with closed-form derivatives."""

    def __init__(self, a, b, c, d, target: Optional[MixedDomain] = None,
                 label: str = "mobius"):
        self.abcd = (complex(a), complex(b), complex(c), complex(d))
        det = a * d - b * c
        if det == 0:
            raise ValueError("degenerate Moebius coefficients")
        self.target = target
        self.label = label

    def eval(self, z, order: int = 0):
        a, b, c, d = self.abcd
        z = np.asarray(z, dtype=complex)
        den = c * z + d
        if order == 0:
            out = (a * z + b) / den
        elif order == 1:
            out = (a * d - b * c) / den**2
        elif order == 2:
            out = -2 * c * (a * d - b * c) / den**3
        else:
            raise ValueError("order must be 0, 1, or 2")
        return out if out.ndim else complex(out)

    def __call__(self, z):
        return self.eval(z, 0)


def identity_map(target: Optional[SymmetrizedDomain] = None) -> PowerSeriesMap:
    return PowerSeriesMap([0.0, 1.0], target=target)


def half_disk_map() -> MobiusMap:
    """Exact map of the upper parameter half-disk onto the lower half-disk.

    f(z) = (z - i)/(1 - i z) sends (-1, 1) onto the lower unit semicircle
    (the Dirichlet arc) with f(0) = -i, and extends to a Moebius map of U onto
    the lower half-plane.  Its derivative gives the closed-form potential
    |f'(z)|^2 = 4 / |z + i|^4 used by the coupling experiments.
    """
    from .geometry import half_disk
    return MobiusMap(1.0, -1j, -1j, 1.0, target=half_disk("arc"),
                     label="half_disk")


# ---------------------------------------------------------------------------
# Theodorsen builder


@dataclass
class RadialTarget:
    """Analytic target described by its polar radius about a center."""

    center: complex
    rho: Callable[[np.ndarray], np.ndarray]
    derivative_arg: float = 0.0
    boundary: Optional[np.ndarray] = None  # dense polyline for distance audits

    def polyline(self, n: int = 16384) -> np.ndarray:
        if self.boundary is not None:
            return self.boundary
        phi = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        return self.center + self.rho(phi) * np.exp(1j * phi)


def disk_target(center: complex = 0j, radius: float = 1.0,
                derivative_arg: float = 0.0) -> RadialTarget:
    return RadialTarget(center, lambda phi: np.full_like(phi, float(radius)),
                        derivative_arg)


def ellipse_target(a: float, b: float, center: complex = 0j) -> RadialTarget:
    def rho(phi):
        return a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2)

    return RadialTarget(center, rho)


def _radial_target_from_symmetrized(sym: SymmetrizedDomain) -> RadialTarget:
    if sym.clipped:
        raise ValueError("cannot map onto an unbounded (clipped) symmetrized "
                         "domain; the disk-map builder needs a bounded target")
    phi, rho = sym.radial_boundary()
    order = np.argsort(phi % (2 * math.pi))
    ph = (phi % (2 * math.pi))[order]
    rh = rho[order]
    ph, idx = np.unique(ph, return_index=True)
    rh = rh[idx]
    ph = np.concatenate([ph, [ph[0] + 2 * math.pi]])
    rh = np.concatenate([rh, [rh[0]]])
    spline = CubicSpline(ph, rh, bc_type="periodic")
    base = ph[0]

    def rho_fn(phi):
        return spline((phi - base) % (2 * math.pi) + base)

    # derivative argument: tangent of the inversion circle at the gamma2 midpoint
    circ = sym.inversion_circle
    mid_angle = math.atan2(sym.anchor.imag - circ.center.imag,
                           sym.anchor.real - circ.center.real)
    a0, a1 = sym.original.gamma2.angles
    beta = mid_angle + math.copysign(math.pi / 2, a1 - a0)
    return RadialTarget(sym.anchor, rho_fn, beta)


def _conjugate_periodic(u: np.ndarray) -> np.ndarray:
    m = len(u)
    F = np.fft.fft(u)
    F[0] = 0.0
    F[1:m // 2] *= -1j
    F[m // 2] = 0.0
    F[m // 2 + 1:] *= 1j
    return np.real(np.fft.ifft(F))


def build_disk_map(target, boundary_nodes: int = 512, tol: float = 1e-8,
                   max_iter: int = 200) -> PowerSeriesMap:
    """Conformal map of the unit disk onto a bounded convex target.

    ``target`` is a SymmetrizedDomain (uses the gamma2 midpoint normalization)
    or a RadialTarget.  Nodes are doubled (up to 4096) until the audited
    boundary distance drops below ``tol``.
    """
    if boundary_nodes < 64 or boundary_nodes & (boundary_nodes - 1):
        raise ValueError("boundary_nodes must be a power of two >= 64")
    sym = None
    if isinstance(target, SymmetrizedDomain):
        sym = target
        radial = _radial_target_from_symmetrized(target)
    elif isinstance(target, MixedDomain):
        sym = symmetrize_domain(target)
        radial = _radial_target_from_symmetrized(sym)
    elif isinstance(target, RadialTarget):
        radial = target
    else:
        raise TypeError("target must be a SymmetrizedDomain, MixedDomain, or "
                        "RadialTarget")

    dense = radial.polyline()
    nodes = boundary_nodes
    last_err = None
    while True:
        cks, residuals = _theodorsen(radial, nodes, max_iter)
        if sym is not None:
            # orient the parameter disk so the upper half maps into D itself
            # (the tangent alignment fixes arg g'(0) only up to sign)
            from .geometry import Side, contains
            probe = complex(np.polyval(cks[::-1], 0.5j))
            if contains(sym.original, probe) != Side.INTERIOR:
                cks = cks * (-1.0) ** np.arange(len(cks))
        gmap = PowerSeriesMap(cks, target=sym,
                              normalization={
                                  "center": [cks[0].real, cks[0].imag],
                                  "derivative_arg": float(np.angle(cks[1])),
                              })
        dist = boundary_distance(gmap, dense, nodes)
        if dist < tol:
            gmap.boundary_distance = dist
            gmap.residuals = residuals
            return gmap
        last_err = dist
        if nodes >= 4096:
            raise MapBuildError(
                f"boundary distance {last_err:.3e} above tol {tol:.3e} "
                f"at {nodes} nodes", residuals)
        nodes *= 2


def _theodorsen(radial: RadialTarget, nodes: int, max_iter: int):
    theta = 2 * math.pi * np.arange(nodes) / nodes
    phi = theta.copy()
    relax = 1.0
    residuals = []
    for _ in range(max_iter):
        u = np.log(radial.rho(phi))
        new_phi = theta + _conjugate_periodic(u)
        res = float(np.max(np.abs(new_phi - phi)))
        residuals.append(res)
        phi = phi + relax * (new_phi - phi)
        if res < 1e-13:
            break
        if len(residuals) > 4 and residuals[-1] > residuals[-4]:
            relax = max(0.25, 0.5 * relax)
    else:
        raise MapBuildError(
            f"Theodorsen iteration did not converge in {max_iter} iterations "
            f"(last residual {residuals[-1]:.3e})", residuals)

    bound = radial.center + radial.rho(phi) * np.exp(1j * phi)
    series_vals = (bound - radial.center) * np.exp(-1j * theta)
    fcoef = np.fft.fft(series_vals) / nodes
    leakage = float(np.max(np.abs(fcoef[nodes // 2:])))
    if leakage > 1e-6:
        raise MapBuildError(
            f"negative-frequency leakage {leakage:.2e}; boundary "
            "correspondence is not analytic enough", residuals)
    cks = np.zeros(nodes // 2 + 1, dtype=complex)
    cks[0] = radial.center
    cks[1:] = fcoef[:nodes // 2]
    # rotate the disk parameter so arg g'(0) matches the requested alignment
    delta = radial.derivative_arg - np.angle(cks[1])
    cks = cks * np.exp(1j * np.arange(len(cks)) * delta)
    cks[np.abs(cks) < COEFF_FLOOR * np.abs(cks).max()] = 0.0
    return cks, residuals


def boundary_distance(gmap: PowerSeriesMap, dense_target: np.ndarray,
                      nodes: int) -> float:
    """sup over offset boundary nodes of dist(g(e^{i theta}), target)."""
    theta = 2 * math.pi * (np.arange(2 * nodes) + 0.5) / (2 * nodes)
    img = gmap.eval(np.exp(1j * theta))
    return float(np.max(distance_to_polyline(dense_target, img, closed=True)))


# ---------------------------------------------------------------------------
# Schwarz reflection across the gamma2 circle


def reflection_values(map_like, circle: Circle, z):
    """z0 + r^2 / conj(f(conj z) - z0): the reflected extension formula."""
    w = np.asarray(map_like.eval(np.conj(np.asarray(z, dtype=complex)), 0))
    return circle.center + circle.radius**2 / np.conj(w - circle.center)


def reflection_derivative(map_like, circle: Circle, z):
    """Analytic derivative of the reflection formula.

    With W(z) = conj(f(conj z)) the extension is z0 + r^2/(W(z) - conj(z0)),
    so its derivative is -r^2 W'(z)/(W(z) - conj(z0))^2.
    """
    z = np.asarray(z, dtype=complex)
    w_conj = np.conj(np.asarray(map_like.eval(np.conj(z), 0)))
    dw = np.conj(np.asarray(map_like.eval(np.conj(z), 1)))
    return -circle.radius**2 * dw / (w_conj - np.conj(circle.center)) ** 2


def seam_derivative_jump(map_like, circle: Circle, n: int = 100) -> float:
    """Max |f'(x) - d/dz reflection(x)| over seam samples x in (-1, 1).

    For a map with the exact reflection symmetry this vanishes; the residual
    measures how far the numerical map is from analytic continuation across
    the seam.
    """
    x = np.linspace(-0.99, 0.99, n)
    upper = np.asarray(map_like.eval(x + 0j, 1))
    lower = reflection_derivative(map_like, circle, x + 0j)
    return float(np.max(np.abs(upper - lower)))


def schwarz_reflect(f_upper, circle: Circle, tol: float = 1e-6,
                    seam_points: int = 100) -> PowerSeriesMap:
    """Extend a map of the upper half-disk across (-1,1) by circle reflection.

    The input series is defined on all of U; the reflection principle says the
    extension of its upper-half restriction is again that series, provided the
    seam maps into the circle and the piecewise reflection formula agrees with
    the series on the lower half.  Both conditions are verified here (seam
    image, interior agreement, one-sided derivative continuity); on success
    the validated series is returned, otherwise ReflectionError is raised.
    """
    x = np.linspace(-0.999, 0.999, seam_points)
    seam_img = np.asarray(f_upper.eval(x + 0j, 0))
    circ_err = float(np.max(np.abs(np.abs(seam_img - circle.center)
                                   - circle.radius)))
    if circ_err > max(tol, 1e-8) * circle.radius:
        raise ReflectionError(
            f"map does not send (-1,1) into the circle (error {circ_err:.3e})")

    rng = np.random.default_rng(0)
    zl = rng.uniform(-0.95, 0.95, 256) - 1j * rng.uniform(0.02, 0.95, 256)
    zl = zl[np.abs(zl) < 0.98]
    direct = np.asarray(f_upper.eval(zl, 0))
    reflected = reflection_values(f_upper, circle, zl)
    agree = float(np.max(np.abs(direct - reflected)))
    jump = seam_derivative_jump(f_upper, circle, seam_points)
    if agree > tol or jump > tol:
        raise ReflectionError(
            f"reflection inconsistency: interior mismatch {agree:.3e}, "
            f"seam derivative jump {jump:.3e} (tol {tol:.1e})")

    if isinstance(f_upper, PowerSeriesMap):
        out = PowerSeriesMap(f_upper.coefficients.copy(), target=f_upper.target,
                             normalization=dict(f_upper.normalization))
        out.seam_jump = jump
        return out
    return f_upper


# ---------------------------------------------------------------------------
# derived quantities


def convexity_functional(map_like, z):
    """Re(1 + z f''(z)/f'(z)); positive on U certifies a convex image."""
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) >= 1.0 + 1e-12):
        raise ValueError("convexity functional is defined for |z| < 1")
    d1 = np.asarray(map_like.eval(z, 1))
    d2 = np.asarray(map_like.eval(z, 2))
    scale = float(np.max(np.abs(d1)))
    if np.any(np.abs(d1) < 1e-13 * max(scale, 1.0)):
        raise CriticalPointError("f' vanishes at a requested point")
    out = (1.0 + z * d2 / d1).real
    return out if out.ndim else float(out)


@dataclass
class RadialProfile:
    monotone: bool
    min_increment: float
    profile: np.ndarray


def radial_profile_check(map_like, theta: float, r_grid) -> RadialProfile:
    """Profile r |f'(r e^{i theta})| over an increasing radius grid."""
    r = np.asarray(r_grid, dtype=float)
    if np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    z = r * cmath.exp(1j * theta)
    prof = r * np.abs(np.asarray(map_like.eval(z, 1)))
    inc = float(np.min(np.diff(prof))) if len(prof) > 1 else 0.0
    return RadialProfile(inc >= -1e-8, inc, prof)


@dataclass
class Potential:
    """Positive potential on the closed upper half-disk (d=2) or half-ball.

    ``evaluate`` takes real coordinate arrays of shape (..., d).  The
    admissibility flag asserts that r^2 V(r zeta) is nondecreasing along rays;
    it is verified by sampling at construction, never assumed.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    admissible: bool
    strict: bool
    label: str = "potential"
    warnings: list = field(default_factory=list)
    constant_value: Optional[float] = None  # set for V == const (fast paths)

    @staticmethod
    def constant(c: float, label: str | None = None) -> "Potential":
        if c <= 0:
            raise ValueError("potential must be positive")

        def ev(pts):
            pts = np.asarray(pts, dtype=float)
            return np.full(pts.shape[:-1], float(c))

        return Potential(ev, admissible=True, strict=True,
                         label=label or f"const[{c}]", constant_value=float(c))


def _ray_admissibility(value_fn, rays: int = 32, radii: int = 64):
    theta = np.linspace(0.02, math.pi - 0.02, rays)
    zeta = np.exp(1j * theta)
    r = np.linspace(1e-3, 0.999, radii)
    z = r[:, None] * zeta[None, :]
    vals = (r[:, None] ** 2) * value_fn(z)
    diffs = np.diff(vals, axis=0)
    scale = float(np.max(np.abs(vals))) or 1.0
    admissible = bool(np.all(diffs >= -1e-10 * scale))
    strict = bool(np.all(diffs > 1e-12 * scale))
    return admissible, strict


def potential_from_map(map_like, rays: int = 32, radii: int = 64) -> Potential:
    """V = |f'|^2 on the closed upper half-disk, with verified admissibility."""

    def value_c(z):
        return np.abs(np.asarray(map_like.eval(z, 1))) ** 2

    def ev(pts):
        pts = np.asarray(pts, dtype=float)
        if pts.shape[-1] != 2:
            raise ValueError("map potentials are two-dimensional")
        z = pts[..., 0] + 1j * pts[..., 1]
        return value_c(z)

    admissible, strict = _ray_admissibility(value_c, rays, radii)
    warnings = []
    if not admissible:
        warnings.append("r^2 V(r zeta) failed the nondecreasing sweep; "
                        "admissibility flag cleared")
    label = getattr(map_like, "label", "map")
    return Potential(ev, admissible=admissible, strict=strict,
                     label=f"|f'|^2[{label}]", warnings=warnings)


# ---------------------------------------------------------------------------
# serialization


def save_map(gmap: PowerSeriesMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(gmap.to_dict(), fh, indent=1)


def load_map(path, boundary_tol: float = 1e-4) -> PowerSeriesMap:
    """Load a serialized map and re-verify the boundary-distance invariant."""
    with open(path) as fh:
        data = json.load(fh)
    coeffs = np.array([complex(re, im) for re, im in data["coefficients"]])
    target = None
    if "domain" in data:
        target = symmetrize_domain(domain_from_spec(data["domain"]))
    gmap = PowerSeriesMap(coeffs, target=target,
                          normalization=data.get("normalization"))
    if target is not None:
        dense = np.concatenate([target.full_boundary, target.full_boundary[:1]])
        dist = boundary_distance(gmap, dense, max(256, gmap.truncation))
        if dist > boundary_tol:
            raise MapBuildError(
                f"loaded map fails the boundary invariant: {dist:.3e}")
        gmap.boundary_distance = dist
    return gmap
