"""Reflected Brownian motion in the unit ball with killing, the scaling
coupling, and the Monte Carlo estimators built on them.

Randomness: every path owns a counter-based Philox stream keyed by
``(seed, path_index)`` and consumes it in a fixed chunked order (normal
increments, then bridge uniforms when hyperplane killing is active), so a
path is bit-identical whether simulated alone or inside any batch.

Discretization: Euler-Maruyama steps of variance dt per coordinate, one
specular reflection per step at the sphere (``x -> (2 - |x|) x/|x|``),
killing by sign change of a clearance function with linear time
interpolation, plus the exact Brownian-bridge crossing correction
``exp(-2 a b / dt)`` for flat killing sets (hyperplane, chord, diameter).
Bridge kills are booked at the midpoint of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .conformal import Potential
from .geometry import MixedDomain, Side, contains, distance_to_polyline, is_starlike_complement

_CHUNK = 4096


class StepSizeError(RuntimeError):
    """A step overshot the reflection validity band |x| <= 1 + 10 sqrt(dt)."""


# ---------------------------------------------------------------------------
# configuration and samples


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters.

    ``killing``: "none", "hyperplane" (last coordinate = 0), or "curve"
    (gamma2 of ``domain``).  ``reflection``: "ball" (unit sphere), "domain"
    (gamma1 of ``domain``), or "none" (free Brownian motion, used by the
    closed-form oracles).
    """

    dimension: int = 2
    dt: float = 1e-4
    max_time: float = 1.0
    bridge_correction: bool = True
    killing: str = "hyperplane"
    reflection: str = "ball"
    domain: Optional[MixedDomain] = None

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("dimension must be >= 2")
        if not (0 < self.dt and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not (0 < self.max_time < math.inf):
            raise ValueError("max time must be finite and positive")
        if self.killing not in ("none", "hyperplane", "curve"):
            raise ValueError(f"unknown killing set {self.killing!r}")
        if self.reflection not in ("ball", "domain", "none"):
            raise ValueError(f"unknown reflection mode {self.reflection!r}")
        if (self.killing == "curve" or self.reflection == "domain") \
                and self.domain is None:
            raise ValueError("curve killing / domain reflection need a domain")

    @property
    def n_steps(self) -> int:
        return int(round(self.max_time / self.dt))


@dataclass
class PathSample:
    """One path on its uniform grid, truncated at the killing step."""

    times: np.ndarray
    positions: np.ndarray      # (k, d); strictly pre-kill states
    killed_at: Optional[float]
    rng_id: tuple
    truncated: bool = False    # reached max_time unkilled
    corner_killed: bool = False

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class CouplingSpec:
    """Scaling-coupling start data: direction zeta (zeta_d > 0), radii r1 < r2."""

    zeta: np.ndarray
    r1: float
    r2: float

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float)
        object.__setattr__(self, "zeta", z)
        nz = float(np.linalg.norm(z))
        if z[-1] <= 0:
            raise ValueError("coupling direction must have positive last coordinate")
        if not 0 < self.r1 < self.r2 < 1.0 / nz:
            raise ValueError("need 0 < r1 < r2 < 1/||zeta||")


@dataclass
class CoupledSample:
    """One realization of the scaling coupling and its path functionals."""

    base: PathSample
    M: np.ndarray              # running max on the base grid
    A: np.ndarray              # clock on the base grid
    alpha: np.ndarray          # inverse clock on the coupled grid
    coupled: PathSample
    tau: Optional[float]
    tau_tilde: Optional[float]
    alpha_at_tau_tilde: Optional[float]
    functional_base: float
    functional_coupled: float
    truncated: bool
    spec: CouplingSpec
    killing_domain: Optional[MixedDomain] = None


@dataclass
class SurvivalEstimate:
    value: float
    stderr: float
    n: int
    query: dict

    def __post_init__(self):
        band = self.value + 3 * self.stderr, self.value - 3 * self.stderr
        if not (-0.01 <= min(band) and max(band) <= 1.01):
            raise ValueError("estimate outside the admissible probability band")


# ---------------------------------------------------------------------------
# RNG protocol


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based per-path stream keyed by (seed, path index)."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


class _StreamBlock:
    """Chunked draws for one path, in the fixed protocol order."""

    def __init__(self, seed: int, index: int, dim: int, draw_uniforms: bool):
        self.rng = path_rng(seed, index)
        self.dim = dim
        self.draw_uniforms = draw_uniforms

    def next_chunk(self, n: int):
        eps = self.rng.standard_normal((n, self.dim))
        u = self.rng.random(n) if self.draw_uniforms else None
        return eps, u


# ---------------------------------------------------------------------------
# killing clearances and in-domain reflections


def gamma2_clearance(domain: MixedDomain) -> tuple[Callable, bool]:
    """(clearance, flat): clearance > 0 strictly inside D relative to gamma2,
    crossing zero exactly on the killing set.  ``flat`` marks straight killing
    sets where the Brownian-bridge correction applies exactly.
    """
    kind, params = domain.kind, domain.params
    if kind == "half_disk" and params.get("dirichlet") == "diameter":
        return (lambda x: x[..., 1]), True
    if kind == "half_disk" and params.get("dirichlet") == "arc":
        return (lambda x: 1.0 - np.hypot(x[..., 0], x[..., 1])), False
    if kind == "arc_gamma1":
        height = math.cos(params["half_aperture"])
        return (lambda x: x[..., 1] - height), True
    if kind == "sector" and params.get("dirichlet", "radii") == "radii":
        half = params["half_angle"]
        return (lambda x: half - np.abs(np.arctan2(x[..., 1], x[..., 0])
                                        - math.pi / 2)), False
    if kind == "arc_gamma2":
        return (lambda x: 1.0 - np.hypot(x[..., 0], x[..., 1])), False
    pts = domain.gamma2.points

    def generic(x):
        z = x[..., 0] + 1j * x[..., 1]
        dist = distance_to_polyline(pts, np.atleast_1d(z))
        side = contains(domain, np.atleast_1d(z), tol=0.0)
        sign = np.where(side == Side.OUTSIDE, -1.0, 1.0)
        return (dist * sign).reshape(np.shape(z))

    return generic, False


def domain_reflector(domain: MixedDomain) -> Callable:
    """Specular projection back into D across gamma1, for direct-in-D runs."""
    kind, params = domain.kind, domain.params

    if kind == "half_disk" and params.get("dirichlet") == "arc":
        def reflect(x):   # gamma1 = the real diameter; fold the upper leak down
            out = x.copy()
            up = out[:, 1] > 0
            out[up, 1] = -out[up, 1]
            return out
        return reflect

    if kind in ("half_disk", "sector", "arc_gamma1"):
        def reflect(x):   # gamma1 on the unit circle: sphere reflection
            return _sphere_reflect(x)
        return reflect

    if kind == "arc_gamma2" and params.get("family") == "warped":
        a = params["bulge"]

        def reflect(x):   # exact in log coordinates, where the wall is a circle
            z = x[:, 0] + 1j * x[:, 1]
            phi = np.angle(z)
            lam = np.log(np.abs(z))
            nrm = np.hypot(phi, lam)
            out = x.copy()
            leak = nrm > a
            if np.any(leak):
                scale = (2 * a - nrm[leak]) / nrm[leak]
                w = np.exp(scale * lam[leak] + 1j * scale * phi[leak])
                out[leak, 0] = w.real
                out[leak, 1] = w.imag
            return out
        return reflect

    poly = domain.gamma1.points

    def reflect(x):       # generic: specular across the nearest gamma1 segment
        z = x[:, 0] + 1j * x[:, 1]
        inside = contains(domain, z, tol=0.0)
        leak = inside == Side.OUTSIDE
        if not np.any(leak):
            return x
        out = x.copy()
        zz = z[leak]
        a = poly[:-1]
        seg = poly[1:] - a
        t = np.clip(((zz[:, None] - a[None, :]) * np.conj(seg[None, :])).real
                    / np.abs(seg)[None, :] ** 2, 0, 1)
        proj = a[None, :] + t * seg[None, :]
        idx = np.argmin(np.abs(zz[:, None] - proj), axis=1)
        near = proj[np.arange(len(zz)), idx]
        refl = 2 * near - zz
        out[leak, 0] = refl.real
        out[leak, 1] = refl.imag
        return out

    return reflect


def _sphere_reflect(x: np.ndarray, dt: float | None = None) -> np.ndarray:
    nrm = np.linalg.norm(x, axis=-1)
    out = x.copy()
    outside = nrm > 1.0
    if np.any(outside):
        if dt is not None and np.any(nrm[outside] > 1.0 + 10.0 * math.sqrt(dt)):
            raise StepSizeError("step landed beyond the reflection validity band")
        scale = (2.0 - nrm[outside]) / nrm[outside]
        out[outside] = x[outside] * scale[:, None]
    return out


# ---------------------------------------------------------------------------
# single-step killing op (the vectorized engines inline the same arithmetic)


@dataclass
class KillResult:
    killed: bool
    time_fraction: float


def detect_killing_hyperplane(prev: np.ndarray, nxt: np.ndarray, dt: float,
                              bridge_correction: bool,
                              uniform: float | None = None) -> KillResult:
    """Single-step hyperplane killing: sign change kills at the linearly
    interpolated time; otherwise the bridge crossing probability
    exp(-2 a b/dt) kills at the step midpoint.  ``uniform`` is the stream
    draw deciding the bridge kill (required when bridge_correction is set).
    """
    a = float(prev[-1])
    b = float(nxt[-1])
    if a <= 0:
        raise ValueError("previous state must lie strictly inside the half-space")
    if b <= 0:
        return KillResult(True, a / (a - b))
    if bridge_correction:
        if uniform is None:
            raise ValueError("bridge correction needs the uniform draw")
        if uniform < math.exp(-2.0 * a * b / dt):
            return KillResult(True, 0.5)
    return KillResult(False, 0.0)


# ---------------------------------------------------------------------------
# batch engines


def _clearance_for(config: SimConfig):
    if config.killing == "hyperplane":
        return (lambda x: x[..., -1]), True
    if config.killing == "curve":
        return gamma2_clearance(config.domain)
    return None, False


def _reflector_for(config: SimConfig):
    if config.reflection == "ball":
        return lambda x: _sphere_reflect(x, config.dt)
    if config.reflection == "domain":
        return domain_reflector(config.domain)
    return lambda x: x


def run_paths_full(starts: np.ndarray, config: SimConfig, seed: int,
                   indices: np.ndarray):
    """Simulate a batch storing complete trajectories.

    Returns ``(positions (B, n+1, d), killed_at (B,), corner_hits (B,))``;
    positions after a kill hold the last pre-kill state (the kill time is the
    interpolated one).  With killing "none" paths simply run to max_time.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    B, d = starts.shape
    n = config.n_steps
    clearance, flat = _clearance_for(config)
    reflect = _reflector_for(config)
    draw_u = config.killing != "none" and config.bridge_correction and flat
    blocks = [_StreamBlock(seed, int(ix), d, draw_u) for ix in indices]

    pos = np.empty((B, n + 1, d))
    pos[:, 0] = starts
    killed_at = np.full(B, np.nan)
    corner_hit = np.zeros(B, dtype=bool)
    x = starts.copy()
    c_prev = clearance(x) if clearance else None
    if clearance is not None and np.any(c_prev <= 0):
        bad = np.nonzero(c_prev <= 0)[0]
        killed_at[bad] = 0.0
    corners = None
    if config.reflection == "domain":
        corners = np.array([[c.real, c.imag] for c in config.domain.corners])
        corner_guard = 2.0 * math.sqrt(config.dt)

    step = 0
    while step < n:
        m = min(_CHUNK, n - step)
        eps = np.empty((B, m, d))
        us = np.empty((B, m)) if draw_u else None
        sdt = math.sqrt(config.dt)
        for i, blk in enumerate(blocks):
            e, u = blk.next_chunk(m)
            eps[i] = e
            if draw_u:
                us[i] = u
        for j in range(m):
            alive = np.isnan(killed_at)
            nxt = x + sdt * eps[:, j]
            if clearance is not None:
                c_next = clearance(nxt)
                crossed = alive & (c_next <= 0)
                if np.any(crossed):
                    frac = c_prev[crossed] / (c_prev[crossed] - c_next[crossed])
                    killed_at[crossed] = (step + j + frac) * config.dt
                if draw_u:
                    candidates = alive & ~crossed
                    if np.any(candidates):
                        a = c_prev[candidates]
                        b = c_next[candidates]
                        p = np.exp(-2.0 * a * b / config.dt)
                        hit = us[candidates, j] < p
                        if np.any(hit):
                            gidx = np.nonzero(candidates)[0][hit]
                            killed_at[gidx] = (step + j + 0.5) * config.dt
                alive = np.isnan(killed_at)
            nxt = np.where(alive[:, None], reflect(nxt), x)
            if corners is not None and np.any(alive):
                dc = np.min(np.linalg.norm(nxt[:, None, :] - corners[None], axis=2),
                            axis=1)
                hit = alive & (dc < corner_guard)
                if np.any(hit):
                    killed_at[hit] = (step + j + 1) * config.dt
                    corner_hit[hit] = True
            x = nxt
            pos[:, step + j + 1] = x
            if clearance is not None:
                c_prev = np.where(np.isnan(killed_at), clearance(x), 1.0)
        step += m
    return pos, killed_at, corner_hit


def simulate_rbm(start, config: SimConfig, rng_id: tuple) -> PathSample:
    """Single reflected path; deterministic given ``rng_id = (seed, index)``."""
    start = np.asarray(start, dtype=float)
    if np.linalg.norm(start) > 1.0 + 1e-12 and config.reflection == "ball":
        raise ValueError("start must lie in the closed unit ball")
    seed, index = rng_id
    pos, killed_at, corner = run_paths_full(start[None, :], config, seed,
                                            np.array([index]))
    ka = None if np.isnan(killed_at[0]) else float(killed_at[0])
    n = config.n_steps
    if ka is None:
        k_last = n
    else:
        k_last = min(int(ka / config.dt), n)
    times = config.dt * np.arange(k_last + 1)
    return PathSample(times, pos[0, :k_last + 1].copy(), ka, (seed, index),
                      truncated=ka is None, corner_killed=bool(corner[0]))


def run_paths_reduce(starts: np.ndarray, config: SimConfig, seed: int,
                     indices: np.ndarray, potential: Optional[Potential] = None):
    """Streaming batch run: per-path kill time and potential functional only.

    Returns ``(tau (B,), functional (B,))`` where tau is NaN for paths alive
    at max_time; the functional is the trapezoid of V along the path up to
    the kill (or max_time when unkilled).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    B, d = starts.shape
    n = config.n_steps
    clearance, flat = _clearance_for(config)
    reflect = _reflector_for(config)
    draw_u = config.killing != "none" and config.bridge_correction and flat
    sdt = math.sqrt(config.dt)

    tau = np.full(B, np.nan)
    func = np.zeros(B)
    veval = potential.evaluate if potential is not None else None
    corners = None
    if config.reflection == "domain":
        corners = np.array([[c.real, c.imag] for c in config.domain.corners])
        corner_guard = 2.0 * math.sqrt(config.dt)

    live_idx = np.arange(B)
    x = starts.copy()
    blocks = [_StreamBlock(seed, int(ix), d, draw_u) for ix in indices]
    blocks_live = list(blocks)
    c_prev = clearance(x) if clearance else None
    if clearance is not None and np.any(c_prev <= 0):
        dead0 = c_prev <= 0
        tau[live_idx[dead0]] = 0.0
        keep = ~dead0
        x, c_prev, live_idx = x[keep], c_prev[keep], live_idx[keep]
        blocks_live = [b for b, k in zip(blocks_live, keep) if k]
    v_prev = veval(x) if veval else None

    step = 0
    while step < n and len(live_idx):
        m = min(_CHUNK, n - step)
        A = len(live_idx)
        eps = np.empty((A, m, d))
        us = np.empty((A, m)) if draw_u else None
        for i, blk in enumerate(blocks_live):
            e, u = blk.next_chunk(m)
            eps[i] = e
            if draw_u:
                us[i] = u
        dead_local = np.zeros(A, dtype=bool)
        for j in range(m):
            aliveA = ~dead_local
            if not np.any(aliveA):
                break
            nxt = x + sdt * eps[:, j]
            if clearance is not None:
                c_next = clearance(nxt)
                crossed = aliveA & (c_next <= 0)
                if np.any(crossed):
                    frac = c_prev[crossed] / (c_prev[crossed] - c_next[crossed])
                    tau[live_idx[crossed]] = (step + j + frac) * config.dt
                    if veval is not None:
                        func[live_idx[crossed]] += (config.dt * frac
                                                    * v_prev[crossed])
                    dead_local |= crossed
                    aliveA = ~dead_local
                if draw_u and np.any(aliveA):
                    a = np.where(aliveA, c_prev, 1.0)
                    b = np.where(aliveA, c_next, 1.0)
                    p = np.exp(-2.0 * a * b / config.dt)
                    hit = aliveA & (us[:, j] < p)
                    if np.any(hit):
                        tau[live_idx[hit]] = (step + j + 0.5) * config.dt
                        if veval is not None:
                            func[live_idx[hit]] += 0.5 * config.dt * v_prev[hit]
                        dead_local |= hit
                        aliveA = ~dead_local
            nxt = np.where(aliveA[:, None], reflect(nxt), x)
            if corners is not None and np.any(aliveA):
                dc = np.min(np.linalg.norm(nxt[:, None, :] - corners[None],
                                           axis=2), axis=1)
                hit = aliveA & (dc < corner_guard)
                if np.any(hit):
                    tau[live_idx[hit]] = (step + j + 1) * config.dt
                    dead_local |= hit
                    aliveA = ~dead_local
            if veval is not None and np.any(aliveA):
                v_next = veval(nxt)
                func[live_idx[aliveA]] += (0.5 * config.dt
                                           * (v_prev[aliveA] + v_next[aliveA]))
                v_prev = v_next
            x = nxt
            if clearance is not None:
                c_prev = clearance(x)
        step += m
        keep = ~dead_local
        if not np.all(keep):
            x = x[keep]
            live_idx = live_idx[keep]
            blocks_live = [b for b, k in zip(blocks_live, keep) if k]
            if clearance is not None:
                c_prev = c_prev[keep]
            if veval is not None:
                v_prev = v_prev[keep]
    if potential is None:
        alive = np.isnan(tau)
        func = np.where(alive, config.max_time, tau)
    return tau, func


# ---------------------------------------------------------------------------
# scaling coupling


class _CouplingCore:
    """Potential-independent part of one coupling realization."""

    __slots__ = ("base", "spec", "killing_domain", "M", "A", "s_grid", "alpha",
                 "coupled_pos", "tau", "k_tau", "frac_tau", "tau_tilde",
                 "k_tilde", "frac_tilde", "alpha_at")

    def __init__(self, base: PathSample, spec: CouplingSpec,
                 killing_domain: Optional[MixedDomain]):
        x0 = base.positions[0]
        if np.linalg.norm(x0 - spec.r1 * spec.zeta) > 1e-9:
            raise ValueError("base path must start at r1 * zeta")
        if base.killed_at is not None:
            raise ValueError("base path must be simulated without killing")
        self.base = base
        self.spec = spec
        self.killing_domain = killing_domain

        times = base.times
        dt = float(times[1] - times[0])
        norms = np.linalg.norm(base.positions, axis=1)
        M = np.maximum(np.maximum.accumulate(norms), spec.r1 / spec.r2)
        inv2 = 1.0 / (M * M)
        A = np.concatenate([[0.0], np.cumsum(
            0.5 * (inv2[1:] + inv2[:-1]) * np.diff(times))])
        if np.any(np.diff(A) <= 0):
            raise RuntimeError("clock A is not strictly increasing")
        self.M, self.A = M, A

        s_grid = np.arange(0.0, A[-1], dt)
        alpha = np.interp(s_grid, A, times)
        M_alpha = np.interp(alpha, times, M)
        B_alpha = np.column_stack(
            [np.interp(alpha, times, base.positions[:, k])
             for k in range(base.positions.shape[1])])
        self.s_grid = s_grid
        self.alpha = alpha
        self.coupled_pos = B_alpha / M_alpha[:, None]

        if killing_domain is not None:
            clear_fn, _ = gamma2_clearance(killing_domain)
        else:
            def clear_fn(x):
                return x[..., -1]
        self.tau, self.k_tau, self.frac_tau = _first_crossing(
            times, clear_fn(base.positions))
        self.tau_tilde, self.k_tilde, self.frac_tilde = _first_crossing(
            s_grid, clear_fn(self.coupled_pos))
        self.alpha_at = None
        if self.tau_tilde is not None:
            self.alpha_at = float(np.interp(self.tau_tilde, s_grid, alpha))

    def with_potential(self, potential: Potential) -> CoupledSample:
        base, spec = self.base, self.spec
        times = base.times
        dt = float(times[1] - times[0])
        f_base = _integrate_to(times, base.positions, potential,
                               self.k_tau, self.frac_tau)
        f_coup = _integrate_to(self.s_grid, self.coupled_pos, potential,
                               self.k_tilde, self.frac_tilde)
        truncated = self.tau is None or self.tau_tilde is None
        k_last = len(times) - 1 if self.tau is None \
            else min(int(self.tau / dt), len(times) - 1)
        base_trunc = PathSample(times[:k_last + 1],
                                base.positions[:k_last + 1], self.tau,
                                base.rng_id, truncated=self.tau is None)
        kc = len(self.s_grid) - 1 if self.tau_tilde is None \
            else min(int(self.tau_tilde / dt), len(self.s_grid) - 1)
        coupled = PathSample(self.s_grid[:kc + 1], self.coupled_pos[:kc + 1],
                             self.tau_tilde, base.rng_id,
                             truncated=self.tau_tilde is None)
        return CoupledSample(base_trunc, self.M, self.A, self.alpha, coupled,
                             self.tau, self.tau_tilde, self.alpha_at,
                             f_base, f_coup, truncated, spec,
                             self.killing_domain)


def scaling_couple(base: PathSample, spec: CouplingSpec,
                   potential: Potential,
                   killing_domain: Optional[MixedDomain] = None) -> CoupledSample:
    """Build the coupled path and both additive functionals from a base path.

    ``base`` must start at r1*zeta and be simulated without killing truncation
    (killing "none") up to max time; the killing set is re-applied here to
    both paths (hyperplane by default, gamma2 of ``killing_domain`` when
    given).
    """
    return _CouplingCore(base, spec, killing_domain).with_potential(potential)


def _first_crossing(times, clearance_values):
    crossed = np.nonzero(clearance_values <= 0)[0]
    if len(crossed) == 0:
        return None, None, None
    k = int(crossed[0])
    if k == 0:
        return 0.0, 0, 0.0
    c = clearance_values
    frac = float(c[k - 1] / (c[k - 1] - c[k]))
    dt = times[1] - times[0]
    return float(times[k - 1] + frac * dt), k, frac


def _integrate_to(times, positions, potential, k, frac):
    vals = potential.evaluate(positions)
    if k is None:
        return float(np.trapz(vals, times))
    if k == 0:
        return 0.0
    dt = times[1] - times[0]
    cum = np.trapz(vals[:k], times[:k])
    v_tau = vals[k - 1] + frac * (vals[k] - vals[k - 1])
    return float(cum + 0.5 * (vals[k - 1] + v_tau) * frac * dt)


@dataclass
class OrderingResult:
    holds: bool
    slack: float


def coupled_ordering_check(sample: CoupledSample, tol: float) -> OrderingResult:
    """Pathwise functional ordering from the coupling construction."""
    slack = sample.functional_coupled - sample.functional_base
    return OrderingResult(slack >= -tol, float(slack))


@dataclass
class KillingOrderResult:
    holds: bool
    tau: Optional[float]
    alpha_at_tau_tilde: Optional[float]
    tau_tilde: Optional[float]


_starlike_cache: dict = {}


def killing_order_check(sample: CoupledSample,
                        tol: float | None = None) -> KillingOrderResult:
    """Chain tau <= alpha(tau~) <= tau~ for curve killing on a certified domain."""
    dom = sample.killing_domain
    if dom is None:
        raise ValueError("killing-order check needs the curve-killing domain")
    key = id(dom)
    if key not in _starlike_cache:
        ok, witness = is_starlike_complement(dom)
        _starlike_cache[key] = ok
        if not ok:
            raise ValueError(f"domain complement is not starlike (witness {witness})")
    elif not _starlike_cache[key]:
        raise ValueError("domain complement is not starlike")
    if tol is None:
        dt = float(sample.base.times[1] - sample.base.times[0])
        tol = 5.0 * math.sqrt(dt)
    if sample.truncated:
        return KillingOrderResult(True, sample.tau, sample.alpha_at_tau_tilde,
                                  sample.tau_tilde)
    holds = (sample.tau <= sample.alpha_at_tau_tilde + tol
             and sample.alpha_at_tau_tilde <= sample.tau_tilde + tol)
    return KillingOrderResult(bool(holds), sample.tau,
                              sample.alpha_at_tau_tilde, sample.tau_tilde)


# ---------------------------------------------------------------------------
# estimators


def _binomial_estimate(hits: np.ndarray, n: int, query: dict) -> SurvivalEstimate:
    p = float(np.sum(hits)) / n
    err = math.sqrt(max(p * (1.0 - p), 1e-300) / n)
    return SurvivalEstimate(p, err, n, query)


def functional_tail_estimate(start, potential: Potential, t: float, n_paths: int,
                             config: SimConfig, seed: int,
                             threads: int = 1) -> SurvivalEstimate:
    """Monte Carlo P{ integral_0^tau V(B_s) ds > t }.

    Unkilled paths carry a lower bound of the functional: those still below t
    at max_time are counted as not exceeding (conservative) and reported via
    the ``unresolved`` query field.
    """
    if not potential.admissible:
        raise ValueError("potential failed its admissibility sweep")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if n_paths < 1:
        raise ValueError("need at least one path")
    start = np.asarray(start, dtype=float)
    if potential.constant_value is not None:
        # integral of a constant is c * tau; skip per-step evaluation
        tau, kill_time = _batched_reduce(start, config, seed, n_paths, None,
                                         threads)
        func = potential.constant_value * kill_time
    else:
        tau, func = _batched_reduce(start, config, seed, n_paths, potential,
                                    threads)
    exceeded = func > t
    unresolved = int(np.sum(np.isnan(tau) & ~exceeded))
    est = _binomial_estimate(exceeded, n_paths,
                             {"start": list(start), "t": t,
                              "potential": potential.label, "seed": seed,
                              "unresolved": unresolved})
    return est


def survival_estimate(start, t: float, n_paths: int, config: SimConfig,
                      seed: int, threads: int = 1) -> SurvivalEstimate:
    """Monte Carlo P{ tau > t } with the horizon clipped to t."""
    start = np.asarray(start, dtype=float)
    cfg = SimConfig(dimension=config.dimension, dt=config.dt, max_time=t,
                    bridge_correction=config.bridge_correction,
                    killing=config.killing, reflection=config.reflection,
                    domain=config.domain)
    tau, _ = _batched_reduce(start, cfg, seed, n_paths, None, threads)
    alive = np.isnan(tau)
    return _binomial_estimate(alive, n_paths,
                              {"start": list(start), "t": t, "seed": seed})


def survival_via_conformal(domain: MixedDomain, map_like, w: complex, t: float,
                           n_paths: int, config: SimConfig, seed: int,
                           threads: int = 1) -> SurvivalEstimate:
    """Estimate u(f(w)) = P^w{ integral |f'(B)|^2 ds > t } in the half-disk.

    Levy conformal invariance turns survival in the arc-gamma2 domain into a
    functional tail for the reflected motion of the parameter half-disk killed
    on the seam.
    """
    target = getattr(map_like, "target", None)
    tgt_dom = getattr(target, "original", target)
    if tgt_dom is not None and (tgt_dom.kind != domain.kind
                                or tgt_dom.params != domain.params):
        raise ValueError("map was not built for this domain")
    if domain.arc_role != "gamma2" and not (
            domain.kind == "half_disk"
            and domain.params.get("dirichlet") == "diameter"):
        raise ValueError("conformal survival needs an arc-gamma2 domain (or "
                         "the flat half-disk with the identity map)")
    if not (abs(w) < 1 and w.imag > 0):
        raise ValueError("w must lie in the open upper half-disk")
    potential = potential_from_map_cached(map_like)
    est = functional_tail_estimate(np.array([w.real, w.imag]), potential, t,
                                   n_paths, config, seed, threads)
    z = complex(np.asarray(map_like.eval(w, 0)))
    est.query["image_point"] = [z.real, z.imag]
    return est


_potential_cache: dict = {}


def potential_from_map_cached(map_like) -> Potential:
    from .conformal import potential_from_map
    key = id(map_like)
    if key not in _potential_cache:
        _potential_cache[key] = potential_from_map(map_like)
    return _potential_cache[key]


def feynman_kac(start, potential: Potential, t: float, n_paths: int,
                config: SimConfig, seed: int, threads: int = 1):
    """E{ exp(-integral_0^t V(B_s) ds); tau > t } with its standard error."""
    if t <= 0:
        raise ValueError("t must be positive")
    start = np.asarray(start, dtype=float)
    cfg = SimConfig(dimension=config.dimension, dt=config.dt, max_time=t,
                    bridge_correction=config.bridge_correction,
                    killing=config.killing, reflection=config.reflection,
                    domain=config.domain)
    tau, func = _batched_reduce(start, cfg, seed, n_paths, potential, threads)
    alive = np.isnan(tau)
    weights = np.where(alive, np.exp(-func), 0.0)
    mean = float(np.mean(weights))
    err = float(np.std(weights, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, err


def _batched_reduce(start: np.ndarray, config: SimConfig, seed: int,
                    n_paths: int, potential, threads: int = 1,
                    batch: int = 8192):
    starts = np.broadcast_to(start, (n_paths, len(start)))
    ranges = [(lo, min(lo + batch, n_paths)) for lo in range(0, n_paths, batch)]

    def run(rg):
        lo, hi = rg
        return run_paths_reduce(starts[lo:hi], config, seed,
                                np.arange(lo, hi), potential)

    if threads > 1 and len(ranges) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, ranges))
    else:
        parts = [run(rg) for rg in ranges]
    tau = np.concatenate([p[0] for p in parts])
    func = np.concatenate([p[1] for p in parts])
    return tau, func


def couple_batch(spec: CouplingSpec, potential, n_paths: int,
                 config: SimConfig, seed: int,
                 killing_domain: Optional[MixedDomain] = None,
                 batch: int = 512, threads: int = 1):
    """Simulate n_paths couplings; one CoupledSample per path.

    ``potential`` may be a single Potential or a list; with a list the base
    simulation and time change are shared and one list of samples is returned
    per potential (the pathwise theorem is checked on the same paths).
    """
    potentials = potential if isinstance(potential, (list, tuple)) \
        else [potential]
    base_cfg = SimConfig(dimension=config.dimension, dt=config.dt,
                         max_time=config.max_time, bridge_correction=False,
                         killing="none", reflection="ball")
    start = spec.r1 * spec.zeta
    out = [[] for _ in potentials]
    times = config.dt * np.arange(config.n_steps + 1)
    for lo in range(0, n_paths, batch):
        hi = min(lo + batch, n_paths)
        starts = np.broadcast_to(start, (hi - lo, len(start)))
        pos, _, _ = run_paths_full(starts, base_cfg, seed, np.arange(lo, hi))
        for i in range(hi - lo):
            base = PathSample(times, pos[i], None, (seed, lo + i),
                              truncated=True)
            core = _CouplingCore(base, spec, killing_domain)
            for slot, pot in enumerate(potentials):
                out[slot].append(core.with_potential(pot))
    if isinstance(potential, (list, tuple)):
        return out
    return out[0]
