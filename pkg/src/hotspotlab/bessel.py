"""Bessel evaluations and first roots used as closed-form eigenvalue references.

Power series with a downward-recurrence fallback for larger arguments; roots
located by bisection from a coarse scan.  Deliberately self-contained so the
reference values stay independent of the finite-element solver they certify.
"""

from __future__ import annotations

import math

_SERIES_CUTOFF = 18.0
_MAX_TERMS = 200


def bessel_j(nu: float, x: float) -> float:
    """J_nu(x) for real nu >= 0 and x >= 0."""
    if x < 0 or nu < 0:
        raise ValueError("bessel_j requires nu >= 0 and x >= 0")
    if x == 0.0:
        return 1.0 if nu == 0 else 0.0
    if x <= _SERIES_CUTOFF or nu != int(nu):
        return _series(nu, x)
    return _miller(int(nu), x)


def bessel_j_derivative(nu: float, x: float) -> float:
    """d/dx J_nu(x) via the standard recurrence."""
    if nu == 0:
        return -bessel_j(1.0, x)
    return 0.5 * (bessel_j(nu - 1.0, x) - bessel_j(nu + 1.0, x))


def _series(nu: float, x: float) -> float:
    # sum_m (-1)^m (x/2)^(nu+2m) / (m! Gamma(m+nu+1))
    half = 0.5 * x
    term = half**nu / math.gamma(nu + 1.0)
    total = term
    for m in range(1, _MAX_TERMS):
        term *= -(half * half) / (m * (m + nu))
        total += term
        if abs(term) < 1e-18 * (abs(total) + 1e-300):
            return total
    raise ArithmeticError(f"Bessel series did not converge for nu={nu}, x={x}")


def _miller(n: int, x: float) -> float:
    # downward recurrence normalized by J0 + 2*sum J_{2k} = 1
    top = int(2 * ((n + int(math.sqrt(40.0 * x))) // 2) + 20)
    jp, j = 0.0, 1e-30
    vals = {}
    total = 0.0
    for k in range(top, 0, -1):
        jm = 2.0 * k / x * j - jp
        jp, j = j, jm
        if abs(j) > 1e280:
            j *= 1e-280
            jp *= 1e-280
            total *= 1e-280
            vals = {kk: vv * 1e-280 for kk, vv in vals.items()}
        if k - 1 == n:
            vals[n] = j
        if (k - 1) % 2 == 0 and k - 1 > 0:
            total += 2.0 * j if (k - 1) % 2 == 0 else 0.0
    total += j  # k-1 == 0 term
    # total currently holds J0 + 2*sum_{k even>0} J_k
    return vals.get(n, j) / total


def first_positive_root(fn, lo: float = 1e-6, hi: float = 30.0,
                        scan_step: float = 0.05, tol: float = 1e-13) -> float:
    """First sign change of ``fn`` in (lo, hi), refined by bisection."""
    a = lo
    fa = fn(a)
    x = a + scan_step
    while x < hi:
        fx = fn(x)
        if fa == 0.0:
            return a
        if fa * fx < 0:
            return _bisect(fn, a, x, tol)
        a, fa = x, fx
        x += scan_step
    raise ValueError("no sign change found in scan range")


def _bisect(fn, a: float, b: float, tol: float) -> float:
    fa = fn(a)
    while b - a > tol:
        m = 0.5 * (a + b)
        fm = fn(m)
        if fm == 0.0:
            return m
        if fa * fm < 0:
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def j_zero(nu: float) -> float:
    """First positive zero of J_nu."""
    return first_positive_root(lambda x: bessel_j(nu, x))


def j_prime_zero(nu: float) -> float:
    """First positive zero of J_nu'.

    For nu >= 1 this is the first interior maximum of J_nu; the scan starts
    past zero where J_nu' > 0.
    """
    if nu <= 0:
        raise ValueError("j_prime_zero defined here for nu > 0 only")
    return first_positive_root(lambda x: bessel_j_derivative(nu, x), lo=0.05)
