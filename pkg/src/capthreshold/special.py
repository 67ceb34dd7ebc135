"""Dawson function, the threshold function F = x - D(x), its inverse, and
the rescaled H(x) = x F^{-1}(1/x).

Evaluation of D(x) is split in three ranges:

* ``|x| <= 1``   Maclaurin series (alternating, fast for small x)
* ``1 < |x| < 6`` Rybicki's Gaussian sampling sum with step 0.2
* ``|x| >= 6``   asymptotic series in 1/(2x^2), truncated at its smallest term

All three agree to ~1e-16 at the switch points. Integrating exp(v^2) directly
is never done since it overflows quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, BracketError, DomainError

SERIES_MAX = 1.0
ASYMPTOTIC_MIN = 6.0

_RYB_H = 0.2
# odd n with |x - n h| <= 7 for every x in (1, 6)
_RYB_N = np.arange(-35, 72, 2, dtype=float)
_RYB_SHIFT = _RYB_N * _RYB_H
_SQRT_PI = math.sqrt(math.pi)

# max of D on [0, inf), attained at x ~ 0.9241
DAWSON_MAX = 0.5410442246351818


@dataclass(frozen=True)
class Tolerances:
    """Tolerances for iterative numerics.

    abs_tol and rel_tol combine as ``abs_tol + rel_tol * |target|`` on the
    residual of whatever equation is being solved.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("tolerances must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")

    def residual_tol(self, target: float) -> float:
        return self.abs_tol + self.rel_tol * abs(target)


DEFAULT_TOL = Tolerances()


def _dawson_series(x: np.ndarray) -> np.ndarray:
    # D(x) = sum_k (-1)^k 2^k x^(2k+1) / (2k+1)!!
    x2 = x * x
    term = x.copy()
    total = x.copy()
    for k in range(60):
        term = term * (-2.0 * x2) / (2 * k + 3)
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _f_series(x: np.ndarray) -> np.ndarray:
    # x - D(x) = 2x^3/3 - 4x^5/15 + ..., summed directly to avoid cancellation
    x2 = x * x
    term = 2.0 * x * x2 / 3.0
    total = term.copy()
    for k in range(1, 60):
        term = term * (-2.0 * x2) / (2 * k + 3)
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _dawson_rybicki(x: np.ndarray) -> np.ndarray:
    d = x[:, None] - _RYB_SHIFT[None, :]
    return np.sum(np.exp(-d * d) / _RYB_N[None, :], axis=1) / _SQRT_PI


def _dawson_asymptotic(x: np.ndarray) -> np.ndarray:
    # D(x) ~ 1/(2x) * sum_k (2k-1)!! / (2x^2)^k
    inv = 1.0 / (2.0 * x * x)
    term = np.ones_like(x)
    total = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(200):
        nxt = term * (2 * k + 1) * inv
        # stop each entry at its smallest term
        active &= (nxt < term) & (nxt > 1e-18 * total)
        if not active.any():
            break
        term = np.where(active, nxt, term)
        total = np.where(active, total + nxt, total)
    return total / (2.0 * x)


def _as_finite_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("argument must be finite")
    return arr, arr.ndim == 0


def dawson(x):
    """Dawson's integral D(x) = exp(-x^2) * int_0^x exp(v^2) dv.

    Accepts scalars or arrays; odd in x.
    """
    arr, scalar = _as_finite_array(x)
    a = np.abs(np.atleast_1d(arr)).ravel()
    out = np.empty_like(a)
    lo = a <= SERIES_MAX
    hi = a >= ASYMPTOTIC_MIN
    mid = ~(lo | hi)
    if lo.any():
        out[lo] = _dawson_series(a[lo])
    if mid.any():
        out[mid] = _dawson_rybicki(a[mid])
    if hi.any():
        out[hi] = _dawson_asymptotic(a[hi])
    out = np.copysign(out, np.atleast_1d(arr).ravel())
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def big_f(x):
    """F(x) = x - D(x) for x >= 0; strictly increasing, F(0) = 0."""
    arr, scalar = _as_finite_array(x)
    if np.any(arr < 0):
        raise DomainError("big_f is defined for x >= 0")
    a = np.atleast_1d(arr).ravel()
    out = np.empty_like(a)
    small = a <= SERIES_MAX
    if small.any():
        out[small] = _f_series(a[small])
    if (~small).any():
        out[~small] = a[~small] - dawson(a[~small])
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def bracketed_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    ftol: float,
    max_iter: int = 200,
    flo: float | None = None,
    fhi: float | None = None,
) -> tuple[float, int]:
    """Find a root of ``f`` inside [lo, hi] with a secant/bisection hybrid.

    Regula falsi with the Illinois modification; a bisection step is forced
    whenever an iteration fails to halve the bracket. Stops once
    ``|f(x)| <= ftol`` or the bracket collapses to a few ulps.

    Returns (root, iterations).
    """
    if lo > hi:
        lo, hi = hi, lo
    flo = f(lo) if flo is None else flo
    fhi = f(hi) if fhi is None else fhi
    if abs(flo) <= ftol:
        return lo, 0
    if abs(fhi) <= ftol:
        return hi, 0
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(
            f"f has the same sign at both ends of [{lo!r}, {hi!r}]", (lo, hi)
        )
    side = 0
    width = hi - lo
    x = lo
    for it in range(1, max_iter + 1):
        x = hi - fhi * (hi - lo) / (fhi - flo)
        if not (lo < x < hi) or (hi - lo) > 0.5 * width:
            x = 0.5 * (lo + hi)
            side = 0
        width = hi - lo
        fx = f(x)
        if abs(fx) <= ftol:
            return x, it
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
            if side == -1:
                fhi *= 0.5
            side = -1
        else:
            hi, fhi = x, fx
            if side == 1:
                flo *= 0.5
            side = 1
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1e-300):
            return (lo if abs(flo) < abs(fhi) else hi), it
    raise ConvergenceError(
        f"root not found within {max_iter} iterations", (lo, hi)
    )


def big_f_inv(y: float, tol: Tolerances = DEFAULT_TOL) -> float:
    """Inverse of F on [0, inf).

    The bracket starts from the two asymptotic inverses (3y/2)^(1/3) and
    y + 1/(2y); when one of them does not enclose the root the rigorous
    bounds y <= F^{-1}(y) <= y + max D are used instead.
    """
    y = float(y)
    if not math.isfinite(y) or y < 0:
        raise DomainError("big_f_inv needs a finite y >= 0")
    if y == 0.0:
        return 0.0
    small = (1.5 * y) ** (1.0 / 3.0)
    large = y + 0.5 / y
    lo, hi = min(small, large), max(small, large)

    def resid(x):
        return big_f(x) - y

    flo, fhi = resid(lo), resid(hi)
    if flo > 0:
        lo = y
        flo = resid(lo)
    if fhi < 0:
        hi = y + DAWSON_MAX
        fhi = resid(hi)
    root, _ = bracketed_root(
        resid, lo, hi, tol.residual_tol(y), tol.max_iter, flo=flo, fhi=fhi
    )
    # For small y the absolute tolerance dominates and F' = 2 x D(x) is
    # small, so polish with Newton steps while the residual keeps dropping.
    r = resid(root)
    for _ in range(3):
        slope = 2.0 * root * dawson(root)
        if r == 0.0 or slope <= 0.0:
            break
        cand = root - r / slope
        rc = resid(cand)
        if not abs(rc) < abs(r):
            break
        root, r = cand, rc
    return root


def h_func(x: float, tol: Tolerances = DEFAULT_TOL) -> float:
    """H(x) = x * F^{-1}(1/x), x > 0."""
    x = float(x)
    if not (x > 0 and math.isfinite(x)):
        raise DomainError("h_func needs x > 0")
    return x * big_f_inv(1.0 / x, tol)


def exp_integral_ratio(p, q: float, a: float):
    """int_0^p exp(a v^2) dv / int_0^q exp(a v^2) dv for |p| <= q.

    Written as exp(a (p^2 - q^2)) D(p sqrt a) / D(q sqrt a), which never
    overflows on the allowed domain.
    """
    p = np.asarray(p, dtype=float)
    s = math.sqrt(a)
    den = dawson(q * s)
    return np.exp(a * (p * p - q * q)) * dawson(p * s) / den
