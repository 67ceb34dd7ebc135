"""Dynamic-programming solvers.

``finite_horizon_solve`` runs the backward recursion

    V_t(pi, p) = max_{|pi'| <= M} [ p pi' - gamma |pi' - pi| + E[V_{t+1}(pi', p') | p] ]

on a (position, predictor) grid, starting from V_T(pi, p) = max_pi' p_inf(p) pi'
- gamma |pi' - pi|. The expectation integrates the Gaussian kernel exactly
against the piecewise-linear interpolant of V_{t+1}, with linear
extrapolation beyond the grid edges.

``stationary_g_solve`` solves the infinite-horizon self-consistency problem

    g(p) = p + gamma [P(p' > q | p) - P(p' < -q | p)] + int_{-q}^{q} K(p'|p) g(p') dp'
    g(q*) = gamma

with a Nystrom discretisation of the integral on [-q, q].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .analytic import CostModel, continuum_raw, threshold_limits
from .errors import BracketError, DivergenceError, DomainError, ResolutionError
from .sde import OuParams, stationary_std
from .special import DEFAULT_TOL, Tolerances, bracketed_root

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GridSpec:
    p_max: float
    n_points: int = 201
    quadrature: Literal["trapezoid", "gauss-legendre"] = "gauss-legendre"

    def __post_init__(self):
        if self.n_points < 33 or self.n_points % 2 == 0:
            raise DomainError("n_points must be odd and >= 33")
        if not self.p_max > 0:
            raise DomainError("p_max must be positive")
        if self.quadrature not in ("trapezoid", "gauss-legendre"):
            raise DomainError(f"unknown quadrature {self.quadrature!r}")

    @classmethod
    def for_params(cls, params: OuParams, n_points: int = 201, width: float = 8.0,
                   cost: CostModel | None = None, **kw):
        """``width`` stationary deviations; with ``cost`` also at least twice
        the clipped continuum threshold, which matters in the naive regime
        where q* sits many deviations out."""
        p_max = width * stationary_std(params)
        if cost is not None and cost.gamma > 0:
            p_max = max(p_max, 2.0 * min(continuum_raw(params, cost.gamma), cost.gamma))
        return cls(p_max=p_max, n_points=n_points, **kw)

    def check(self, params: OuParams):
        if self.p_max < 8.0 * stationary_std(params) * (1 - 1e-12):
            raise DomainError("p_max must cover 8 stationary deviations")

    def nodes(self) -> np.ndarray:
        return np.linspace(-self.p_max, self.p_max, self.n_points)


@dataclass
class GridFunction:
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.nodes.shape != self.values.shape or self.nodes.ndim != 1:
            raise DomainError("nodes and values must be 1-d and of equal length")
        if np.any(np.diff(self.nodes) <= 0):
            raise DomainError("nodes must be strictly increasing")

    def __call__(self, p):
        return np.interp(p, self.nodes, self.values)


@dataclass
class BellmanSolution:
    thresholds: np.ndarray
    p_nodes: np.ndarray
    pos_nodes: np.ndarray
    value_grids: list = field(default_factory=list, repr=False)
    g_grids: list = field(default_factory=list, repr=False)
    bang_bang_violations: int = 0
    worst_interior_gain: float = 0.0

    @property
    def grid_spacing(self) -> float:
        return float(self.p_nodes[1] - self.p_nodes[0])


@dataclass
class SelfConsistentSolution:
    g: GridFunction
    q_star: float
    iterations: int
    residual: float
    outer_iterations: int = 0
    n_nodes: int = 0


def policy(p: float, prev_pos: float, q: float, M: float) -> float:
    """Bang-bang rule: +M at or above q, -M at or below -q, else hold."""
    if abs(prev_pos) > M:
        raise DomainError("|prev_pos| must not exceed M")
    if p >= q:
        return M
    if p <= -q:
        return -M
    return prev_pos


def extract_threshold(g: GridFunction, gamma: float) -> float:
    """Linear-interpolated root of g(p) = gamma on an increasing g."""
    v = g.values
    if np.any(np.diff(v) <= 0):
        raise DomainError("g must be strictly increasing on its nodes")
    if not (v[0] <= gamma <= v[-1]):
        raise BracketError(f"gamma={gamma} outside the range of g", (v[0], v[-1]))
    q = float(np.interp(gamma, v, g.nodes))
    return max(q, 0.0)


# ---------------------------------------------------------------------------
# finite horizon
# ---------------------------------------------------------------------------


def linear_kernel_matrix(nodes: np.ndarray, params: OuParams) -> np.ndarray:
    """T[i, j] such that E[f(p') | p = nodes[i]] = sum_j T[i, j] f(nodes[j])
    for f piecewise linear on ``nodes`` and linearly extrapolated outside."""
    n = len(nodes)
    mean = (1.0 - params.epsilon) * nodes[:, None]
    s = params.beta
    z = (nodes[None, :] - mean) / s
    cdf = ndtr(z)
    pdf = np.exp(-0.5 * z * z) * _INV_SQRT_2PI
    h = np.diff(nodes)[None, :]
    m0 = cdf[:, 1:] - cdf[:, :-1]
    # int over [x_j, x_{j+1}] of (p' - x_j) K dp'
    m1 = (mean - nodes[None, :-1]) * m0 + s * (pdf[:, :-1] - pdf[:, 1:])
    T = np.zeros((n, n))
    T[:, 1:] += m1 / h
    T[:, :-1] += m0 - m1 / h
    # right tail: int_b^inf K (1 + (p'-b)/h slope) dp'
    b = nodes[-1]
    t0 = 1.0 - cdf[:, -1]
    t1 = s * pdf[:, -1] - (b - mean[:, 0]) * t0
    hr = nodes[-1] - nodes[-2]
    T[:, -1] += t0 + t1 / hr
    T[:, -2] -= t1 / hr
    # left tail, mirrored
    a = nodes[0]
    t0 = cdf[:, 0]
    t1 = s * pdf[:, 0] + (a - mean[:, 0]) * t0
    hl = nodes[1] - nodes[0]
    T[:, 0] += t0 + t1 / hl
    T[:, 1] -= t1 / hl
    return T


def finite_horizon_solve(
    params: OuParams,
    cost: CostModel,
    horizon: int,
    grid: GridSpec,
    n_pos: int = 3,
    keep_grids: bool = True,
) -> BellmanSolution:
    """Backward induction over ``horizon`` decision steps.

    Every step checks that the best position over the full position grid is
    attained in {-M, previous, +M}; violations are counted in the result
    rather than raised, so the structure can be observed.
    """
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    if n_pos < 3 or n_pos % 2 == 0:
        raise DomainError("n_pos must be odd and >= 3")
    if cost.gamma <= 0:
        raise DomainError("gamma must be positive")
    grid.check(params)
    M, gam = cost.max_pos, cost.gamma
    p = grid.nodes()
    pos = np.linspace(-M, M, n_pos)
    pos[n_pos // 2] = 0.0
    T = linear_kernel_matrix(p, params)
    trade_cost = gam * np.abs(pos[None, :] - pos[:, None])  # [prev, new]
    extreme = np.zeros(n_pos, dtype=bool)
    extreme[[0, -1]] = True
    allowed = extreme[None, :] | np.eye(n_pos, dtype=bool)  # [prev, new]

    thresholds = np.empty(horizon)
    values, gs = [], []
    violations = 0
    worst = -np.inf

    def maximise(gain):
        # gain[new, p]: everything except the trading cost
        nonlocal violations, worst
        obj = gain[None, :, :] - trade_cost[:, :, None]  # [prev, new, p]
        best = obj.max(axis=1)
        restricted = np.where(allowed[:, :, None], obj, -np.inf).max(axis=1)
        excess = best - restricted
        tol = max(1e-12 * gam * M, 64 * np.finfo(float).eps * np.max(np.abs(best)))
        violations += int(np.count_nonzero(excess > tol))
        worst = max(worst, float(excess.max()))
        return best

    g = p / params.epsilon
    V = maximise(np.outer(pos, g))
    thresholds[-1] = _threshold_on_grid(p, g, gam)
    if keep_grids:
        values.append(V)
        gs.append(g)
    for t in range(horizon - 2, -1, -1):
        C = V @ T.T  # [new, p]
        g = p + (C[-1] - C[0]) / (2.0 * M)
        V = maximise(np.outer(pos, p) + C)
        thresholds[t] = _threshold_on_grid(p, g, gam)
        if keep_grids:
            values.append(V)
            gs.append(g)
    values.reverse()
    gs.reverse()
    return BellmanSolution(
        thresholds=thresholds,
        p_nodes=p,
        pos_nodes=pos,
        value_grids=values,
        g_grids=gs,
        bang_bang_violations=violations,
        worst_interior_gain=worst,
    )


def _threshold_on_grid(p, g, gamma):
    if g[-1] < gamma:
        raise ResolutionError("g never reaches gamma on the grid; widen p_max")
    return extract_threshold(GridFunction(p, g), gamma)


# ---------------------------------------------------------------------------
# stationary self-consistency
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _legendre(n: int):
    return leggauss(n)


def _quadrature(q: float, n: int, rule: str) -> tuple[np.ndarray, np.ndarray]:
    if rule == "gauss-legendre":
        x, w = _legendre(n)
        return q * x, q * w
    x = np.linspace(-q, q, n)
    w = np.full(n, x[1] - x[0])
    w[[0, -1]] *= 0.5
    return x, w


class _Nystrom:
    """Discretised self-consistency map for one candidate threshold."""

    def __init__(self, params: OuParams, gamma: float, q: float, n: int, rule: str):
        self.params, self.gamma, self.q = params, gamma, q
        self.x, self.w = _quadrature(q, n, rule)

    def kernel(self, p):
        m = (1.0 - self.params.epsilon) * np.asarray(p, dtype=float)[..., None]
        z = (self.x - m) / self.params.beta
        return np.exp(-0.5 * z * z) * (_INV_SQRT_2PI / self.params.beta) * self.w

    def source(self, p):
        p = np.asarray(p, dtype=float)
        m = (1.0 - self.params.epsilon) * p
        b = self.params.beta
        up = ndtr((m - self.q) / b)
        down = ndtr((-self.q - m) / b)
        return p + self.gamma * (up - down)

    def solve(self, inner: str, tol: Tolerances) -> tuple[np.ndarray, int, float]:
        A = self.kernel(self.x)
        rhs = self.source(self.x)
        if inner == "direct":
            g = np.linalg.solve(np.eye(len(rhs)) - A, rhs)
            return g, 1, float(np.max(np.abs(g - rhs - A @ g)))
        return _successive_substitution(A, rhs, tol)

    def evaluate(self, g_nodes: np.ndarray, p):
        return self.source(p) + self.kernel(p) @ g_nodes


def _successive_substitution(A, rhs, tol: Tolerances, max_iter: int = 200_000):
    g = rhs.copy()
    prev_delta = None
    prev_step = None
    damping = 1.0
    growth = 0
    for it in range(1, max_iter + 1):
        new = rhs + A @ g
        step = new - g
        delta = float(np.max(np.abs(step)))
        if prev_step is not None and damping == 1.0 and float(step @ prev_step) < 0:
            damping = 0.5
        g = g + damping * step
        if delta <= tol.residual_tol(float(np.max(np.abs(g)))):
            return g, it, delta
        if prev_delta is not None and delta > prev_delta * (1 + 1e-12):
            growth += 1
            if growth > 20:
                raise DivergenceError("fixed-point residual keeps growing")
        else:
            growth = 0
        prev_delta, prev_step = delta, step
    raise DivergenceError(f"no convergence after {max_iter} iterations")


def _node_count(grid: GridSpec | None, q_hi: float, beta: float, h_frac: float, max_nodes: int) -> int:
    base = grid.n_points if grid is not None else 33
    n = max(base, math.ceil(2.0 * q_hi / (h_frac * beta)) + 1)
    if n > max_nodes:
        raise ResolutionError(
            f"{n} nodes needed to resolve the kernel on [-q, q]; raise max_nodes"
        )
    return n | 1


def stationary_g_solve(
    params: OuParams,
    cost: CostModel,
    grid: GridSpec | None = None,
    tol: Tolerances = DEFAULT_TOL,
    inner: Literal["direct", "iterate"] = "direct",
    h_frac: float = 1.0,
    max_nodes: int = 6001,
) -> SelfConsistentSolution:
    """Stationary threshold from the self-consistency equation.

    Parameters
    ----------
    grid
        Only ``n_points`` (minimum node count) and ``quadrature`` are used;
        the nodes live on [-q, q] and are refined so their spacing is at
        most ``h_frac * beta`` at the upper end of the initial bracket.
        Gauss-Legendre converges spectrally here; the trapezoid rule only
        at O(h^2) because the kernel is cut off at +/-q.
    inner
        ``"direct"`` solves the linear fixed-point system in one shot;
        ``"iterate"`` runs successive substitution.
    """
    if cost.gamma <= 0:
        raise DomainError("gamma must be positive")
    gam, e, b = cost.gamma, params.epsilon, params.beta
    rule = grid.quadrature if grid is not None else "gauss-legendre"
    lo_full, hi_full = 0.5 * gam * e, gam

    guess = min(continuum_raw(params, gam), gam)
    if b > gam:
        guess = max(guess, threshold_limits(params, cost)["discrete_corrected"])
    lo = max(lo_full, 0.5 * guess)
    hi = min(hi_full, 2.0 * guess)
    n = _node_count(grid, hi, b, h_frac, max_nodes)

    last = {}

    def f(q):
        model = _Nystrom(params, gam, q, n, rule)
        g_nodes, its, res = model.solve(inner, tol)
        last[q] = (model, g_nodes, its, res)
        return float(model.evaluate(g_nodes, q)) - gam

    flo, fhi = f(lo), f(hi)
    if flo > 0 and lo > lo_full:
        lo = lo_full
        flo = f(lo)
    if fhi < 0 and hi < hi_full:
        hi = hi_full
        fhi = f(hi)
    q_star, outer = bracketed_root(
        f, lo, hi, tol.residual_tol(gam), tol.max_iter, flo=flo, fhi=fhi
    )
    if q_star not in last:
        f(q_star)
    model, g_nodes, its, res = last[q_star]
    nodes = model.x
    values = g_nodes
    # append the exact boundary values so the GridFunction spans [-q*, q*]
    if nodes[0] > -q_star:
        ends = model.evaluate(g_nodes, np.array([-q_star, q_star]))
        nodes = np.concatenate([[-q_star], nodes, [q_star]])
        values = np.concatenate([[ends[0]], values, [ends[1]]])
    residual = max(res, abs(float(model.evaluate(g_nodes, q_star)) - gam))
    return SelfConsistentSolution(
        g=GridFunction(nodes, values),
        q_star=float(q_star),
        iterations=its,
        residual=residual,
        outer_iterations=outer,
        n_nodes=n,
    )
