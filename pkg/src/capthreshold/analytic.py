"""Closed-form thresholds for the OU predictor and the first-exit functions
L(p), P(p) of the drift-diffusion approximation.

Conventions: ``a = epsilon / beta**2``, ``eta = gamma * epsilon**1.5 / beta``.
The continuum threshold is

    q* = beta / sqrt(epsilon) * F^{-1}(eta),   F(x) = x - D(x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError
from .sde import OuParams
from .special import DEFAULT_TOL, Tolerances, big_f_inv, bracketed_root, dawson, exp_integral_ratio

KAPPA = 1.5 ** (1.0 / 3.0)
DEFAULT_CUTS = (20.0, 10.0)


class Method(str, Enum):
    ANALYTIC_CONTINUUM = "analytic-continuum"
    ANALYTIC_LIMIT_NAIVE = "analytic-limit-naive"
    ANALYTIC_LIMIT_BROWNIAN = "analytic-limit-brownian"
    ANALYTIC_DISCRETE = "analytic-discrete"
    FIXED_POINT = "fixed-point"
    BELLMAN = "bellman"
    GRID_SEARCH = "grid-search"


class Regime(str, Enum):
    DISCRETE = "discrete"
    CONTINUUM = "continuum"
    CROSSOVER = "crossover"


@dataclass(frozen=True)
class CostModel:
    """Linear cost per unit traded and the position cap M.

    gamma = 0 is accepted so frictionless backtests can be run; the threshold
    solvers reject it.
    """

    gamma: float
    max_pos: float = 1.0

    def __post_init__(self):
        if not (self.gamma >= 0.0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if not (self.max_pos > 0.0 and math.isfinite(self.max_pos)):
            raise DomainError(f"max_pos must be positive, got {self.max_pos}")


@dataclass
class ThresholdEstimate:
    q_star: float
    method: Method
    regime: Regime
    eta: float
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "q_star": self.q_star,
            "method": self.method.value,
            "regime": self.regime.value,
            "eta": self.eta,
            "diagnostics": dict(self.diagnostics),
        }


def _require_gamma(cost: CostModel):
    if cost.gamma <= 0:
        raise DomainError("threshold solvers need gamma > 0")


def eta_of(params: OuParams, cost: CostModel) -> float:
    return cost.gamma * params.epsilon ** 1.5 / params.beta


def continuum_raw(params: OuParams, gamma: float, tol: Tolerances = DEFAULT_TOL) -> float:
    """Unclipped continuum formula."""
    eta = gamma * params.epsilon ** 1.5 / params.beta
    return params.beta / math.sqrt(params.epsilon) * big_f_inv(eta, tol)


def threshold_continuum(
    params: OuParams,
    cost: CostModel,
    tol: Tolerances = DEFAULT_TOL,
    cuts: tuple[float, float] = DEFAULT_CUTS,
) -> ThresholdEstimate:
    """Continuum threshold, clipped to gamma.

    The formula exceeds gamma once beta is comparable to gamma, where it is
    no longer valid; the clipped value is returned and the raw one kept in
    ``diagnostics["unclipped"]``.
    """
    _require_gamma(cost)
    eta = eta_of(params, cost)
    raw = continuum_raw(params, cost.gamma, tol)
    q = min(raw, cost.gamma)
    return ThresholdEstimate(
        q_star=q,
        method=Method.ANALYTIC_CONTINUUM,
        regime=_classify(raw, params, cost, cuts),
        eta=eta,
        diagnostics={
            "eta": eta,
            "q_over_beta": q / params.beta,
            "q_over_gamma": q / cost.gamma,
            "unclipped": raw,
            "clipped": float(raw > cost.gamma),
        },
    )


def threshold_limits(params: OuParams, cost: CostModel) -> dict:
    """Closed forms valid in the limiting regimes.

    naive               gamma * epsilon           (eta >> 1)
    brownian            (3/2 gamma beta^2)^(1/3)  (eta << 1, beta << gamma)
    discrete            gamma                     (beta >> gamma)
    discrete_corrected  gamma - (1-eps) sqrt(2/pi) gamma^2 / beta
    """
    _require_gamma(cost)
    e, b, g = params.epsilon, params.beta, cost.gamma
    brownian = (1.5 * g * b * b) ** (1.0 / 3.0)
    # probability of a one-step jump from q = gamma to beyond -q
    x_star = (2.0 - e) * g / b
    return {
        "naive": g * e,
        "brownian": brownian,
        "discrete": g,
        "discrete_corrected": g - (1.0 - e) * math.sqrt(2.0 / math.pi) * g * g / b,
        "diagnostics": {
            "kappa": KAPPA,
            "brownian_over_beta": brownian / b,
            "kappa_cbrt_gamma_over_beta": KAPPA * (g / b) ** (1.0 / 3.0),
            "x_star": x_star,
            "jump_probability": 0.5 * math.erfc(x_star / math.sqrt(2.0)),
        },
    }


def _classify(q_cont: float, params: OuParams, cost: CostModel, cuts) -> Regime:
    continuum_min_ratio, discrete_min_ratio = cuts
    if q_cont / params.beta >= continuum_min_ratio:
        return Regime.CONTINUUM
    if params.beta / cost.gamma >= discrete_min_ratio:
        return Regime.DISCRETE
    return Regime.CROSSOVER


def regime_classify(
    params: OuParams,
    cost: CostModel,
    cuts: tuple[float, float] = DEFAULT_CUTS,
) -> Regime:
    """Continuum if q*/beta >= cuts[0]; discrete if beta/gamma >= cuts[1]."""
    _require_gamma(cost)
    return _classify(continuum_raw(params, cost.gamma), params, cost, cuts)


def _check_inside(p, q):
    if q <= 0:
        raise DomainError("q must be positive")
    if np.any(np.abs(p) > q):
        raise DomainError("p must satisfy |p| <= q")


def hitting_prob_closed(p, q: float, params: OuParams):
    """Probability of leaving (-q, q) through -q, started at p."""
    _check_inside(p, q)
    a = params.epsilon / params.beta ** 2
    out = 0.5 * (1.0 - exp_integral_ratio(p, q, a))
    return float(out) if np.ndim(out) == 0 else out


def expected_sum_closed(p, q: float, params: OuParams):
    """Expected time-integral of the predictor before leaving (-q, q)."""
    _check_inside(p, q)
    a = params.epsilon / params.beta ** 2
    out = (np.asarray(p, dtype=float) - q * exp_integral_ratio(p, q, a)) / params.epsilon
    return float(out) if np.ndim(out) == 0 else out


def kolmogorov_residual(q: float, params: OuParams, n_grid: int) -> tuple[float, float]:
    """Max finite-difference residuals of the backward ODEs on an interior grid.

        1/2 beta^2 L'' - eps p L' + p = 0,    1/2 beta^2 P'' - eps p P' = 0

    Derivatives use second-order central differences on ``n_grid`` uniformly
    spaced points strictly inside (-q, q); each residual is divided by
    max(1, |p|).
    """
    if n_grid < 16:
        raise DomainError("n_grid must be >= 16")
    h = 2.0 * q / (n_grid + 1)
    p = -q + h * np.arange(n_grid + 2)
    p[0], p[-1] = -q, q
    L = expected_sum_closed(p, q, params)
    P = hitting_prob_closed(p, q, params)
    half_b2 = 0.5 * params.beta ** 2
    e = params.epsilon
    pi = p[1:-1]
    scale = np.maximum(1.0, np.abs(pi))

    def resid(f, source):
        d2 = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
        d1 = (f[2:] - f[:-2]) / (2.0 * h)
        return np.max(np.abs(half_b2 * d2 - e * pi * d1 + source) / scale)

    return float(resid(L, pi)), float(resid(P, 0.0))


def path_identity_ratio(q: float, params: OuParams, u: float | None = None) -> float:
    """L(q - u) / P(q - u); equals 2 gamma at the continuum optimum as u -> 0."""
    if u is None:
        u = q / 1000.0
    if not (0.0 < u < q):
        raise DomainError("need 0 < u < q")
    p = q - u
    return expected_sum_closed(p, q, params) / hitting_prob_closed(p, q, params)


def path_identity_limit(q: float, params: OuParams) -> float:
    """u -> 0 limit of ``path_identity_ratio``: (2/eps) (q - D(q sqrt a) / sqrt a)."""
    s = math.sqrt(params.epsilon) / params.beta
    return 2.0 / params.epsilon * (q - dawson(q * s) / s)


def threshold_from_path_identity(
    params: OuParams, cost: CostModel, tol: Tolerances = DEFAULT_TOL
) -> float:
    """Root in q of path_identity_limit(q) = 2 gamma, found on [gamma eps, raw bound]."""
    _require_gamma(cost)
    target = 2.0 * cost.gamma
    lo = cost.gamma * params.epsilon
    hi = lo + params.beta / math.sqrt(params.epsilon)

    def f(q):
        return path_identity_limit(q, params) - target

    while f(hi) < 0:
        hi *= 2.0
    root, _ = bracketed_root(f, lo, hi, tol.residual_tol(target), tol.max_iter)
    return root
