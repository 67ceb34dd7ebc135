"""Built-in invariant suite behind ``capthreshold verify``.

Each check returns (observed, expected, passed). Tolerances live in
``TOLERANCES`` so a fault can be injected by overriding one of them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analytic, backtest, bellman, sde, special
from .analytic import CostModel
from .sde import OuParams

TOLERANCES = {
    "dawson_switch": 1e-12,
    "dawson_odd": 0.0,
    "roundtrip": 10.0,  # multiples of the residual tolerance
    "f_large": 0.01,
    "f_small": 0.02,
    "seam": 0.1,
    "kolmogorov": 1e-5,
    "kolmogorov_rate": 0.1,
    "path_identity": 1e-8,
    "white_noise": 0.005,
    "continuum": 0.05,
    "discrete": 0.10,
    "passage_sigma": 3.0,
    "grid_white_noise": 0.10,
}

FAULT_CHECK = "dawson_odd"


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: object
    expected: object
    seconds: float

    def as_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "observed": self.observed,
            "expected": self.expected,
            "seconds": round(self.seconds, 4),
        }


def _dawson_switch(tol):
    worst = 0.0
    for x in (special.SERIES_MAX, special.ASYMPTOTIC_MIN):
        xa = np.array([x])
        if x == special.SERIES_MAX:
            a, b = special._dawson_series(xa), special._dawson_rybicki(xa)
        else:
            a, b = special._dawson_rybicki(xa), special._dawson_asymptotic(xa)
        worst = max(worst, abs(float(a[0] - b[0])))
    return worst, f"< {tol}", worst < tol


def _dawson_odd(tol):
    x = np.linspace(0, 50, 2001)
    err = float(np.max(np.abs(special.dawson(-x) + special.dawson(x))))
    return err, f"<= {tol}", err <= tol


def _monotone(_):
    x = np.linspace(0, 20, 10_000)
    ok = bool(np.all(np.diff(special.big_f(x)) > 0))
    return ok, True, ok


def _asymptotics(_):
    big = np.linspace(10, 100, 200)
    small = np.linspace(1e-4, 0.1, 200)
    e1 = float(np.max(np.abs(special.big_f(big) / big - 1)))
    e2 = float(np.max(np.abs(special.big_f(small) / (2 * small ** 3 / 3) - 1)))
    ok = e1 < TOLERANCES["f_large"] and e2 < TOLERANCES["f_small"]
    return [e1, e2], [TOLERANCES["f_large"], TOLERANCES["f_small"]], ok


def _roundtrip(mult):
    tol = special.DEFAULT_TOL
    worst = 0.0
    for y in np.logspace(-6, 3, 60):
        worst = max(worst, abs(special.big_f(special.big_f_inv(y)) - y) / tol.residual_tol(y))
    return worst, f"< {mult} x tol", worst < mult


def _continuum_bounds(_):
    bad = 0
    for e in (1e-3, 1e-2, 0.3, 1.0):
        for b in np.logspace(-7, 2, 15):
            for g in (0.1, 1.0, 10.0):
                q = analytic.threshold_continuum(OuParams(e, b), CostModel(g)).q_star
                bad += not (g * e * (1 - 1e-12) <= q <= g)
    return bad, 0, bad == 0


def _continuum_monotone(_):
    betas = np.logspace(-6, 0, 20)
    gammas = np.logspace(-2, 1, 20)
    Q = np.array([[analytic.threshold_continuum(OuParams(1e-3, b), CostModel(g)).q_star
                   for g in gammas] for b in betas])
    ok = bool(np.all(np.diff(Q, axis=0) >= 0) and np.all(np.diff(Q, axis=1) >= 0))
    return ok, True, ok


def _seams(tol):
    e, g = 1e-3, 1.0
    naive = OuParams(e, g * e ** 1.5 / 30.0)
    brown = OuParams(e, g * e ** 1.5 / 0.01)
    r1 = analytic.threshold_continuum(naive, CostModel(g)).q_star / (g * e)
    r2 = analytic.threshold_continuum(brown, CostModel(g)).q_star / (1.5 * g * brown.beta ** 2) ** (1 / 3)
    return [r1, r2], f"|r - 1| < {tol}", abs(r1 - 1) < tol and abs(r2 - 1) < tol


def _kolmogorov(tol):
    pr = OuParams(1e-3, 1e-4)
    r1 = analytic.kolmogorov_residual(0.01, pr, 10_000)
    r2 = analytic.kolmogorov_residual(0.01, pr, 20_000)
    rate = math.log2(r1[0] / r2[0])
    ok = max(r1) < tol and abs(rate - 2.0) < TOLERANCES["kolmogorov_rate"]
    return {"residuals": list(r1), "rate": rate}, {"max": tol, "rate": 2.0}, ok


def _path_identity(tol):
    pr, c = OuParams(1e-3, 1e-4), CostModel(1.0)
    a = analytic.threshold_from_path_identity(pr, c)
    b = analytic.threshold_continuum(pr, c).q_star
    err = abs(a / b - 1)
    return err, f"< {tol}", err < tol


def _white_noise(tol):
    c = CostModel(0.2)
    q = bellman.stationary_g_solve(OuParams(1.0, 1.0), c).q_star
    pr = OuParams(1.0, 1.0)
    fh = bellman.finite_horizon_solve(pr, c, 20, bellman.GridSpec.for_params(pr), keep_grids=False)
    errs = [abs(q / 0.2 - 1), float(np.max(np.abs(fh.thresholds / 0.2 - 1)))]
    return errs, f"< {tol}", max(errs) < tol


def _continuum_fixed_point(tol):
    pr, c = OuParams(1e-3, 1e-5), CostModel(1.0)
    r = bellman.stationary_g_solve(pr, c).q_star / analytic.threshold_continuum(pr, c).q_star
    return r, f"|r - 1| < {tol}", abs(r - 1) < tol


def _discrete_fixed_point(tol):
    pr, c = OuParams(1e-3, 50.0), CostModel(1.0)
    ref = analytic.threshold_limits(pr, c)["discrete_corrected"]
    r = bellman.stationary_g_solve(pr, c).q_star / ref
    return r, f"|r - 1| < {tol}", abs(r - 1) < tol


def _bang_bang(_):
    pr, c = OuParams(0.05, 0.01), CostModel(1.0)
    sol = bellman.finite_horizon_solve(pr, c, 100, bellman.GridSpec.for_params(pr, 101), n_pos=11,
                                       keep_grids=False)
    return sol.bang_bang_violations, 0, sol.bang_bang_violations == 0


def _horizon_one(_):
    pr, c = OuParams(0.01, 0.002), CostModel(1.0)
    q = bellman.finite_horizon_solve(pr, c, 1, bellman.GridSpec.for_params(pr)).thresholds[0]
    return q, 0.01, abs(q - 0.01) < 1e-12


def _determinism(_):
    pr = OuParams(0.01, 0.1)
    a = sde.simulate_path(pr, 5000, 42).values
    b = sde.simulate_path(pr, 5000, 42).values
    xi = sde.noise(42, 0, 4999)
    neg = sde.propagate(-0.3, -xi, pr)
    pos = sde.propagate(0.3, xi, pr)
    ok = bool(np.array_equal(a, b) and np.array_equal(neg, -pos))
    return ok, True, ok


def _accounting(_):
    pr, c = OuParams(0.01, 0.003), CostModel(1.0)
    p = sde.simulate_path(pr, 50_000, 3)
    costs = []
    ok = True
    for q in np.linspace(0, 0.05, 11):
        r = backtest.run_threshold_strategy(p, q, c)
        ok &= r.net == r.gross_gain - r.cost_paid - r.risk_penalty
        costs.append(r.cost_paid)
    ok &= bool(np.all(np.diff(costs) <= 0))
    return ok, True, ok


def _passage_symmetry(k):
    pr = OuParams(1e-3, 1e-4)
    st = backtest.first_passage_mc(pr, 0.002, 0.0, 4000, seed=5)
    zp = abs(st.est_P - 0.5) / st.se_P
    zl = abs(st.est_L) / st.se_L
    return [zp, zl], f"< {k} sigma", zp < k and zl < k


def _grid_white_noise(tol):
    pr, c = OuParams(1.0, 0.5), CostModel(0.1)
    est, _ = backtest.grid_search(pr, c, backtest.SearchConfig(initial_range=(0.02, 0.3)),
                                  n_steps=1_000_000, seed=11)
    r = est.q_star / 0.1
    return r, f"|r - 1| < {tol}", abs(r - 1) < tol


CHECKS: list[tuple[str, str, Callable]] = [
    ("dawson_switch", "dawson_switch", _dawson_switch),
    ("dawson_odd", "dawson_odd", _dawson_odd),
    ("big_f_monotone", None, _monotone),
    ("big_f_asymptotics", None, _asymptotics),
    ("big_f_inv_roundtrip", "roundtrip", _roundtrip),
    ("continuum_bounds", None, _continuum_bounds),
    ("continuum_monotone", None, _continuum_monotone),
    ("regime_seams", "seam", _seams),
    ("kolmogorov_residual", "kolmogorov", _kolmogorov),
    ("path_identity_root", "path_identity", _path_identity),
    ("white_noise_threshold", "white_noise", _white_noise),
    ("continuum_fixed_point", "continuum", _continuum_fixed_point),
    ("discrete_fixed_point", "discrete", _discrete_fixed_point),
    ("bellman_bang_bang", None, _bang_bang),
    ("bellman_horizon_one", None, _horizon_one),
    ("path_determinism", None, _determinism),
    ("backtest_accounting", None, _accounting),
    ("passage_symmetry", "passage_sigma", _passage_symmetry),
    ("grid_search_white_noise", "grid_white_noise", _grid_white_noise),
]


def run_suite(fault: bool = False, only: list[str] | None = None) -> list[CheckResult]:
    """Run every check. With ``fault`` the oddness tolerance is set below
    zero, which must produce exactly one failure."""
    tols = dict(TOLERANCES)
    if fault:
        tols[FAULT_CHECK] = -1.0
    results = []
    for name, key, fn in CHECKS:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            observed, expected, passed = fn(tols[key] if key else None)
        except Exception as exc:  # report, keep going
            observed, expected, passed = f"{type(exc).__name__}: {exc}", "no exception", False
        results.append(CheckResult(name, bool(passed), _plain(observed), _plain(expected),
                                   time.perf_counter() - t0))
    return results


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v
