"""Strategy execution on simulated predictor paths, the iterative threshold
grid search, and Monte-Carlo first-passage estimators.

P&L uses expected returns: at step t the gain is p_t * pi_t, since
E[r_t | p_t] = p_t. Sums are Neumaier-compensated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .analytic import (
    CostModel,
    Method,
    ThresholdEstimate,
    continuum_raw,
    eta_of,
    regime_classify,
)
from .errors import DomainError, ReliabilityError
from .sde import OuParams, PathSample, derive_seed, simulate_path

NOISY_TRADES = 100
PASSAGE_BATCH = 4096
PASSAGE_BLOCK = 512
CENSOR_LIMIT = 0.01


@dataclass
class BacktestReport:
    gross_gain: float
    cost_paid: float
    risk_penalty: float
    net: float
    n_trades: int
    steps: int

    @classmethod
    def from_totals(cls, gross, cost, penalty, n_trades, steps):
        return cls(gross, cost, penalty, gross - cost - penalty, int(n_trades), int(steps))


@dataclass(frozen=True)
class SearchConfig:
    n_candidates: int = 21
    rounds: int = 6
    shrink: float = 0.4
    initial_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_candidates < 3:
            raise DomainError("n_candidates must be >= 3")
        if self.rounds < 1:
            raise DomainError("rounds must be >= 1")
        if not 0.0 < self.shrink < 1.0:
            raise DomainError("shrink must lie in (0, 1)")
        if self.initial_range is not None:
            lo, hi = self.initial_range
            if not 0.0 <= lo < hi:
                raise DomainError("initial_range must satisfy 0 <= low < high")


@dataclass
class FirstPassageStats:
    est_L: float
    se_L: float
    est_P: float
    se_P: float
    n_paths: int
    mean_exit_time: float
    censored: int = 0
    ratio: float = float("nan")
    se_ratio: float = float("nan")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _threshold_kernel(p, q, M, gamma):
    pos = 0.0
    gross = 0.0
    gross_c = 0.0
    vol = 0.0
    vol_c = 0.0
    trades = 0
    for t in range(p.shape[0]):
        x = p[t]
        if x >= q:
            new = M
        elif x <= -q:
            new = -M
        else:
            new = pos
        d = abs(new - pos)
        if d != 0.0:
            trades += 1
            s = vol + d
            if abs(vol) >= d:
                vol_c += (vol - s) + d
            else:
                vol_c += (d - s) + vol
            vol = s
        pos = new
        g = x * pos
        s = gross + g
        if abs(gross) >= abs(g):
            gross_c += (gross - s) + g
        else:
            gross_c += (g - s) + gross
        gross = s
    return gross + gross_c, gamma * (vol + vol_c), trades


@njit(cache=True)
def _band_kernel(p, half_band, lam, gamma):
    pos = 0.0
    acc = np.zeros(3)  # gross, penalty, volume
    comp = np.zeros(3)
    trades = 0
    inv = 1.0 / (2.0 * lam)
    w = half_band * inv
    for t in range(p.shape[0]):
        x = p[t]
        target = x * inv
        lo = target - w
        hi = target + w
        if pos < lo:
            new = lo
        elif pos > hi:
            new = hi
        else:
            new = pos
        d = abs(new - pos)
        if d != 0.0:
            trades += 1
        pos = new
        terms = (x * pos, lam * pos * pos, d)
        for k in range(3):
            v = terms[k]
            s = acc[k] + v
            if abs(acc[k]) >= abs(v):
                comp[k] += (acc[k] - s) + v
            else:
                comp[k] += (v - s) + acc[k]
            acc[k] = s
    return acc[0] + comp[0], acc[1] + comp[1], gamma * (acc[2] + comp[2]), trades


@njit(cache=True)
def _passage_block(state, total, total_c, steps, low, done, noise, q, a, b, max_steps):
    n, width = noise.shape
    for i in range(n):
        if done[i] != 0:
            continue
        x = state[i]
        for k in range(width):
            if steps[i] >= max_steps:
                done[i] = 2
                break
            # the sum runs over p_0 .. p_{n-1}: add before stepping
            s = total[i] + x
            if abs(total[i]) >= abs(x):
                total_c[i] += (total[i] - s) + x
            else:
                total_c[i] += (x - s) + total[i]
            total[i] = s
            x = a * x + b * noise[i, k]
            steps[i] += 1
            if x >= q:
                done[i] = 1
                break
            if x <= -q:
                done[i] = 1
                low[i] = 1
                break
        state[i] = x


# ---------------------------------------------------------------------------
# single-path strategies
# ---------------------------------------------------------------------------


def _values(path) -> np.ndarray:
    v = path.values if isinstance(path, PathSample) else path
    return np.ascontiguousarray(v, dtype=float)


def run_threshold_strategy(path, q: float, cost: CostModel) -> BacktestReport:
    """Hold +/-M, flipping when the predictor crosses +/-q; starts flat."""
    if q < 0:
        raise DomainError("q must be >= 0")
    p = _values(path)
    gross, paid, trades = _threshold_kernel(p, float(q), float(cost.max_pos), float(cost.gamma))
    return BacktestReport.from_totals(gross, paid, 0.0, trades, len(p))


def run_band_strategy(path, half_band: float, lam: float, gamma: float) -> BacktestReport:
    """Quadratic-penalty band: hold while the position lies within
    [p/(2 lam) - q/(2 lam), p/(2 lam) + q/(2 lam)], else trade to the nearest
    edge. Utility per step is p pi - lam pi^2 - gamma |d pi|."""
    if half_band < 0 or lam <= 0 or gamma < 0:
        raise DomainError("need half_band >= 0, lam > 0, gamma >= 0")
    p = _values(path)
    gross, penalty, paid, trades = _band_kernel(p, float(half_band), float(lam), float(gamma))
    return BacktestReport.from_totals(gross, paid, penalty, trades, len(p))


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


class Ensemble:
    """A reproducible set of predictor paths; path i uses seed (seed, i).

    Paths are cached while the total size stays below ``cache_limit`` values
    and regenerated on demand otherwise.
    """

    def __init__(self, params: OuParams, n_steps: int, n_paths: int, seed: int,
                 start="stationary", burn_in: int = 0, cache_limit: int = 40_000_000):
        if n_paths < 1:
            raise DomainError("n_paths must be >= 1")
        self.params, self.n_steps, self.n_paths = params, int(n_steps), int(n_paths)
        self.seed, self.start, self.burn_in = int(seed), start, int(burn_in)
        self._cache = {} if n_steps * n_paths <= cache_limit else None

    def path(self, i: int) -> np.ndarray:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        v = simulate_path(self.params, self.n_steps, derive_seed(self.seed, i),
                          self.start, self.burn_in).values
        if self._cache is not None:
            self._cache[i] = v
        return v

    def __iter__(self):
        for i in range(self.n_paths):
            yield self.path(i)


def _evaluate(ensemble: Ensemble, candidates, runner) -> np.ndarray:
    """net[i_path, j_candidate]."""
    net = np.empty((ensemble.n_paths, len(candidates)))
    trades = np.zeros(len(candidates), dtype=np.int64)
    for i, p in enumerate(ensemble):
        for j, c in enumerate(candidates):
            r = runner(p, c)
            net[i, j] = r.net
            trades[j] += r.n_trades
    return net, trades


def _runner(mode: str, cost: CostModel, lam: float):
    if mode == "threshold":
        return lambda p, q: run_threshold_strategy(p, q, cost)
    if mode == "band":
        return lambda p, q: run_band_strategy(p, q, lam, cost.gamma)
    raise DomainError(f"unknown mode {mode!r}")


def default_range(params: OuParams, cost: CostModel) -> tuple[float, float]:
    guess = min(continuum_raw(params, cost.gamma), cost.gamma)
    return 0.2 * guess, 2.5 * guess


def grid_search(
    params: OuParams,
    cost: CostModel,
    search: SearchConfig = SearchConfig(),
    n_steps: int = 1_000_000,
    n_paths: int = 1,
    seed: int = 0,
    mode: str = "threshold",
    lam: float = 1.0,
    ensemble: Ensemble | None = None,
) -> tuple[ThresholdEstimate, list[tuple[float, float]]]:
    """Iterated grid search of the threshold (or half-band) maximising the
    mean net P&L on a common path ensemble.

    Each round evaluates ``n_candidates`` evenly spaced values, re-centres on
    the best one and shrinks the half-width by ``shrink``. A best candidate on
    the edge of a non-final round only re-centres. Returns the estimate and
    the (candidate, mean net) curve of the final round.
    """
    if cost.gamma <= 0:
        raise DomainError("grid search needs gamma > 0")
    ens = ensemble or Ensemble(params, n_steps, n_paths, seed)
    run = _runner(mode, cost, lam)
    lo, hi = search.initial_range or default_range(params, cost)
    n = search.n_candidates
    curve: list[tuple[float, float]] = []
    best = lo
    at_edge = False
    trades_at_best = 0
    se_at_best = 0.0
    for r in range(search.rounds):
        cands = np.linspace(lo, hi, n)
        net, trades = _evaluate(ens, cands, run)
        mean = net.mean(axis=0)
        j = int(np.argmax(mean))
        best = float(cands[j])
        trades_at_best = int(trades[j])
        se_at_best = float(net[:, j].std(ddof=1) / math.sqrt(ens.n_paths)) if ens.n_paths > 1 else float("nan")
        curve = list(zip(cands.tolist(), mean.tolist()))
        half = 0.5 * (hi - lo)
        at_edge = j in (0, n - 1) and not (j == 0 and lo == 0.0)
        if not at_edge:
            half *= search.shrink
        lo, hi = max(best - half, 0.0), best + half
    diagnostics = {
        "boundary_warning": float(at_edge),
        "n_trades_at_optimum": float(trades_at_best),
        "noisy": float(trades_at_best < NOISY_TRADES),
        "se_net_at_optimum": se_at_best,
        "n_steps": float(ens.n_steps),
        "n_paths": float(ens.n_paths),
        "seed": float(ens.seed),
    }
    est = ThresholdEstimate(
        q_star=best,
        method=Method.GRID_SEARCH,
        regime=regime_classify(params, cost),
        eta=eta_of(params, cost),
        diagnostics=diagnostics,
    )
    return est, curve


@dataclass
class StrategyRow:
    label: str
    q: float
    gross_gain: float
    cost_paid: float
    net: float
    net_se: float
    n_trades: float
    nets: np.ndarray = field(repr=False, default=None)


def compare_strategies(
    params: OuParams,
    cost: CostModel,
    q_list,
    n_steps: int,
    n_paths: int,
    seed: int = 0,
    q_star: float | None = None,
    include_defaults: bool = True,
    ensemble: Ensemble | None = None,
) -> list[StrategyRow]:
    """Mean per-path results of several thresholds on one shared ensemble.

    Rows for the naive threshold gamma*eps and for q* (``q_star`` or the
    stationary self-consistent solution) are prepended unless
    ``include_defaults`` is False.
    """
    labelled = [(f"q={q:.6g}", float(q)) for q in q_list]
    if include_defaults:
        if q_star is None:
            from .bellman import stationary_g_solve

            q_star = stationary_g_solve(params, cost).q_star
        labelled = [("naive", cost.gamma * params.epsilon), ("optimal", float(q_star))] + labelled
    if not labelled:
        raise DomainError("q_list must not be empty")
    ens = ensemble or Ensemble(params, n_steps, n_paths, seed)
    rows = {lab: [] for lab, _ in labelled}
    for p in ens:
        for lab, q in labelled:
            rows[lab].append(run_threshold_strategy(p, q, cost))
    out = []
    for lab, q in labelled:
        reps = rows[lab]
        nets = np.array([r.net for r in reps])
        out.append(StrategyRow(
            label=lab,
            q=q,
            gross_gain=float(np.mean([r.gross_gain for r in reps])),
            cost_paid=float(np.mean([r.cost_paid for r in reps])),
            net=float(nets.mean()),
            net_se=float(nets.std(ddof=1) / math.sqrt(len(nets))) if len(nets) > 1 else float("nan"),
            n_trades=float(np.mean([r.n_trades for r in reps])),
            nets=nets,
        ))
    return out


# ---------------------------------------------------------------------------
# first passage
# ---------------------------------------------------------------------------


def first_passage_mc(
    params: OuParams,
    q: float,
    start: float,
    n_paths: int,
    seed: int = 0,
    max_steps: int | None = None,
) -> FirstPassageStats:
    """Monte-Carlo L(start) and P(start) for exits from (-q, q).

    Paths come in batches of PASSAGE_BATCH; the noise for block k of a batch
    is drawn from stream (seed, batch, k), one row per still-running path, so
    batches can be evaluated in any order.
    """
    if not abs(start) < q:
        raise DomainError("need |start| < q")
    if n_paths < 2:
        raise DomainError("n_paths must be >= 2")
    if max_steps is None:
        max_steps = 100 * math.ceil(1.0 / params.epsilon)
    a = 1.0 - params.epsilon
    b = params.beta
    S = np.empty(n_paths)
    low = np.empty(n_paths, dtype=np.int8)
    T = np.empty(n_paths, dtype=np.int64)
    status = np.empty(n_paths, dtype=np.int8)
    for batch, first in enumerate(range(0, n_paths, PASSAGE_BATCH)):
        m = min(PASSAGE_BATCH, n_paths - first)
        state = np.full(m, float(start))
        tot = np.zeros(m)
        tot_c = np.zeros(m)
        steps = np.zeros(m, dtype=np.int64)
        lo = np.zeros(m, dtype=np.int8)
        done = np.zeros(m, dtype=np.int8)
        block = 0
        while True:
            idx = np.flatnonzero(done == 0)
            if len(idx) == 0:
                break
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(int(seed), spawn_key=(batch, block))))
            # rows are drawn for still-running paths only, in index order
            z = rng.standard_normal((len(idx), PASSAGE_BLOCK))
            sub = [arr[idx] for arr in (state, tot, tot_c, steps, lo, done)]
            _passage_block(*sub, z, q, a, b, max_steps)
            for arr, new in zip((state, tot, tot_c, steps, lo, done), sub):
                arr[idx] = new
            block += 1
        sl = slice(first, first + m)
        S[sl], low[sl], T[sl], status[sl] = tot + tot_c, lo, steps, done
    ok = status == 1
    censored = int(np.count_nonzero(~ok))
    if censored > CENSOR_LIMIT * n_paths:
        raise ReliabilityError(
            f"{censored} of {n_paths} paths did not exit within {max_steps} steps",
            censored / n_paths,
        )
    S, I = S[ok], low[ok].astype(float)
    k = len(S)
    est_L, est_P = float(S.mean()), float(I.mean())
    se_L = float(S.std(ddof=1) / math.sqrt(k))
    se_P = float(I.std(ddof=1) / math.sqrt(k))
    ratio = se_ratio = float("nan")
    if est_P > 0:
        ratio = est_L / est_P
        # delta method for a ratio of means
        se_ratio = float((S - ratio * I).std(ddof=1) / (math.sqrt(k) * est_P))
    return FirstPassageStats(
        est_L=est_L, se_L=se_L, est_P=est_P, se_P=se_P, n_paths=k,
        mean_exit_time=float(T[ok].mean()), censored=censored,
        ratio=ratio, se_ratio=se_ratio,
    )
