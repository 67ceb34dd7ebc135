"""Optimal trade-trigger thresholds under linear costs and a position cap."""

from .analytic import (
    CostModel,
    Method,
    Regime,
    ThresholdEstimate,
    expected_sum_closed,
    hitting_prob_closed,
    kolmogorov_residual,
    path_identity_ratio,
    regime_classify,
    threshold_continuum,
    threshold_limits,
)
from .backtest import (
    BacktestReport,
    FirstPassageStats,
    SearchConfig,
    compare_strategies,
    first_passage_mc,
    grid_search,
    run_band_strategy,
    run_threshold_strategy,
)
from .bellman import (
    BellmanSolution,
    GridFunction,
    GridSpec,
    SelfConsistentSolution,
    extract_threshold,
    finite_horizon_solve,
    policy,
    stationary_g_solve,
)
from .errors import (
    BracketError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    ReliabilityError,
    ResolutionError,
    ThresholdError,
)
from .sde import (
    OuParams,
    PathSample,
    integrated_predictability,
    simulate_path,
    stationary_std,
    step,
    transition,
)
from .special import Tolerances, big_f, big_f_inv, dawson, h_func

__version__ = "0.1.0"
