import numpy as np
import pytest

from capthreshold import analytic, backtest, sde
from capthreshold.analytic import CostModel
from capthreshold.backtest import Ensemble, SearchConfig
from capthreshold.errors import DomainError, ReliabilityError
from capthreshold.sde import OuParams


def test_threshold_hand_example():
    p = np.array([0.5, 0.2, -0.6, 0.1])
    r = backtest.run_threshold_strategy(p, 0.4, CostModel(0.1))
    # +1 at t=0, flip to -1 at t=2
    assert r.gross_gain == pytest.approx(0.5 + 0.2 + 0.6 - 0.1)
    assert r.cost_paid == pytest.approx(0.3)
    assert r.n_trades == 2
    assert r.net == pytest.approx(0.9)
    assert r.steps == 4


def test_threshold_respects_max_pos():
    p = np.array([1.0, -1.0])
    r = backtest.run_threshold_strategy(p, 0.5, CostModel(1.0, max_pos=2.0))
    assert r.gross_gain == pytest.approx(4.0)
    assert r.cost_paid == pytest.approx(6.0)


def test_band_hand_example():
    # lam = 0.5 makes the target equal to p; band half-width q / (2 lam) = q
    p = np.array([1.0, 1.2, 0.0])
    r = backtest.run_band_strategy(p, 0.5, 0.5, 0.1)
    # bands [0.5, 1.5], [0.7, 1.7], [-0.5, 0.5]; trade to the nearest edge
    pos = [0.5, 0.7, 0.5]
    assert r.gross_gain == pytest.approx(sum(x * y for x, y in zip(p, pos)))
    assert r.risk_penalty == pytest.approx(0.5 * (0.25 + 0.49 + 0.25))
    assert r.cost_paid == pytest.approx(0.1 * (0.5 + 0.2 + 0.2))
    assert r.n_trades == 3


def test_band_zero_width_tracks_target():
    p = sde.simulate_path(OuParams(0.1, 0.2), 500, 1).values
    r = backtest.run_band_strategy(p, 0.0, 2.0, 0.0)
    target = p / 4.0
    assert r.gross_gain == pytest.approx(np.sum(p * target))
    assert r.risk_penalty == pytest.approx(np.sum(2.0 * target ** 2))


def test_strategy_validation():
    with pytest.raises(DomainError):
        backtest.run_threshold_strategy(np.zeros(3), -1.0, CostModel(1.0))
    with pytest.raises(DomainError):
        backtest.run_band_strategy(np.zeros(3), 0.1, 0.0, 1.0)


def test_accounting_identity_and_cost_monotonicity():
    pr, c = OuParams(0.01, 0.003), CostModel(1.0)
    path = sde.simulate_path(pr, 100_000, 8)
    costs, trades = [], []
    for q in np.linspace(0.0, 0.06, 13):
        r = backtest.run_threshold_strategy(path, q, c)
        assert r.net == r.gross_gain - r.cost_paid - r.risk_penalty
        costs.append(r.cost_paid)
        trades.append(r.n_trades)
    assert np.all(np.diff(costs) <= 0)
    assert np.all(np.diff(trades) <= 0)


def test_compensated_sum_accuracy():
    p = np.full(1_000_001, 0.1)
    r = backtest.run_threshold_strategy(p, 0.05, CostModel(1.0))
    assert r.gross_gain == 0.1 * 1_000_001


def test_search_config_validation():
    for kw in ({"n_candidates": 2}, {"rounds": 0}, {"shrink": 1.0}, {"initial_range": (2.0, 1.0)}):
        with pytest.raises(DomainError):
            SearchConfig(**kw)


def test_ensemble_paths_are_independent_of_count():
    pr = OuParams(0.1, 0.1)
    a = Ensemble(pr, 100, 3, seed=4)
    b = Ensemble(pr, 100, 7, seed=4)
    assert np.array_equal(a.path(2), b.path(2))
    assert not np.array_equal(a.path(0), a.path(1))


def test_grid_search_crn_determinism():
    pr, c = OuParams(0.05, 0.01), CostModel(1.0)
    r1 = backtest.grid_search(pr, c, n_steps=50_000, n_paths=2, seed=3)
    r2 = backtest.grid_search(pr, c, n_steps=50_000, n_paths=2, seed=3)
    assert r1[0].q_star == r2[0].q_star
    assert r1[1] == r2[1]
    assert r1[0].method.value == "grid-search"
    assert len(r1[1]) == 21


def test_grid_search_white_noise():
    pr, c = OuParams(1.0, 0.5), CostModel(0.1)
    est, _ = backtest.grid_search(pr, c, n_steps=1_000_000, seed=2)
    assert est.q_star == pytest.approx(0.1, rel=0.1)
    assert est.diagnostics["boundary_warning"] == 0.0
    assert est.diagnostics["noisy"] == 0.0


def test_grid_search_boundary_warning_and_noise_flag():
    pr, c = OuParams(0.01, 1e-3), CostModel(1.0)
    est, _ = backtest.grid_search(pr, c, SearchConfig(rounds=1, initial_range=(0.5, 0.9)),
                                  n_steps=20_000, seed=1)
    assert est.diagnostics["boundary_warning"] == 1.0
    assert est.diagnostics["noisy"] == 1.0


def test_compare_strategies_rows():
    pr, c = OuParams(0.01, 1e-3), CostModel(1.0)
    rows = backtest.compare_strategies(pr, c, [0.05], n_steps=20_000, n_paths=4, seed=1, q_star=0.014)
    assert [r.label for r in rows] == ["naive", "optimal", "q=0.05"]
    assert rows[0].q == pytest.approx(0.01)
    assert len(rows[1].nets) == 4
    with pytest.raises(DomainError):
        backtest.compare_strategies(pr, c, [], 100, 2, include_defaults=False)


def test_first_passage_symmetry_and_identity():
    pr = OuParams(1e-3, 1e-4)
    st = backtest.first_passage_mc(pr, 0.002, 0.0, 8000, seed=3)
    assert abs(st.est_P - 0.5) < 3 * st.se_P
    assert abs(st.est_L) < 3 * st.se_L
    assert st.censored == 0
    a = backtest.first_passage_mc(pr, 0.002, 0.0, 8000, seed=3)
    assert a.est_L == st.est_L


def test_first_passage_against_closed_form():
    # deep continuum: q / beta = 60 keeps the overshoot bias small
    pr = OuParams(1e-4, 8e-6)
    q = 60 * 8e-6
    start = 0.5 * q
    st = backtest.first_passage_mc(pr, q, start, 20_000, seed=9)
    P = analytic.hitting_prob_closed(start, q, pr)
    L = analytic.expected_sum_closed(start, q, pr)
    assert abs(st.est_P - P) < 4 * st.se_P + 0.01
    assert abs(st.est_L - L) < 4 * st.se_L + 0.02 * abs(L)


def test_first_passage_censoring():
    pr = OuParams(1e-3, 1e-4)
    with pytest.raises(ReliabilityError) as info:
        backtest.first_passage_mc(pr, 0.01, 0.0, 200, seed=1, max_steps=10)
    assert info.value.censored_fraction == 1.0
    with pytest.raises(DomainError):
        backtest.first_passage_mc(pr, 0.01, 0.02, 200)
