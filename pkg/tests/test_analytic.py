import math

import mpmath as mp
import numpy as np
import pytest

from capthreshold import analytic
from capthreshold.analytic import CostModel, Method, Regime
from capthreshold.errors import DomainError
from capthreshold.sde import OuParams

mp.mp.dps = 30


def oracle_q(eps, beta, gamma):
    """Continuum threshold from a high-precision root of x - D(x) = eta."""
    eta = mp.mpf(gamma) * mp.mpf(eps) ** 1.5 / beta
    F = lambda x: x - mp.sqrt(mp.pi) / 2 * mp.exp(-x * x) * mp.erfi(x)
    x = mp.findroot(lambda x: F(x) - eta, max(eta, mp.cbrt(1.5 * eta)))
    return float(beta / mp.sqrt(eps) * x)


@pytest.mark.parametrize("beta,ref", [
    (0.002, 0.0183753884170607),
    (1e-4, 0.0027022989892332),
    (3e-5, 0.00140998511848784),
    (1e-5, 0.00105017094362038),
])
def test_continuum_table(beta, ref):
    est = analytic.threshold_continuum(OuParams(1e-3, beta), CostModel(1.0))
    assert est.q_star == pytest.approx(ref, rel=1e-9)
    assert est.q_star == pytest.approx(oracle_q(1e-3, beta, 1.0), rel=1e-9)
    assert est.method is Method.ANALYTIC_CONTINUUM


def test_continuum_oracle_lattice():
    for eps in (1e-4, 1e-2, 0.2):
        for beta in (1e-6, 1e-4, 1e-2):
            for gamma in (0.3, 2.0):
                q = analytic.threshold_continuum(OuParams(eps, beta), CostModel(gamma)).q_star
                assert q == pytest.approx(min(oracle_q(eps, beta, gamma), gamma), rel=1e-9)


def test_worked_example_diagnostics():
    est = analytic.threshold_continuum(OuParams(1e-3, 1e-4), CostModel(1.0))
    assert est.eta == pytest.approx(0.316227766, rel=1e-9)
    assert est.diagnostics["q_over_beta"] == pytest.approx(27.02, abs=0.01)
    assert est.regime is Regime.CONTINUUM
    assert est.as_dict()["method"] == "analytic-continuum"


def test_white_noise_clip():
    est = analytic.threshold_continuum(OuParams(1.0, 1.0), CostModel(0.2))
    assert est.q_star == 0.2
    assert est.diagnostics["clipped"] == 1.0
    assert est.diagnostics["unclipped"] > 0.2


def test_naive_limit():
    e, g = 1e-3, 1.0
    pr = OuParams(e, g * e ** 1.5 / 30.0)
    q = analytic.threshold_continuum(pr, CostModel(g)).q_star
    assert abs(q / (g * e) - 1) < 0.1


def test_brownian_limit():
    e, g = 1e-3, 1.0
    pr = OuParams(e, g * e ** 1.5 / 0.01)
    q = analytic.threshold_continuum(pr, CostModel(g)).q_star
    lim = analytic.threshold_limits(pr, CostModel(g))
    assert abs(q / lim["brownian"] - 1) < 0.1
    assert lim["brownian"] == pytest.approx((1.5 * g * pr.beta ** 2) ** (1 / 3))


def test_limits_dictionary():
    pr, c = OuParams(1e-3, 50.0), CostModel(1.0)
    lim = analytic.threshold_limits(pr, c)
    assert lim["naive"] == pytest.approx(1e-3)
    assert lim["discrete"] == 1.0
    assert lim["discrete_corrected"] == pytest.approx(1 - 0.999 * math.sqrt(2 / math.pi) / 50)
    d = lim["diagnostics"]
    assert d["kappa"] == pytest.approx(1.5 ** (1 / 3))
    assert d["brownian_over_beta"] == pytest.approx(d["kappa_cbrt_gamma_over_beta"])
    assert d["x_star"] == pytest.approx((2 - 1e-3) / 50)


def test_regime_classification():
    c = CostModel(1.0)
    assert analytic.regime_classify(OuParams(1e-3, 1e-5), c) is Regime.CONTINUUM
    assert analytic.regime_classify(OuParams(1e-3, 20.0), c) is Regime.DISCRETE
    assert analytic.regime_classify(OuParams(1e-2, 1e-3), c) is Regime.CROSSOVER
    # cuts are configurable
    assert analytic.regime_classify(OuParams(1e-3, 1e-4), c, cuts=(30.0, 10.0)) is Regime.CROSSOVER


def test_monotone_lattice():
    betas = np.logspace(-7, 1, 20)
    gammas = np.logspace(-2, 1, 20)
    Q = np.array([[analytic.threshold_continuum(OuParams(1e-3, b), CostModel(g)).q_star
                   for g in gammas] for b in betas])
    assert np.all(np.diff(Q, axis=0) >= 0)
    assert np.all(np.diff(Q, axis=1) >= 0)
    G = np.broadcast_to(gammas, Q.shape)
    assert np.all(Q >= 1e-3 * G * (1 - 1e-12))
    assert np.all(Q <= G)


def test_gamma_zero_rejected():
    assert CostModel(0.0).gamma == 0.0
    with pytest.raises(DomainError):
        analytic.threshold_continuum(OuParams(0.1, 0.1), CostModel(0.0))
    with pytest.raises(DomainError):
        CostModel(-1.0)
    with pytest.raises(DomainError):
        CostModel(1.0, max_pos=0.0)


# exit functions -------------------------------------------------------------


def oracle_exit(p, q, eps, beta):
    a = mp.mpf(eps) / beta ** 2
    den = mp.quad(lambda v: mp.exp(a * (v * v - q * q)), [0, q])
    r = mp.quad(lambda v: mp.exp(a * (v * v - q * q)), [0, p]) / den
    return float((p - q * r) / eps), float((1 - r) / 2)


def test_exit_functions_against_quadrature():
    pr, q = OuParams(1e-2, 2e-3), 0.01
    for p in (-0.0099, -0.004, 0.0, 0.003, 0.0095):
        L, P = oracle_exit(p, q, pr.epsilon, pr.beta)
        assert analytic.expected_sum_closed(p, q, pr) == pytest.approx(L, rel=1e-10, abs=1e-14)
        assert analytic.hitting_prob_closed(p, q, pr) == pytest.approx(P, rel=1e-10, abs=1e-14)


def test_exit_boundary_values_and_symmetry():
    pr, q = OuParams(1e-3, 1e-4), 0.003
    assert analytic.hitting_prob_closed(-q, q, pr) == pytest.approx(1.0)
    assert analytic.hitting_prob_closed(q, q, pr) == pytest.approx(0.0, abs=1e-15)
    assert analytic.hitting_prob_closed(0.0, q, pr) == pytest.approx(0.5)
    assert analytic.expected_sum_closed(q, q, pr) == pytest.approx(0.0, abs=1e-12)
    p = np.linspace(-q, q, 101)
    L = analytic.expected_sum_closed(p, q, pr)
    P = analytic.hitting_prob_closed(p, q, pr)
    assert np.allclose(L, -L[::-1], atol=1e-12)
    assert np.allclose(P, 1 - P[::-1], atol=1e-12)
    assert np.all(np.diff(P) <= 0)


def test_exit_domain():
    pr = OuParams(1e-3, 1e-4)
    with pytest.raises(DomainError):
        analytic.hitting_prob_closed(0.2, 0.1, pr)
    with pytest.raises(DomainError):
        analytic.expected_sum_closed(0.0, 0.0, pr)


def test_kolmogorov_residual_and_rate():
    pr = OuParams(1e-3, 1e-4)
    r1 = analytic.kolmogorov_residual(0.01, pr, 10_000)
    r2 = analytic.kolmogorov_residual(0.01, pr, 20_000)
    assert max(r1) < 1e-5
    assert math.log2(r1[0] / r2[0]) == pytest.approx(2.0, abs=0.1)
    assert math.log2(r1[1] / r2[1]) == pytest.approx(2.0, abs=0.1)


def test_kolmogorov_residual_at_threshold():
    pr, c = OuParams(1e-3, 1e-4), CostModel(1.0)
    q = analytic.threshold_continuum(pr, c).q_star
    assert max(analytic.kolmogorov_residual(q, pr, 10_000)) < 1e-8


@pytest.mark.xfail(strict=True, reason="boundary layer at a q^2 = 250 needs a finer grid; see notes")
def test_kolmogorov_residual_wide_interval():
    pr = OuParams(1e-3, 1e-4)
    assert max(analytic.kolmogorov_residual(0.05, pr, 10_000)) < 1e-5


def test_path_identity():
    pr, c = OuParams(1e-3, 1e-4), CostModel(1.0)
    q = analytic.threshold_continuum(pr, c).q_star
    assert analytic.path_identity_limit(q, pr) == pytest.approx(2.0, rel=1e-9)
    assert analytic.path_identity_ratio(q, pr, u=q * 1e-6) == pytest.approx(2.0, rel=1e-4)
    assert analytic.threshold_from_path_identity(pr, c) == pytest.approx(q, rel=1e-9)
    with pytest.raises(DomainError):
        analytic.path_identity_ratio(q, pr, u=2 * q)


@pytest.mark.parametrize("eps,beta,gamma", [(1e-2, 1e-3, 1.0), (1e-4, 1e-6, 0.5), (0.1, 0.01, 3.0)])
def test_path_identity_root_matches_continuum(eps, beta, gamma):
    pr, c = OuParams(eps, beta), CostModel(gamma)
    raw = analytic.continuum_raw(pr, gamma)
    assert analytic.threshold_from_path_identity(pr, c) == pytest.approx(raw, rel=1e-8)


def test_path_identity_first_order_in_u():
    pr, c = OuParams(1e-3, 1e-4), CostModel(1.0)
    q = analytic.threshold_continuum(pr, c).q_star
    lim = analytic.path_identity_limit(q, pr)
    d1 = analytic.path_identity_ratio(q, pr) - lim
    d2 = analytic.path_identity_ratio(q, pr, u=q / 2000) - lim
    assert d2 / d1 == pytest.approx(0.5, abs=0.01)


def test_exit_functions_no_overflow_for_wide_intervals():
    # a q^2 = 2.5e5 would overflow a direct exp(a v^2) evaluation
    pr = OuParams(1e-3, 1e-4)
    q = 0.5
    p = np.array([-0.49, 0.0, 0.3, 0.4999])
    P = analytic.hitting_prob_closed(p, q, pr)
    L = analytic.expected_sum_closed(p, q, pr)
    assert np.all(np.isfinite(P)) and np.all(np.isfinite(L))
    assert P[1] == pytest.approx(0.5)
    assert L[2] == pytest.approx(0.3 / 1e-3, rel=1e-9)
