import math

import numpy as np
import pytest
from scipy import stats

from capthreshold import sde
from capthreshold.errors import DomainError, EmptyPathError
from capthreshold.sde import OuParams


def test_params_validation():
    OuParams(1.0, 1.0)
    for e, b in [(0.0, 1.0), (1.5, 1.0), (0.1, 0.0), (0.1, -1.0), (0.1, float("inf"))]:
        with pytest.raises(DomainError):
            OuParams(e, b)


def test_step_and_transition():
    pr = OuParams(0.1, 0.5)
    assert sde.step(2.0, 1.0, pr) == pytest.approx(2.0 - 0.2 + 0.5)
    assert sde.transition(2.0, pr) == (pytest.approx(1.8), 0.5)
    assert sde.prob_above(1.8, 2.0, pr) == pytest.approx(0.5)
    assert sde.prob_above(0.3, 0.0, pr) + sde.prob_below(0.3, 0.0, pr) == pytest.approx(1.0)


def test_stationary_std_exact_discrete():
    pr = OuParams(0.3, 2.0)
    assert sde.stationary_std(pr) == pytest.approx(2.0 / math.sqrt(0.6 - 0.09))
    # white noise: the chain forgets its state every step
    assert sde.stationary_std(OuParams(1.0, 0.7)) == pytest.approx(0.7)


def test_integrated_predictability():
    pr = OuParams(0.01, 1.0)
    assert sde.integrated_predictability(0.5, pr) == pytest.approx(50.0)
    # equals the sum of conditional means
    assert sum(0.5 * 0.99 ** n for n in range(20_000)) == pytest.approx(50.0, rel=1e-9)


def test_determinism_and_seed_sensitivity():
    pr = OuParams(0.01, 0.1)
    a = sde.simulate_path(pr, 3000, 5)
    b = sde.simulate_path(pr, 3000, 5)
    c = sde.simulate_path(pr, 3000, 6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert len(a) == 3000 and a.seed == 5


def test_noise_slices_are_consistent_across_chunks():
    full = sde.noise(9, 0, 3 * sde.CHUNK + 10)
    part = sde.noise(9, sde.CHUNK - 5, 20)
    assert np.array_equal(part, full[sde.CHUNK - 5: sde.CHUNK + 15])


def test_prefix_property():
    pr = OuParams(0.05, 1.0)
    short = sde.simulate_path(pr, 100, 3, start=0.0).values
    long = sde.simulate_path(pr, 1000, 3, start=0.0).values
    assert np.array_equal(short, long[:100])


def test_symmetry_under_noise_flip():
    pr = OuParams(0.02, 0.3)
    xi = sde.noise(1, 0, 999)
    assert np.array_equal(sde.propagate(-0.4, -xi, pr), -sde.propagate(0.4, xi, pr))


def test_propagate_matches_step_loop():
    pr = OuParams(0.07, 0.2)
    xi = sde.noise(2, 0, 200)
    ref = [0.3]
    for x in xi:
        ref.append(sde.step(ref[-1], x, pr))
    assert np.allclose(sde.propagate(0.3, xi, pr), ref, rtol=0, atol=1e-14)


def test_white_noise_is_gaussian_ks():
    pr = OuParams(1.0, 0.8)
    v = sde.simulate_path(pr, 20_000, 11).values
    assert stats.kstest(v / 0.8, "norm").pvalue > 1e-3


def test_stationary_start_draws():
    pr = OuParams(0.01, 0.1)
    starts = np.array([sde.simulate_path(pr, 1, s).values[0] for s in range(4000)])
    assert stats.kstest(starts / sde.stationary_std(pr), "norm").pvalue > 1e-3


def test_long_run_variance_and_autocorrelation():
    pr = OuParams(0.02, 0.1)
    v = sde.simulate_path(pr, 2_000_000, 21).values
    sigma = sde.stationary_std(pr)
    assert v.var() == pytest.approx(sigma ** 2, rel=0.05)
    for lag in (1, 10, 50):
        rho = np.corrcoef(v[:-lag], v[lag:])[0, 1]
        assert rho == pytest.approx(0.98 ** lag, abs=0.03)


def test_fixed_start_and_burn_in():
    pr = OuParams(0.1, 0.2)
    v = sde.simulate_path(pr, 10, 4, start=0.5).values
    assert v[0] == 0.5
    burned = sde.simulate_path(pr, 10, 4, start=0.0, burn_in=30).values
    ref = sde.simulate_path(pr, 40, 4, start=0.0).values[30:]
    assert np.array_equal(burned, ref)
    assert sde.burn_in_steps(OuParams(0.003, 1.0)) == 3334


def test_empty_and_bad_start():
    pr = OuParams(0.1, 0.2)
    with pytest.raises(EmptyPathError):
        sde.simulate_path(pr, 0, 1)
    with pytest.raises(DomainError):
        sde.simulate_path(pr, 10, 1, start="zero")


def test_derive_seed():
    assert sde.derive_seed(1, 2) == sde.derive_seed(1, 2)
    assert len({sde.derive_seed(1, i) for i in range(100)}) == 100
    assert sde.derive_seed(1, 2) != sde.derive_seed(2, 1)
