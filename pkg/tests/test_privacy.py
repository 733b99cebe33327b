import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sgm_rdp_quadrature
from privset import privacy as P


def test_full_sampling_is_plain_gaussian():
    for sigma in (0.5, 1.0, 3.0):
        np.testing.assert_allclose(P.sgm_rdp(1.0, sigma, [2, 5, 32]),
                                   np.array([2, 5, 32]) / (2 * sigma**2), atol=1e-12)


def test_zero_sampling_costs_nothing():
    assert np.all(P.sgm_rdp(0.0, 1.0, P.DEFAULT_ORDERS) == 0)


def test_zero_noise_is_unbounded():
    with pytest.raises(P.UnboundedPrivacyLoss):
        P.sgm_rdp(0.01, 0.0, 2)


def test_fractional_orders_rejected():
    with pytest.raises(ValueError):
        P.sgm_rdp(0.1, 1.0, 2.5)
    with pytest.raises(ValueError):
        P.sgm_rdp(0.1, 1.0, 1)


@pytest.mark.parametrize("q,sigma,alpha", [(0.02, 1.5, 3), (0.1, 0.8, 7), (0.003, 3.0, 40)])
def test_matches_quadrature_oracle(q, sigma, alpha):
    oracle = sgm_rdp_quadrature(q, sigma, alpha)
    assert abs(P.sgm_rdp(q, sigma, alpha) - oracle) <= 1e-6 * oracle


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 0.5), st.floats(0.3, 10), st.integers(2, 64))
def test_rdp_monotone_in_q_and_sigma(q, sigma, alpha):
    base = P.sgm_rdp(q, sigma, alpha)
    assert base >= 0
    assert P.sgm_rdp(min(1.0, 2 * q), sigma, alpha) >= base
    assert P.sgm_rdp(q, sigma * 1.5, alpha) <= base


def test_composition_is_additive():
    s = P.accumulate(P.AccountantState(), 0.01, 1.1, 30)
    s = P.accumulate(s, 0.01, 1.1, 70)
    t = P.accumulate(P.AccountantState(), 0.01, 1.1, 100)
    np.testing.assert_allclose(s.rdp, t.rdp, rtol=1e-12)
    assert s.steps == t.steps == 100


def test_conversion_of_zero_curve():
    state = P.AccountantState(tuple(range(2, 65)))
    eps, order = P.rdp_to_dp(state, 1e-5)
    assert eps == pytest.approx(math.log(1e5) / 63, abs=1e-12)
    assert order == 64


def test_epsilon_grows_with_steps():
    e1 = P.compute_epsilon(0.01, 1.0, 100, 1e-5)
    e2 = P.compute_epsilon(0.01, 1.0, 1000, 1e-5)
    assert e2 > e1 > 0


@pytest.mark.parametrize("target", [0.5, 4.0])
def test_calibration_meets_target_from_below(target):
    sigma = P.calibrate_noise(target, 1e-5, 0.02, 500)
    eps = P.compute_epsilon(0.02, sigma, 500, 1e-5)
    assert eps <= target
    assert target - eps <= P.CALIBRATION_TOL


def test_calibration_infeasible():
    with pytest.raises(P.InfeasibleBudget):
        P.calibrate_noise(1e-4, 1e-5, 1.0, 10**6)


def test_calibration_needs_steps():
    with pytest.raises(ValueError):
        P.calibrate_noise(1.0, 1e-5, 0.1, 0)


def test_classical_gaussian_sigma():
    assert P.classical_gaussian_sigma(1e-5, 1.0, 1.0) == pytest.approx(
        math.sqrt(2 * math.log(1.25e5)))


# clipping and noise


def test_clip_bounds_global_norm():
    rng = np.random.default_rng(0)
    g = [rng.standard_normal((3, 4)), rng.standard_normal(5)]
    clipped = P.clip_per_example(g, 0.1)
    assert P.global_norm(clipped) == pytest.approx(0.1)
    small = [x * 1e-3 for x in g]
    for a, b in zip(P.clip_per_example(small, 10.0), small):
        np.testing.assert_array_equal(a, b)


def test_zero_gradient_passes_through():
    g = [np.zeros(3)]
    assert P.global_norm(P.clip_per_example(g, 0.1)) == 0


def test_clipped_sum_matches_loop():
    rng = np.random.default_rng(1)
    stacked = [rng.standard_normal((6, 2, 3)), rng.standard_normal((6, 4))]
    expected = [np.zeros((2, 3)), np.zeros(4)]
    for i in range(6):
        c = P.clip_per_example([s[i] for s in stacked], 0.5)
        expected = [e + x for e, x in zip(expected, c)]
    for a, b in zip(P.clipped_sum(stacked, 0.5), expected):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_noise_scale():
    sigma, clip, batch = 2.0, 0.5, 4
    rng = np.random.default_rng(0)
    out = P.sanitize_mean([np.zeros((3, 200_000))], clip, sigma, batch, rng)[0]
    target = sigma * clip / batch
    se = target / math.sqrt(2 * out.size)
    assert abs(out.std() - target) < 4 * se
    assert abs(out.mean()) < 4 * target / math.sqrt(out.size)


def test_one_draw_per_coordinate():
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    P.sanitize_mean([np.ones((2, 3, 4)), np.ones((2, 7))], 1.0, 1.0, 2, rng_a)
    rng_b.standard_normal(12)
    rng_b.standard_normal(7)
    assert rng_a.random() == rng_b.random()


def test_empty_batch_is_pure_noise_and_counted():
    acct = P.Accountant(0.1, 1.0)
    out = P.sanitize_mean([np.zeros((0, 3))], 0.1, 1.0, 8, np.random.default_rng(0), acct)
    assert out[0].shape == (3,)
    assert np.any(out[0] != 0)
    assert acct.steps == 1


# accountant wrapper


def test_accountant_records_and_serializes(tmp_path):
    acct = P.Accountant(256 / 60000, 1.1, 1e-5)
    acct.record(1000)
    assert acct.steps == 1000
    path = tmp_path / "acct.json"
    P.save_accountant(acct, path)
    doc, eps, order = P.load_accountant_report(path)
    assert eps == pytest.approx(acct.epsilon()[0], rel=1e-12)
    assert order == acct.epsilon()[1]
    assert doc["steps"] == 1000


def test_non_private_accountant():
    acct = P.Accountant(0.5, 0.0)
    acct.record(3)
    assert acct.steps == 3
    assert math.isinf(acct.epsilon()[0])
    assert acct.to_dict()["private"] is False


def test_delta_warning():
    with pytest.warns(UserWarning):
        P.check_delta(1e-2, 1000)


def test_state_validation():
    with pytest.raises(ValueError):
        P.AccountantState((3, 2))
    with pytest.raises(ValueError):
        P.AccountantState((2, 3), [0.1])
