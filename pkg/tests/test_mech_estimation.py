import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from richsgd.mechanisms import MechanismInfeasible, hmcar, sample_mask, smar
from richsgd.mech_estimation import estimate_mechanism, estimate_p, estimate_q, perturb
from richsgd.rng import CounterRNG


def _smar_data(n=10_000, seed=0):
    X = np.random.default_rng(seed).standard_normal((n, 3))
    mech = smar(X, [0], [[0.0], [0.8], [-0.5]], [0.0, -0.3, 0.2], [0.0, 0.2, 0.15])
    return X, mech, sample_mask(mech, X, CounterRNG(seed))


def test_estimate_p_examples():
    M = np.array([[1, 0, 1], [1, 0, 0], [1, 0, 1], [1, 0, 0]])
    assert np.array_equal(estimate_p(M), [1.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        estimate_p(np.zeros((0, 2)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), min_size=1, max_size=30))
def test_estimate_p_exact_on_deterministic_masks(rows):
    M = np.array(rows)
    assert np.array_equal(estimate_p(M), M.sum(axis=0) / len(M))


def test_estimate_p_binomial_bound():
    n = 10_000
    M = sample_mask(hmcar([0.2]), np.zeros((n, 1)), CounterRNG(1))
    assert abs(estimate_p(M)[0] - 0.2) < 3 * np.sqrt(0.2 * 0.8 / n)


def test_normalization_after_fit_and_perturbation():
    X, _, M = _smar_data()
    est = estimate_q(M, X, [0])
    assert np.allclose(est.q_hat(X).mean(axis=0), 1.0, atol=1e-6)
    rng = np.random.default_rng(0)
    for dq in (0.05, 0.1, 0.15):
        pert = perturb(est, 0.0, dq, rng, X)
        assert np.allclose(pert.q_hat(X).mean(axis=0), 1.0, atol=1e-6)
        twice = perturb(pert, 0.0, dq, rng, X)
        assert np.allclose(twice.q_hat(X).mean(axis=0), 1.0, atol=1e-6)


def test_hmcar_slopes_are_small():
    X = np.random.default_rng(2).standard_normal((10_000, 3))
    M = sample_mask(hmcar([0.0, 0.2, 0.3]), X, CounterRNG(2))
    est = estimate_q(M, X, [0])
    assert np.abs(est.coef[1:, 1]).max() < 0.1


def test_smar_refit_recovers_intensity():
    X, mech, M = _smar_data()
    est = estimate_mechanism(M, X, [0])
    rms = np.sqrt(np.mean((est.lam_hat(X)[:, 1:] - mech.lam(X)[:, 1:]) ** 2))
    # p * sigmoid / norm is not itself logistic in V, so this error has a floor near 0.01
    print(f"lambda_hat RMS error: {rms:.4g}")
    assert rms < 0.05
    assert est.counts.tolist() == M.sum(axis=0).tolist()


def test_constant_v_gives_unit_intensity():
    X = np.ones((500, 2))
    M = sample_mask(hmcar([0.0, 0.3]), X, CounterRNG(0))
    est = estimate_q(M, X, [0])
    assert np.allclose(est.q_hat(X), 1.0, atol=1e-6)


def test_degenerate_columns_are_flagged():
    X = np.random.default_rng(0).standard_normal((50, 3))
    M = np.zeros((50, 3), np.uint8)
    M[:, 2] = 1
    M[::3, 1] = 1
    est = estimate_q(M, X, [0])
    assert est.degenerate.tolist() == [True, False, True]
    assert np.array_equal(est.q_hat(X)[:, [0, 2]], np.ones((50, 2)))


def test_intensity_covariates_must_be_observed():
    X = np.zeros((4, 2))
    M = np.array([[1, 0], [0, 1], [0, 0], [0, 0]])
    with pytest.raises(ValueError):
        estimate_q(M, X, [0])


def test_perturb_examples():
    X, _, M = _smar_data(2000)
    est = estimate_q(M, X, [0])
    same = perturb(est, 0.0, 0.0, np.random.default_rng(1), X)
    assert np.array_equal(same.lam_hat(X), est.lam_hat(X))
    moved = perturb(est, 0.05, 0.0, np.random.default_rng(1), X)
    gap = np.abs(moved.p_hat - est.p_hat)
    assert gap[0] == 0.0
    assert np.allclose(gap[1:], 0.05, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        perturb(est, -0.1, 0.0, np.random.default_rng(1))


def test_perturb_infeasible():
    X, _, M = _smar_data(2000)
    est = estimate_q(M, X, [0])
    with pytest.raises(MechanismInfeasible):
        perturb(est, 0.3, 0.0, np.random.default_rng(0), X)  # some p_hat goes negative


def test_logistic_truth_is_recovered():
    n = 100_000
    X = np.random.default_rng(5).standard_normal((n, 2))
    truth = 1 / (1 + np.exp(-(0.7 * X[:, 0] - 1.5)))
    M = np.zeros((n, 2), np.uint8)
    M[:, 1] = CounterRNG(5).uniform(1, np.arange(n), [1])[:, 0] < truth
    est = estimate_q(M, X, [0])
    assert np.allclose(est.coef[1], [-1.5, 0.7], atol=0.05)
    assert np.sqrt(np.mean((est.lam_hat(X)[:, 1] - truth) ** 2)) < 3e-3
