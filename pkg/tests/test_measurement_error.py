import numpy as np
import pytest

from distme.measurement_error import (
    MeasurementErrorBlock,
    conditional_latent_moments,
    covariance_from_upper,
    exchangeable_covariance,
    log_acceptance,
    me_sweep,
    update_mu_x,
    update_tau2_x,
    upper_index_pairs,
)


def random_block(rng, n=20, M=3, **kw):
    x = rng.normal(size=n)
    Sigma = exchangeable_covariance(np.where(np.arange(n) < n // 2, 1.0, 2.0), 0.8, M)
    reps = x[:, None] + np.einsum("ijk,ik->ij", np.linalg.cholesky(Sigma), rng.standard_normal((n, M)))
    return MeasurementErrorBlock(reps, Sigma, **kw)


def test_exchangeable_structure():
    S = exchangeable_covariance([1.0, 2.0], 0.8)
    np.testing.assert_allclose(S[1], 2 * np.array([[1, .8, .8], [.8, 1, .8], [.8, .8, 1]]))
    with pytest.raises(ValueError):
        exchangeable_covariance(1.0, -0.6, 3)
    with pytest.raises(ValueError):
        exchangeable_covariance(1.0, 1.0, 3)


def test_upper_triangle_round_trip(rng):
    A = rng.normal(size=(5, 4, 4))
    S = A @ np.swapaxes(A, 1, 2)
    upper = np.column_stack([S[:, j - 1, k - 1] for j, k in upper_index_pairs(4)])
    np.testing.assert_allclose(covariance_from_upper(upper, 4), S)
    assert upper_index_pairs(3) == [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]


def test_quadratic_form_pieces_match_direct(rng):
    blk = random_block(rng)
    x = rng.normal(size=blk.n)
    direct = [-0.5 * (blk.replicates[i] - x[i]) @ np.linalg.inv(blk.Sigma[i]) @ (blk.replicates[i] - x[i])
              for i in range(blk.n)]
    np.testing.assert_allclose(blk.me_loglik(x), direct, rtol=1e-10)


def test_proposal_variance():
    Sigma = exchangeable_covariance(np.array([1.0, 2.0]), 0.5, 3)
    blk = MeasurementErrorBlock(np.zeros((2, 3)), Sigma, f=1.5)
    np.testing.assert_allclose(blk.prop_var, 1.5 * np.array([3.0, 6.0]) / 9)


def test_non_positive_definite_sites_are_named():
    Sigma = np.stack([np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2)])
    with pytest.raises(ValueError, match=r"site\(s\) \[1\]"):
        MeasurementErrorBlock(np.zeros((3, 2)), Sigma)


def test_log_acceptance_is_sum_of_three_ratios(rng):
    blk = random_block(rng, n=5)
    blk.mu_x, blk.tau2_x = 0.3, 1.7
    xc, xp = rng.normal(size=5), rng.normal(size=5)
    d = rng.normal(size=5)
    prior = -0.5 * ((xp - 0.3) ** 2 - (xc - 0.3) ** 2) / 1.7
    me = blk.me_loglik(xp) - blk.me_loglik(xc)
    np.testing.assert_allclose(log_acceptance(blk, np.arange(5), xp, xc, d), d + prior + me)


def test_mu_x_update_moments():
    rng = np.random.default_rng(3)
    blk = random_block(rng, n=50, tau2_mu=4.0)
    blk.tau2_x = 2.0
    draws = np.array([update_mu_x(blk, rng) for _ in range(40000)])
    n, xbar = blk.n, blk.x.mean()
    var = 1 / (n / 2.0 + 1 / 4.0)
    assert draws.mean() == pytest.approx(var * n * xbar / 2.0, abs=4 * np.sqrt(var / 40000))
    assert draws.var() == pytest.approx(var, rel=0.03)


def test_tau2_x_update_moments():
    rng = np.random.default_rng(4)
    blk = random_block(rng, n=60, a_x=2.0, b_x=1.0)
    blk.mu_x = 0.1
    draws = np.array([update_tau2_x(blk, rng) for _ in range(40000)])
    shape = 2.0 + 30
    rate = 1.0 + 0.5 * np.sum((blk.x - 0.1) ** 2)
    assert draws.mean() == pytest.approx(rate / (shape - 1), rel=0.01)


def test_conditional_latent_moments_brute_force(rng):
    blk = random_block(rng, n=4)
    blk.mu_x, blk.tau2_x = -0.2, 0.8
    m, v = conditional_latent_moments(blk)
    for i in range(4):
        Si = np.linalg.inv(blk.Sigma[i])
        prec = 1 / 0.8 + Si.sum()
        assert v[i] == pytest.approx(1 / prec)
        assert m[i] == pytest.approx((-0.2 / 0.8 + (Si @ blk.replicates[i]).sum()) / prec)


def test_sweep_counts_nonfinite_as_rejections(rng):
    blk = random_block(rng, n=6)
    x0 = blk.x.copy()
    acc = me_sweep(blk, lambda xp: np.full(6, np.nan), rng, update_hyper=False)
    assert not acc.any() and blk.n_nonfinite == 6
    np.testing.assert_array_equal(blk.x, x0)
