"""Latent-covariate imputation for replicated covariates with known error.

Observed replicates follow ``x_tilde_i ~ N_M(x_i 1, Sigma_i)`` with known
site-specific covariance, and the true values get the hierarchical prior
``x_i ~ N(mu_x, tau2_x)``, ``mu_x ~ N(0, tau2_mu)``,
``tau2_x ~ IG(a_x, b_x)``.
"""

from __future__ import annotations

import warnings

import numpy as np

from .basis import SplineBasis, build_bin_grid

__all__ = [
    "MeasurementErrorBlock",
    "exchangeable_covariance",
    "covariance_from_upper",
    "upper_index_pairs",
    "propose",
    "log_acceptance",
    "update_mu_x",
    "update_tau2_x",
    "initialize_latent",
    "me_sweep",
    "conditional_latent_moments",
]

TAU2_FLOOR = 1e-6


def exchangeable_covariance(sigma2, c_u, M=3) -> np.ndarray:
    """``sigma2 * [(1 - c_u) I + c_u 1 1']``; vectorized over ``sigma2``."""
    if not (1 + (M - 1) * c_u > 0 and 1 - c_u > 0):
        raise ValueError(f"c_u={c_u} gives a singular replicate covariance for M={M}")
    R = (1 - c_u) * np.eye(M) + c_u * np.ones((M, M))
    sigma2 = np.asarray(sigma2, dtype=float)
    return sigma2[..., None, None] * R


def upper_index_pairs(M):
    """1-based ``(j, k)`` pairs with ``j <= k`` in row-major order."""
    return [(j + 1, k + 1) for j in range(M) for k in range(j, M)]


def covariance_from_upper(upper, M) -> np.ndarray:
    """Rebuild ``(n, M, M)`` matrices from upper-triangle columns."""
    upper = np.asarray(upper, dtype=float)
    n = upper.shape[0]
    S = np.empty((n, M, M))
    for col, (j, k) in enumerate(upper_index_pairs(M)):
        S[:, j - 1, k - 1] = upper[:, col]
        S[:, k - 1, j - 1] = upper[:, col]
    return S


class MeasurementErrorBlock:
    """State of one error-prone covariate.

    Parameters
    ----------
    replicates : ndarray, shape (n, M)
        Replicated observations per site.
    Sigma : ndarray, shape (n, M, M) or (M, M)
        Known measurement error covariance per site.
    site : ndarray of int, optional
        Site of every response observation; defaults to one observation per
        site.
    f : float
        Proposal scaling factor.
    """

    def __init__(self, replicates, Sigma, site=None, f=1.0, tau2_mu=1000.0**2,
                 a_x=0.001, b_x=0.001, n_knots=20, degree=3, G=1000, name="x"):
        X = np.asarray(replicates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, M = X.shape
        if M < 1:
            raise ValueError("need at least one replicate per site")
        if not np.all(np.isfinite(X)):
            raise ValueError("replicates contain missing or non-finite values")
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.ndim == 2:
            Sigma = np.broadcast_to(Sigma, (n, M, M)).copy()
        if Sigma.shape != (n, M, M):
            raise ValueError(f"Sigma has shape {Sigma.shape}, expected {(n, M, M)}")
        if not np.allclose(Sigma, np.swapaxes(Sigma, 1, 2)):
            raise ValueError("measurement error covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            bad = [i for i in range(n) if np.any(np.linalg.eigvalsh(Sigma[i]) <= 0)]
            raise ValueError(f"Sigma is not positive definite at site(s) {bad[:10]}") from None
        self.name = name
        self.replicates = X
        self.Sigma = Sigma
        self.M = M
        self.n = n
        self.site = np.arange(n) if site is None else np.asarray(site, dtype=np.int64)
        self.f = float(f)
        self.tau2_mu = float(tau2_mu)
        self.a_x = float(a_x)
        self.b_x = float(b_x)

        eye = np.broadcast_to(np.eye(M), Sigma.shape)
        Linv = np.linalg.solve(chol, eye)
        self.Sigma_inv = np.swapaxes(Linv, 1, 2) @ Linv
        ones = np.ones(M)
        # quadratic form pieces: (xt - x1)' S^-1 (xt - x1) = c0 - 2 x s2 + x^2 s1
        self._s1 = np.einsum("j,ijk,k->i", ones, self.Sigma_inv, ones)
        self._s2 = np.einsum("j,ijk,ik->i", ones, self.Sigma_inv, X)
        self._c0 = np.einsum("ij,ijk,ik->i", X, self.Sigma_inv, X)
        self.prop_var = self.f * np.trace(Sigma, axis1=1, axis2=2) / M**2
        self.prop_sd = np.sqrt(self.prop_var)

        max_sd = float(np.sqrt(np.max(np.diagonal(Sigma, axis1=1, axis2=2))))
        lo, hi = X.min() - 4 * max_sd, X.max() + 4 * max_sd
        self.grid = build_bin_grid(lo, hi, G, SplineBasis(lo, hi, n_knots, degree))

        self.n_proposed = 0
        self.n_accepted = 0
        self.n_nonfinite = 0
        initialize_latent(self)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")

    def set_latent(self, x, mask=None):
        if mask is None:
            self.x = np.asarray(x, dtype=float).copy()
        else:
            self.x[mask] = x[mask]
        self.bin_index = self.grid.index(self.x)

    def me_loglik(self, x, i=None) -> np.ndarray:
        """``-0.5 (x_tilde_i - x 1)' Sigma_i^-1 (x_tilde_i - x 1)`` per site."""
        if i is None:
            i = slice(None)
        return -0.5 * (self._c0[i] - 2 * x * self._s2[i] + x * x * self._s1[i])

    def latent_logprior(self, x) -> np.ndarray:
        return -0.5 * (x - self.mu_x) ** 2 / self.tau2_x


def initialize_latent(block: MeasurementErrorBlock) -> np.ndarray:
    """Start at replicate means; hyperparameters from their mean and variance."""
    means = block.replicates.mean(axis=1)
    block.set_latent(means)
    block.mu_x = float(means.mean()) if means.size else 0.0
    block.tau2_x = max(float(means.var()) if means.size else 0.0, TAU2_FLOOR)
    return block.x


def propose(block: MeasurementErrorBlock, i, rng) -> np.ndarray:
    """Random-walk proposal ``x_i + e_i`` with ``Var(e_i) = f tr(Sigma_i) / M^2``."""
    i = np.asarray(i)
    return block.x[i] + block.prop_sd[i] * rng.standard_normal(i.shape)


def log_acceptance(block: MeasurementErrorBlock, i, x_prop, x_cur, loglik_delta):
    """Log Metropolis-Hastings ratio for moving site(s) ``i`` from ``x_cur`` to ``x_prop``.

    ``loglik_delta`` is the response log-likelihood change; the proposal is
    symmetric so no proposal term enters.
    """
    prior = block.latent_logprior(x_prop) - block.latent_logprior(x_cur)
    me = block.me_loglik(x_prop, i) - block.me_loglik(x_cur, i)
    return loglik_delta + prior + me


def update_mu_x(block: MeasurementErrorBlock, rng) -> float:
    n = block.n
    xbar = block.x.mean() if n else 0.0
    denom = n * block.tau2_mu + block.tau2_x
    mean = n * xbar * block.tau2_mu / denom
    var = block.tau2_x * block.tau2_mu / denom
    block.mu_x = float(mean + np.sqrt(var) * rng.standard_normal())
    return block.mu_x


def update_tau2_x(block: MeasurementErrorBlock, rng) -> float:
    shape = block.a_x + block.n / 2
    rate = block.b_x + 0.5 * np.sum((block.x - block.mu_x) ** 2)
    block.tau2_x = float(max(rate / rng.gamma(shape), TAU2_FLOOR))
    return block.tau2_x


def me_sweep(block: MeasurementErrorBlock, loglik_delta, rng, update_hyper: bool = True):
    """One imputation pass over all sites followed by the hyperparameter updates.

    ``loglik_delta(x_prop)`` must return, per site, the response
    log-likelihood at the proposal minus that at the current values. Given
    the remaining parameters the sites are conditionally independent, so all
    proposals are made and judged at once. ``update_hyper=False`` keeps
    ``mu_x`` and ``tau2_x`` fixed.
    """
    sites = np.arange(block.n)
    x_cur = block.x
    x_prop = propose(block, sites, rng)
    delta = loglik_delta(x_prop)
    log_alpha = log_acceptance(block, sites, x_prop, x_cur, delta)
    bad = ~np.isfinite(log_alpha)
    if bad.any():
        block.n_nonfinite += int(bad.sum())
        log_alpha = np.where(bad, -np.inf, log_alpha)
    accept = np.log(rng.uniform(size=block.n)) < log_alpha
    block.n_proposed += block.n
    block.n_accepted += int(accept.sum())
    block.set_latent(x_prop, accept)
    if update_hyper:
        update_mu_x(block, rng)
        update_tau2_x(block, rng)
    return accept


def conditional_latent_moments(block: MeasurementErrorBlock, i=None):
    """Mean and variance of ``x_i`` given replicates and hyperparameters only.

    Combines the latent prior with the measurement-error likelihood; used for
    prediction at sites whose response is held out.
    """
    if i is None:
        i = slice(None)
    prec = 1.0 / block.tau2_x + block._s1[i]
    mean = (block.mu_x / block.tau2_x + block._s2[i]) / prec
    return mean, 1.0 / prec


def warn_clamped(block: MeasurementErrorBlock):
    if block.grid.n_clamped:
        warnings.warn(
            f"{block.grid.n_clamped} latent value(s) of {block.name!r} fell outside the bin grid and were clamped",
            RuntimeWarning,
            stacklevel=2,
        )
