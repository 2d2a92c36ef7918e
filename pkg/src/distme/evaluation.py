"""Model comparison: information criteria, proper scores, quantile residuals."""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .families import Beta, Gaussian

__all__ = [
    "FitMetrics",
    "QuantileResidualSet",
    "dic",
    "waic",
    "predictive_density",
    "proper_scores",
    "quantile_residuals",
    "rmse_vs_truth",
    "fold_assignment",
    "LOG_SCORE_FLOOR",
    "QUAD_POINTS",
]

LOG_SCORE_FLOOR = -700.0
QUAD_POINTS = 2048


@dataclass
class FitMetrics:
    dic: float = float("nan")
    p_d: float = float("nan")
    waic: float = float("nan")
    p_waic: float = float("nan")
    scores: dict = field(default_factory=dict)
    fold_scores: list = field(default_factory=list)
    rmse: float | None = None

    @property
    def p_d_negative(self) -> bool:
        return self.p_d < 0


@dataclass
class QuantileResidualSet:
    residuals: np.ndarray
    groups: np.ndarray | None = None

    def ks_pvalue(self) -> float:
        return float(stats.kstest(self.residuals, "norm").pvalue)


def dic(deviances, deviance_at_mean):
    """``(DIC, p_D)`` from per-draw deviances and the deviance at the posterior mean.

    ``p_D`` may come out negative; it is returned unchanged.
    """
    deviances = np.asarray(deviances, dtype=float)
    if deviances.size < 2:
        raise ValueError("DIC needs at least two draws")
    p_d = float(deviances.mean() - deviance_at_mean)
    return float(deviance_at_mean + 2 * p_d), p_d


def waic(loglik):
    """``(WAIC, p_WAIC)`` from an ``(S draws, n observations)`` log-likelihood matrix."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2 or ll.shape[1] < 1:
        raise ValueError("WAIC needs an (S >= 2, n >= 1) log-likelihood matrix")
    bad = np.argwhere(~np.isfinite(ll))
    if bad.size:
        s, i = bad[0]
        raise ValueError(f"non-finite log-likelihood at draw {s}, observation {i} ({len(bad)} entries)")
    S = ll.shape[0]
    lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(S)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return -2.0 * (lppd - p_waic), p_waic


def predictive_density(family, mu, sigma2):
    """Equal-weight mixture of the family densities over posterior draws.

    Returns a vectorized callable ``f(y)``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))

    def f(y):
        y = np.asarray(y, dtype=float)
        if isinstance(family, Beta):
            inside = (y > 0) & (y < 1)
            yc = np.where(inside, y, 0.5)
            dens = np.exp(family.logpdf(yc[..., None], mu, sigma2)).mean(axis=-1)
            return np.where(inside, dens, 0.0)
        return np.exp(family.logpdf(y[..., None], mu, sigma2)).mean(axis=-1)

    return f


def _l2_norm_sq(family, f, mu, sigma2, points):
    lo, hi = family.predictive_support(mu, sigma2)
    h = (hi - lo) / points
    nodes = lo + (np.arange(points) + 0.5) * h
    # chunk to bound memory for long mixtures
    total = 0.0
    for chunk in np.array_split(nodes, max(1, points // 512)):
        total += np.sum(f(chunk) ** 2)
    return float(total * h)


def proper_scores(family, mu, sigma2, y, points: int = QUAD_POINTS):
    """Log, spherical and quadratic score of the predictive mixture at ``y``.

    ``mu`` and ``sigma2`` hold the per-draw distribution parameters of the
    held-out observation. Returns ``(log, spherical, quadratic, floored)``;
    all scores are positively oriented.
    """
    f = predictive_density(family, mu, sigma2)
    if isinstance(family, Beta):
        y = float(np.clip(y, 1e-10, 1 - 1e-10))
    fy = float(f(np.asarray(y)))
    norm_sq = _l2_norm_sq(family, f, mu, sigma2, points)
    floored = not fy > 0
    log_score = LOG_SCORE_FLOOR if floored else max(np.log(fy), LOG_SCORE_FLOOR)
    spherical = fy / np.sqrt(norm_sq)
    quadratic = 2 * fy - norm_sq
    return log_score, spherical, quadratic, floored


def quantile_residuals(family, mu, sigma2, y, groups=None) -> QuantileResidualSet:
    """``Phi^-1(F(y_i | theta_i))`` with ``u`` clamped to ``[1e-12, 1 - 1e-12]``."""
    y = family.check_support(y)
    u = np.clip(family.cdf(y, mu, sigma2), 1e-12, 1 - 1e-12)
    return QuantileResidualSet(stats.norm.ppf(u), None if groups is None else np.asarray(groups))


def rmse_vs_truth(estimate, truth) -> float:
    """RMSE between two curves on a common grid after centering both."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"grid mismatch: {estimate.shape} vs {truth.shape}")
    d = (estimate - estimate.mean()) - (truth - truth.mean())
    return float(np.sqrt(np.mean(d**2)))


def fold_assignment(n: int, R: int, rng) -> np.ndarray:
    """Random partition of ``range(n)`` into ``R`` near-equal folds."""
    if R < 2:
        raise ValueError("need at least two folds")
    if R > n:
        raise ValueError(f"cannot form {R} non-empty folds from {n} observations")
    folds = np.arange(n) % R
    return folds[rng.permutation(n)]


def _warn_floor(n):
    if n:
        warnings.warn(f"{n} predictive density value(s) underflowed; log score floored", RuntimeWarning, stacklevel=3)
