"""Data ingestion, fitting, posterior prediction and cross-validation."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import os

import numpy as np

from . import io
from .evaluation import (
    FitMetrics,
    dic,
    fold_assignment,
    proper_scores,
    quantile_residuals,
    waic,
)
from .model import FormulaError, build_model, covariance_columns, me_inputs, replicate_columns
from .sampler import block_key, run_chain

__all__ = [
    "Dataset",
    "ingest_observations",
    "model_columns",
    "fit",
    "predict_draws",
    "cross_validate",
    "fit_metrics",
    "CVResult",
]

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Validated columns plus an optional row-to-site mapping."""

    columns: dict
    n: int
    site: np.ndarray | None = None
    group: np.ndarray | None = None

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in self.columns.items()}
        site = None if self.site is None else self.site[rows]
        group = None if self.group is None else self.group[rows]
        return Dataset(cols, len(rows), site, group)


def _stack(table, response, stack, label):
    missing = [c for c in stack if c not in table]
    if missing:
        raise FormulaError(f"stacked response column(s) {missing} not in data")
    n0 = len(next(iter(table.values())))
    out = {}
    for name, col in table.items():
        if name in stack:
            continue
        out[name] = np.concatenate([col] * len(stack))
    out[response] = np.concatenate([np.asarray(table[c], float) for c in stack])
    out[label] = np.repeat(np.array(stack, dtype=object), n0)
    site = np.tile(np.arange(n0), len(stack))
    return out, site


def model_columns(spec, response, columns) -> list:
    """Every data column the model reads, in a stable order."""
    need = [response]
    for t in spec.mu + spec.sigma2:
        if t.kind == "me_pspline":
            reps = replicate_columns(t.variables[0], columns)
            if not reps:
                raise FormulaError(f"no replicate columns {t.variables[0]}_1..{t.variables[0]}_M in data")
            need.extend(reps)
            need.extend(c for c in covariance_columns(t.variables[0], len(reps)) if c in columns)
        else:
            missing = [v for v in t.variables if v not in columns]
            if missing:
                raise FormulaError(f"variable(s) {missing} used in {t} not found in data header")
            need.extend(t.variables)
    return list(dict.fromkeys(need))


def ingest_observations(path, config) -> Dataset:
    """Read and validate the observation table named by a run config.

    Wide per-period responses listed in ``config.stack`` are stacked into
    long format with a period factor; stacked rows from the same input row
    share one measurement-error site. Missing values in any column the
    model reads abort with the offending rows (1-based data rows).
    """
    table = io.read_table(path)
    site = group = None
    if config.stack:
        table, site = _stack(table, config.response, config.stack, config.stack_label)
        group = table[config.stack_label]
    need = model_columns(config.model, config.response, table)
    n = len(table[config.response])
    bad_rows = set()
    report = []
    for c in need:
        col = table[c]
        if col.dtype.kind == "f":
            miss = np.flatnonzero(np.isnan(col))
        else:
            miss = np.flatnonzero([str(v).strip() == "" for v in col])
        if miss.size:
            report.append(f"{c}: rows {_rows(miss, site)}")
            bad_rows.update(miss.tolist())
    if bad_rows:
        raise io.MissingValueError("missing values in model variables; " + "; ".join(report))
    log.info("ingested %d rows from %s", n, path)
    return Dataset({c: table[c] for c in table}, n, site, group)


def _rows(idx, site):
    # report rows of the input file, not of the stacked table
    rows = sorted(set((site[idx] if site is not None else idx).tolist()))
    shown = ", ".join(str(r + 1) for r in rows[:20])
    return shown + (f", ... ({len(rows)} rows)" if len(rows) > 20 else "")


def fit(dataset: Dataset, config, **chain_overrides):
    """Build the model of ``config`` on ``dataset`` and run one chain."""
    model = build_model(config.model, dataset.columns, config.response, site=dataset.site)
    samples = run_chain(model, config.chain_config(**chain_overrides))
    return model, samples


def fit_metrics(samples) -> FitMetrics:
    d, p_d = dic(samples.deviances(), samples.deviance_at_mean())
    w, p_w = waic(samples.loglik)
    return FitMetrics(dic=d, p_d=p_d, waic=w, p_waic=p_w)


def _latent_draws(model, samples, data, site_new, rng):
    """Latent covariate draws ``(S, n_new)`` for prediction rows.

    Rows whose site was part of the fit reuse that site's imputed draws;
    new sites are drawn from the latent prior combined with their
    replicates, one draw per posterior draw of ``(mu_x, tau2_x)``.
    """
    blk = model.block
    spec = model.spec
    X, Sigma = me_inputs(blk.name, data, spec.me)
    ones = np.ones(X.shape[1])
    Sinv_1 = np.linalg.solve(Sigma, np.broadcast_to(ones, X.shape)[..., None])[..., 0]
    s1 = Sinv_1 @ ones
    s2 = np.einsum("ij,ij->i", Sinv_1, X)
    prec = 1.0 / samples.tau2_x[:, None] + s1[None, :]
    mean = (samples.mu_x[:, None] / samples.tau2_x[:, None] + s2[None, :]) / prec
    x = mean + rng.standard_normal(mean.shape) / np.sqrt(prec)
    if site_new is not None and model.site_labels is not None:
        pos = np.searchsorted(model.site_labels, site_new)
        pos = np.minimum(pos, len(model.site_labels) - 1)
        known = model.site_labels[pos] == site_new
        x[:, known] = samples.latent[:, pos[known]]
    return x


def predict_draws(model, samples, data, site=None, seed=0):
    """Per-draw distribution parameters ``(mu, sigma2)``, each ``(S, n_new)``.

    ``data`` is a column mapping with the covariates of the new rows.
    """
    rng = np.random.default_rng(seed)
    n_new = len(next(iter(data.values())))
    x_latent = None
    etas = []
    for k, pred in enumerate(model.predictors):
        eta = np.zeros((samples.n_draws, n_new))
        for j, term in enumerate(pred.terms):
            gamma = samples.coefs[block_key(model, k, j)]
            if term.kind == "me_pspline":
                if x_latent is None:
                    x_latent = _latent_draws(model, samples, data, site, rng)
                f_grid = gamma @ term.rowsZ.T  # (S, G)
                idx = term.block.grid.index(x_latent.ravel()).reshape(x_latent.shape)
                eta += np.take_along_axis(f_grid, idx, axis=1)
                continue
            if term.kind == "linear" and term.levels is not None:
                unseen = sorted(set(np.asarray(data[term.var]).tolist()) - set(term.levels))
                if unseen:
                    raise FormulaError(f"level(s) {unseen} of {term.var!r} were not seen in fitting")
            B = term.raw_design_at(data)
            if term.Z is not None:
                B = B @ term.Z
            eta += np.asarray(gamma @ np.asarray(B).T)
        etas.append(eta)
    return model.family.params_from_eta(etas)


@dataclass
class CVResult:
    scores: dict          # rule -> S_R
    fold_scores: list     # per fold: dict(rule -> mean over held-out points)
    fold_sizes: list
    n_floored: int


RULES = ("log", "spherical", "quadratic")


def cross_validate(dataset: Dataset, config, R: int, **chain_overrides) -> CVResult:
    """R-fold cross-validated log, spherical and quadratic scores.

    Folds partition the rows at random (seeded by ``config.seed``). Each
    fold is refitted on the remaining rows and every held-out point is
    scored under the posterior predictive mixture.
    """
    rng = np.random.default_rng(config.seed)
    folds = fold_assignment(dataset.n, R, rng)
    fold_scores, sizes, n_floored = [], [], 0
    for r in range(R):
        test = np.flatnonzero(folds == r)
        train = np.flatnonzero(folds != r)
        try:
            model, samples = fit(dataset.subset(train), config,
                                 seed=config.seed * 1000 + r, **chain_overrides)
            new = {c: v[test] for c, v in dataset.columns.items()}
            site = None if dataset.site is None else dataset.site[test]
            mu, s2 = predict_draws(model, samples, new, site, seed=config.seed * 1000 + r)
        except Exception as exc:
            raise RuntimeError(f"fold {r} failed: {exc}") from exc
        y = np.asarray(dataset.columns[config.response], float)[test]
        per_point = np.empty((len(test), 3))
        for i in range(len(test)):
            lg, sph, quad, floored = proper_scores(model.family, mu[:, i], s2[:, i], y[i])
            per_point[i] = lg, sph, quad
            n_floored += floored
        fold_scores.append(dict(zip(RULES, per_point.mean(axis=0).tolist())))
        sizes.append(len(test))
    scores = {rule: float(np.mean([f[rule] for f in fold_scores])) for rule in RULES}
    return CVResult(scores, fold_scores, sizes, n_floored)


def residuals(model, samples, group=None):
    """Quantile residuals at posterior-mean distribution parameters."""
    mu_draws, s2_draws = [], []
    for s in range(samples.n_draws):
        m, v = model.family.params_from_eta(samples.eta_at(s))
        mu_draws.append(m)
        s2_draws.append(v)
    mu_hat = np.mean(mu_draws, axis=0)
    s2_hat = np.mean(s2_draws, axis=0)
    return mu_hat, s2_hat, quantile_residuals(model.family, mu_hat, s2_hat, model.y, group)


def resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))
