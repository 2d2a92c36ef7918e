"""Output files for the fit, evaluate and simulate workflows."""

from __future__ import annotations

import os

import numpy as np

from . import io
from .sampler import block_key
from .simulation import SUMMARY_COLUMNS

__all__ = [
    "write_fit_outputs",
    "write_cv_outputs",
    "write_simulation_table",
    "curve_grid",
]

FIT_FILES = ("draws.csv", "latent.csv", "metrics.csv", "curves.csv", "surface.csv",
             "residuals.csv", "summary.txt")


def _draw_columns(model, samples):
    cols = {"draw": np.arange(samples.n_draws), "deviance": samples.deviances()}
    for k, j, term in model.blocks():
        key = block_key(model, k, j)
        param = model.family.parameters[k]
        names = term.column_names() if term.kind in ("intercept", "linear") else \
            [f"{term.name}[{i}]" for i in range(term.n_coef)]
        for i, name in enumerate(names):
            cols[f"{param}:{name}"] = samples.coefs[key][:, i]
    for key, v in samples.tau2.items():
        cols[f"tau2:{key}"] = v
    for key, v in samples.omega.items():
        cols[f"omega:{key}"] = v
    if samples.mu_x is not None:
        cols["mu_x"] = samples.mu_x
        cols["tau2_x"] = samples.tau2_x
    return cols


def curve_grid(term, samples, points):
    """Evaluation grid for a one-dimensional smooth.

    Observed covariates use the basis range; a latent covariate uses the
    range of its posterior-mean imputed values.
    """
    if term.kind == "me_pspline":
        x = samples.latent.mean(axis=0)
        return np.linspace(x.min(), x.max(), points)
    return np.linspace(term.basis.lo, term.basis.hi, points)


def _band(draws):
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    return draws.mean(axis=0), lo, hi


def write_fit_outputs(outdir, config, model, samples, metrics, fitted):
    """Write every fit artifact to ``outdir``; returns the file names."""
    os.makedirs(outdir, exist_ok=True)
    draws = _draw_columns(model, samples)
    io.write_table(os.path.join(outdir, "draws.csv"), list(draws), draws,
                   "Posterior draws after burn-in and thinning",
                   {"draw": "draw index", "deviance": "-2 log-likelihood of the draw"})

    latent_cols = {"draw": np.array([], dtype=int)}
    if samples.latent is not None:
        keep = np.arange(0, samples.n_draws, config.chain["latent_thin"])
        labels = model.site_labels if model.site_labels is not None else np.arange(model.block.n)
        latent_cols = {"draw": keep}
        for i, lab in enumerate(labels):
            latent_cols[f"x_{lab}"] = samples.latent[keep, i]
    io.write_table(os.path.join(outdir, "latent.csv"), list(latent_cols), latent_cols,
                   "Imputed latent covariate per site, every latent_thin-th stored draw")

    row = {"model": config.name, "dic": metrics.dic, "p_d": metrics.p_d,
           "p_d_negative": int(metrics.p_d_negative), "waic": metrics.waic, "p_waic": metrics.p_waic}
    io.write_table(os.path.join(outdir, "metrics.csv"), list(row), [row],
                   "Model fit statistics", {"p_d_negative": "1 if the DIC effective parameter count is negative"})

    curves = {"parameter": [], "term": [], "x": [], "mean": [], "lower": [], "upper": []}
    surface = {"parameter": [], "term": [], "x": [], "y": [], "mean": [], "lower": [], "upper": []}
    for k, j, term in model.blocks():
        gamma = samples.coefs[block_key(model, k, j)]
        param = model.family.parameters[k]
        if term.kind in ("pspline", "me_pspline"):
            grid = curve_grid(term, samples, config.grid_points)
            m, lo, hi = _band(term.curve(grid, gamma))
            for c, v in (("x", grid), ("mean", m), ("lower", lo), ("upper", hi)):
                curves[c].extend(v.tolist())
            curves["parameter"].extend([param] * len(grid))
            curves["term"].extend([term.name] * len(grid))
        elif term.kind == "tensor":
            data = model_locations(model, term)
            B = np.asarray(term.raw_design_at(data) @ term.Z)
            m, lo, hi = _band(gamma @ B.T)
            for c, v in (("x", data[term.xvar]), ("y", data[term.yvar]), ("mean", m),
                         ("lower", lo), ("upper", hi)):
                surface[c].extend(np.asarray(v).tolist())
            surface["parameter"].extend([param] * len(m))
            surface["term"].extend([term.name] * len(m))
    io.write_table(os.path.join(outdir, "curves.csv"), list(curves), curves,
                   "Smooth effects: posterior mean and pointwise 95% band on an equidistant grid")
    io.write_table(os.path.join(outdir, "surface.csv"), list(surface), surface,
                   "Tensor-product effects at the distinct observed locations: mean and 95% band")

    mu_hat, s2_hat, qr = fitted
    res = {"row": np.arange(model.n), "y": model.y, "mu_hat": mu_hat, "sigma2_hat": s2_hat,
           "residual": qr.residuals}
    if qr.groups is not None:
        res["group"] = qr.groups
    io.write_table(os.path.join(outdir, "residuals.csv"), list(res), res,
                   "Quantile residuals at posterior-mean distribution parameters")

    items = [("name", config.name), ("family", model.family.name), ("observations", model.n),
             ("draws", samples.n_draws), ("iterations", samples.config.iterations),
             ("burnin", samples.config.burnin), ("thinning", samples.config.thinning),
             ("seed", samples.config.seed)]
    if model.block is not None:
        items.append(("sites", model.block.n))
    items += [(f"acceptance.{k}", v) for k, v in samples.acceptance.items()]
    items += [(f"note.{k}", v) for k, v in samples.notes.items()]
    io.write_keyvalue(os.path.join(outdir, "summary.txt"), items)
    return FIT_FILES


def model_locations(model, term):
    """Distinct observed ``(x, y)`` pairs of a tensor term, sorted."""
    xy = np.unique(np.column_stack([term.sx, term.sy]), axis=0)
    return {term.xvar: xy[:, 0], term.yvar: xy[:, 1]}


def write_cv_outputs(outdir, config, cv, metrics=None):
    """Write ``scores.csv`` and ``metrics.csv``; returns the metrics row."""
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for r, (fs, size) in enumerate(zip(cv.fold_scores, cv.fold_sizes)):
        rows.append({"model": config.name, "fold": r, "held_out": size, **fs})
    rows.append({"model": config.name, "fold": "S_R", "held_out": sum(cv.fold_sizes), **cv.scores})
    io.write_table(os.path.join(outdir, "scores.csv"),
                   ["model", "fold", "held_out", "log", "spherical", "quadratic"], rows,
                   "Cross-validated proper scores per fold; the S_R row averages the folds",
                   {"log": "mean log score (higher is better)",
                    "spherical": "mean spherical score (higher is better)",
                    "quadratic": "mean quadratic score (higher is better)"})
    row = {"model": config.name, "folds": len(cv.fold_sizes), "log": cv.scores["log"],
           "spherical": cv.scores["spherical"], "quadratic": cv.scores["quadratic"],
           "log_floored": cv.n_floored}
    if metrics is not None:
        row.update(dic=metrics.dic, p_d=metrics.p_d, waic=metrics.waic, p_waic=metrics.p_waic)
    io.write_table(os.path.join(outdir, "metrics.csv"), list(row), [row], "Model fit statistics",
                   {"log_floored": "held-out points whose log score hit the floor"})
    return row


def write_simulation_table(path, rows, aggregates, failed=0):
    cols = list(SUMMARY_COLUMNS) + ["block"]
    out = [{**r, "block": "replication"} for r in rows]
    out += [{**a, "block": "aggregate"} for a in aggregates]
    io.write_table(path, cols, out,
                   f"Simulation comparison; {failed} failed replication(s) excluded",
                   {"rmse": "RMSE of the centred smooth against sin(x) on the evaluation grid",
                    "dic": "deviance information criterion",
                    "mean_ci_width": "mean width of the pointwise 95% band on the evaluation grid",
                    "block": "replication rows, then aggregate rows (replication = mean | median)"})
