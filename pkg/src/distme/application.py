"""Synthetic stand-in for a vineyard field study.

Four NDVI point clouds (one per survey period, Beta distributed) and one
three-layer soil resistivity (ER) cloud are drawn over a 350 m x 200 m
field. Cloud sizes keep the proportions of the surveys that motivated the
model, scaled down by ``scale``.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import expit

from . import io

__all__ = ["FIELD", "SURVEY_SIZES", "ER_SIZE", "er_surface", "generate_application", "APPLICATION_CONFIG"]

FIELD = (0.0, 0.0, 350.0, 200.0)
SURVEY_SIZES = (186667, 202172, 91438, 222278)
ER_SIZE = 120261
PERIOD_EFFECT = (0.6, 0.9, 0.4, 0.2)
PERIOD_SIGMA2 = (0.02, 0.015, 0.03, 0.025)
LAYER_SD = (0.25, 0.35, 0.5)

APPLICATION_CONFIG = """\
[run]
name = application
seed = {seed}
output = fit

[data]
path = cells.csv
response = ndvi
stack = ndvi_p1, ndvi_p2, ndvi_p3, ndvi_p4
stack_label = period

[model]
family = beta
mu = linear(period) + me_pspline(er) + tensor(cx, cy, knots_x=8, knots_y=8)
sigma2 = linear(period)

[chain]
iterations = 50000
burnin = 35000
thinning = 15
"""


def er_surface(x, y):
    """Smooth log-resistivity field used as the true ER value."""
    u, v = x / FIELD[2], y / FIELD[3]
    return 1.5 * np.sin(2.2 * u + 0.5) * np.cos(1.7 * v) + 0.8 * u


def _spatial(x, y):
    u, v = x / FIELD[2], y / FIELD[3]
    return 0.3 * np.cos(3.0 * u) * np.sin(2.5 * v + 0.3)


def _points(rng, n):
    return np.column_stack([rng.uniform(FIELD[0], FIELD[2], n), rng.uniform(FIELD[1], FIELD[3], n)])


def generate_application(outdir, seed=1, scale=0.01):
    """Write ``ndvi_p1..4.csv``, ``er.csv`` and ``application.cfg`` to ``outdir``.

    Returns the list of written files.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(outdir, exist_ok=True)
    written = []
    er_pts = _points(rng, max(30, round(ER_SIZE * scale)))
    e = er_surface(er_pts[:, 0], er_pts[:, 1])
    # layers share a common deviation, which makes them correlated
    common = rng.normal(0.0, 0.2, len(e))
    er = {"x": er_pts[:, 0], "y": er_pts[:, 1]}
    for m, sd in enumerate(LAYER_SD, 1):
        er[f"er_{m}"] = e + common + rng.normal(0.0, sd, len(e))
    path = os.path.join(outdir, "er.csv")
    io.write_table(path, list(er), er, "Soil resistivity points, three depth layers",
                   {"x": "easting (m)", "y": "northing (m)", "er_1": "layer 1 log-resistivity",
                    "er_2": "layer 2 log-resistivity", "er_3": "layer 3 log-resistivity"})
    written.append(path)
    for p, n0 in enumerate(SURVEY_SIZES):
        pts = _points(rng, max(30, round(n0 * scale)))
        eta = PERIOD_EFFECT[p] + np.sin(er_surface(pts[:, 0], pts[:, 1])) + _spatial(pts[:, 0], pts[:, 1])
        mu = expit(eta)
        phi = 1.0 / PERIOD_SIGMA2[p] - 1.0
        y = np.clip(rng.beta(mu * phi, (1 - mu) * phi), 1e-10, 1 - 1e-10)
        name = f"ndvi_p{p + 1}"
        cols = {"x": pts[:, 0], "y": pts[:, 1], name: y}
        path = os.path.join(outdir, f"{name}.csv")
        io.write_table(path, list(cols), cols, f"NDVI points, survey period {p + 1}",
                       {"x": "easting (m)", "y": "northing (m)", name: "NDVI in (0, 1)"})
        written.append(path)
    path = os.path.join(outdir, "application.cfg")
    with open(path, "w") as fh:
        fh.write(APPLICATION_CONFIG.format(seed=seed))
    written.append(path)
    return written
