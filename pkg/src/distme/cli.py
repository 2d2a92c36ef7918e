"""Command-line entry point: ``distme {simulate,downscale,fit,evaluate}``."""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
import os
import sys

import numpy as np

from . import io
from .application import generate_application
from .config import ConfigError, load_config
from .downscale import (
    build_lattice,
    choose_k0,
    knn_aggregate,
    proportional_k,
    split_layers,
    summary_columns,
)
from .reports import write_cv_outputs, write_fit_outputs, write_simulation_table
from .simulation import PRESETS, aggregate, run_comparison
from .workflow import cross_validate, fit, fit_metrics, ingest_observations, residuals, resolve

log = logging.getLogger("distme")

PRESET_NAMES = sorted(PRESETS) + ["application"]


def _chain_overrides(args):
    out = {}
    for name in ("iterations", "burnin", "thinning"):
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    return out


def cmd_simulate(args):
    os.makedirs(args.output, exist_ok=True)
    if args.preset == "application":
        files = generate_application(args.output, seed=args.seed, scale=args.scale)
        for f in files:
            print(f)
        return 0
    config = PRESETS[args.preset]
    chain = replace(config.chain, **_chain_overrides(args))
    reps = 100 if args.full else (args.replications or config.replications)
    config = replace(config, replications=reps, seed=args.seed, chain=chain,
                     x_scale=args.x_scale, beta_sigma2=args.beta_sigma2, on_invalid=args.on_invalid)
    rows, failed = run_comparison(config, progress=lambda r: log.info("replication %d done", r))
    if not rows:
        raise RuntimeError(f"all {failed} replication(s) failed")
    path = os.path.join(args.output, "summary.csv")
    write_simulation_table(path, rows, aggregate(rows), failed)
    print(path)
    return 0


def _read_cloud(path):
    table = io.read_table(path)
    for c in ("x", "y"):
        if c not in table:
            raise ValueError(f"{path}: point file needs 'x' and 'y' columns")
    values = [c for c in table if c not in ("x", "y")]
    if not values:
        raise ValueError(f"{path}: no value columns")
    pts = np.column_stack([table["x"], table["y"]])
    bad = ~np.all(np.isfinite(pts), axis=1)
    for c in values:
        bad |= ~np.isfinite(table[c].astype(float))
    if bad.any():
        log.warning("%s: dropping %d row(s) with missing values", path, int(bad.sum()))
    return pts[~bad], {c: table[c].astype(float)[~bad] for c in values}


def cmd_downscale(args):
    clouds = [(p, *_read_cloud(p)) for p in args.input]
    allpts = np.vstack([c[1] for c in clouds])
    bbox = (allpts[:, 0].min(), allpts[:, 1].min(), allpts[:, 0].max(), allpts[:, 1].max())
    lattice = build_lattice(bbox, args.cells)
    sizes = [len(c[1]) for c in clouds]
    smallest = int(np.argmin(sizes))
    if args.k0 == "auto":
        k0 = choose_k0(clouds[smallest][1], lattice, args.max_radius)
        print(f"k0 = {k0} chosen on {clouds[smallest][0]}", file=sys.stderr)
    else:
        k0 = int(args.k0)
    ks = proportional_k(sizes, k0)
    summaries = []
    for (path, pts, values), k in zip(clouds, ks):
        if k > len(pts):
            raise ValueError(f"{path}: k={k} exceeds its {len(pts)} points")
        for name, layers in split_layers(list(values)):
            V = np.column_stack([values[c] for c in layers])
            summaries.append(knn_aggregate(pts, V, lattice, k, name))
    cols, desc = summary_columns(summaries, se_scale=args.se_scale)
    io.write_table(args.output, list(cols), cols,
                   f"kNN lattice summaries on {lattice.nx} x {lattice.ny} cells", desc)
    print(args.output)
    return 0


def _load(path):
    config = load_config(path)
    base = os.path.dirname(os.path.abspath(path))
    return config, resolve(base, config.data_path), resolve(base, config.output)


def cmd_fit(args):
    config, data_path, outdir = _load(args.config)
    outdir = args.output or outdir
    dataset = ingest_observations(data_path, config)
    model, samples = fit(dataset, config, **_chain_overrides(args))
    metrics = fit_metrics(samples)
    fitted = residuals(model, samples, dataset.group)
    for name in write_fit_outputs(outdir, config, model, samples, metrics, fitted):
        print(os.path.join(outdir, name))
    return 0


def cmd_evaluate(args):
    rows = []
    for path in args.config:
        config, data_path, outdir = _load(path)
        dataset = ingest_observations(data_path, config)
        folds = args.folds or config.folds
        cv = cross_validate(dataset, config, folds, **_chain_overrides(args))
        model, samples = fit(dataset, config, **_chain_overrides(args))
        metrics = fit_metrics(samples)
        target = os.path.join(outdir, "evaluate")
        rows.append(write_cv_outputs(target, config, cv, metrics))
        print(os.path.join(target, "scores.csv"))
        print(os.path.join(target, "metrics.csv"))
    if args.table:
        io.write_table(args.table, list(rows[0]), rows, "Model comparison across configurations")
        print(args.table)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="distme", description="Distributional regression with measurement error correction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="{simulate,downscale,fit,evaluate}")
    sub.required = True

    def chain_flags(sp):
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--burnin", type=int)
        sp.add_argument("--thinning", type=int)

    s = sub.add_parser("simulate", help="run a simulation preset")
    s.add_argument("--preset", required=True, choices=PRESET_NAMES)
    s.add_argument("--replications", type=int)
    s.add_argument("--full", action="store_true", help="100 replications")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--output", default="simulation")
    s.add_argument("--x-scale", choices=("variance", "sd"), default="variance")
    s.add_argument("--beta-sigma2", choices=("direct", "variance"), default="direct")
    s.add_argument("--on-invalid", choices=("abort", "resample"), default="abort")
    s.add_argument("--scale", type=float, default=0.01, help="application preset: point-cloud size factor")
    chain_flags(s)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("downscale", help="aggregate point clouds onto a lattice")
    d.add_argument("--input", action="append", required=True, help="point file; repeat per series")
    d.add_argument("--cells", type=int, default=2574)
    d.add_argument("--k0", default="27", help="neighbours for the smallest series, or 'auto'")
    d.add_argument("--max-radius", type=float, help="radius for --k0 auto (default two cell diagonals)")
    d.add_argument("--se-scale", action="store_true", help="divide layer covariances by k")
    d.add_argument("--output", default="cells.csv")
    d.set_defaults(func=cmd_downscale)

    f = sub.add_parser("fit", help="fit the model of a config file")
    f.add_argument("--config", required=True)
    f.add_argument("--output")
    chain_flags(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="cross-validated scores for one or more configs")
    e.add_argument("--config", action="append", required=True)
    e.add_argument("--folds", type=int)
    e.add_argument("--table", help="combined metrics table over all configs")
    chain_flags(e)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "downscale" and args.k0 != "auto":
        try:
            int(args.k0)
        except ValueError:
            parser.error(f"--k0 must be an integer or 'auto', got {args.k0!r}")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"distme {args.command}: {len(exc.errors)} config error(s): " + "; ".join(exc.errors),
              file=sys.stderr)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"distme {args.command}: error: " + "; ".join(str(exc).splitlines()), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
