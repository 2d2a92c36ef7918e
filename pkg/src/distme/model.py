"""Model formulae and assembly of predictors from data columns."""

from __future__ import annotations

from dataclasses import dataclass, field
import re

import numpy as np

from .basis import SplineBasis
from .families import Family, get_family
from .measurement_error import (
    MeasurementErrorBlock,
    covariance_from_upper,
    exchangeable_covariance,
    upper_index_pairs,
)
from .terms import (
    InterceptTerm,
    LinearTerm,
    MEPSplineTerm,
    PredictorSpec,
    PSplineTerm,
    TensorTerm,
)

__all__ = [
    "FormulaError",
    "TermSpec",
    "MESpec",
    "ModelSpec",
    "Model",
    "parse_formula",
    "format_formula",
    "build_model",
    "replicate_columns",
    "covariance_columns",
    "me_inputs",
]

# option name -> (type, default) for every term kind
TERM_OPTIONS = {
    "linear": {"prior": (str, "flat")},
    "pspline": {"knots": (int, 20), "degree": (int, 3), "order": (int, 2)},
    "tensor": {"knots_x": (int, 10), "knots_y": (int, 10), "degree": (int, 3), "order": (int, 2)},
    "me_pspline": {"knots": (int, 20), "degree": (int, 3), "order": (int, 2)},
}
TERM_ARITY = {"linear": 1, "pspline": 1, "tensor": 2, "me_pspline": 1}


class FormulaError(ValueError):
    pass


@dataclass(frozen=True)
class TermSpec:
    kind: str
    variables: tuple
    options: tuple = ()  # sorted (key, value) pairs that differ from defaults

    def option(self, key):
        opts = dict(self.options)
        if key in opts:
            return opts[key]
        return TERM_OPTIONS[self.kind][key][1]

    def __str__(self):
        parts = list(self.variables) + [f"{k}={v}" for k, v in self.options]
        return f"{self.kind}({', '.join(parts)})"


_TERM_RE = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


def parse_formula(text: str) -> list:
    """Parse ``"linear(v) + pspline(x, knots=20)"`` into term specs.

    An empty string (or ``1``) means intercept only.
    """
    text = text.strip()
    if text in ("", "1"):
        return []
    terms = []
    for chunk in _split_top(text):
        m = _TERM_RE.match(chunk)
        if not m:
            raise FormulaError(f"cannot parse term {chunk.strip()!r}")
        kind, inner = m.group(1), m.group(2)
        if kind not in TERM_OPTIONS:
            raise FormulaError(
                f"unknown term type {kind!r}; allowed: {', '.join(sorted(TERM_OPTIONS))}"
            )
        variables, options = [], {}
        for arg in (a.strip() for a in inner.split(",")):
            if not arg:
                continue
            if "=" in arg:
                key, val = (s.strip() for s in arg.split("=", 1))
                if key not in TERM_OPTIONS[kind]:
                    raise FormulaError(f"{kind}() has no option {key!r}")
                typ, default = TERM_OPTIONS[kind][key]
                try:
                    val = typ(val)
                except ValueError:
                    raise FormulaError(f"option {key}={val!r} of {kind}() must be {typ.__name__}") from None
                if val != default:
                    options[key] = val
            else:
                variables.append(arg)
        if len(variables) != TERM_ARITY[kind]:
            raise FormulaError(f"{kind}() takes {TERM_ARITY[kind]} variable(s), got {len(variables)}")
        terms.append(TermSpec(kind, tuple(variables), tuple(sorted(options.items()))))
    return terms


def _split_top(text):
    depth, start = 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "+" and depth == 0:
            yield text[start:i]
            start = i + 1
    yield text[start:]


def format_formula(terms) -> str:
    return " + ".join(str(t) for t in terms) if terms else "1"


@dataclass
class MESpec:
    """Measurement-error settings shared by the single ``me_pspline`` term.

    ``sigma2``/``c_u`` give a global exchangeable covariance; leave them
    ``None`` to read per-site ``<prefix>_cov_jk`` columns instead.
    """

    sigma2: float | None = None
    c_u: float | None = None
    f: float = 1.0
    bins: int = 1000
    tau2_mu: float = 1000.0**2
    a_x: float = 0.001
    b_x: float = 0.001


@dataclass
class ModelSpec:
    family: str = "gaussian"
    mu: list = field(default_factory=list)
    sigma2: list = field(default_factory=list)
    me: MESpec = field(default_factory=MESpec)

    def formulas(self):
        return [self.mu, self.sigma2]

    def variables(self):
        out = []
        for t in self.mu + self.sigma2:
            out.extend(t.variables)
        return out

    def me_terms(self):
        return [t for t in self.mu + self.sigma2 if t.kind == "me_pspline"]


@dataclass
class Model:
    family: Family
    y: np.ndarray
    predictors: list
    block: MeasurementErrorBlock | None = None
    me_position: tuple | None = None  # (k, j) of the me_pspline term
    spec: ModelSpec | None = None
    site_labels: np.ndarray | None = None  # sorted distinct site ids, one per latent value

    @property
    def n(self):
        return self.y.shape[0]

    def blocks(self):
        """``(k, j, term)`` for every coefficient block in update order."""
        for k, pred in enumerate(self.predictors):
            for j, term in enumerate(pred.terms):
                yield k, j, term

    def loglik(self, etas) -> np.ndarray:
        return self.family.loglik_eta(self.y, etas[0], etas[1])


def replicate_columns(prefix, columns):
    """Ordered replicate columns ``<prefix>_1 .. <prefix>_M`` present in ``columns``."""
    out = []
    m = 1
    while f"{prefix}_{m}" in columns:
        out.append(f"{prefix}_{m}")
        m += 1
    return out


def covariance_columns(prefix, M):
    return [f"{prefix}_cov_{j}{k}" for j, k in upper_index_pairs(M)]


def me_inputs(prefix, data, me: MESpec, rows=slice(None)):
    """Replicates ``(n, M)`` and covariances ``(n, M, M)`` for an error-prone covariate."""
    cols = replicate_columns(prefix, data)
    if not cols:
        raise FormulaError(f"no replicate columns {prefix}_1..{prefix}_M in data")
    M = len(cols)
    X = np.column_stack([np.asarray(data[c], float) for c in cols])[rows]
    cov_cols = covariance_columns(prefix, M)
    have_cov = all(c in data for c in cov_cols)
    have_pattern = me.sigma2 is not None
    if have_cov and have_pattern:
        raise FormulaError(
            f"conflicting measurement error covariance inputs for {prefix!r}: "
            "covariance columns and a global pattern were both given"
        )
    if have_cov:
        upper = np.column_stack([np.asarray(data[c], float) for c in cov_cols])[rows]
        Sigma = covariance_from_upper(upper, M)
    elif have_pattern:
        Sigma = exchangeable_covariance(np.full(X.shape[0], me.sigma2), me.c_u or 0.0, M)
    else:
        raise FormulaError(f"no measurement error covariance given for {prefix!r}")
    return X, Sigma


def _me_block(prefix, data, me: MESpec, term: TermSpec, site):
    first = _first_rows(site) if site is not None else slice(None)
    X, Sigma = me_inputs(prefix, data, me, first)
    if site is not None:
        _, site_index = np.unique(site, return_inverse=True)
    else:
        site_index = None
    return MeasurementErrorBlock(
        X, Sigma, site=site_index, f=me.f, tau2_mu=me.tau2_mu, a_x=me.a_x, b_x=me.b_x,
        n_knots=term.option("knots"), degree=term.option("degree"), G=me.bins, name=prefix,
    )


def _first_rows(site):
    _, first = np.unique(site, return_index=True)
    return first


def build_model(spec: ModelSpec, data, response: str = "y", site=None) -> Model:
    """Assemble the predictors of ``spec`` from a column mapping ``data``.

    ``site`` optionally maps rows to measurement-error sites when several
    responses share one latent covariate value.
    """
    family = get_family(spec.family)
    if response not in data:
        raise FormulaError(f"response column {response!r} not in data")
    y = family.check_support(np.asarray(data[response], dtype=float))
    n = y.shape[0]
    me_terms = spec.me_terms()
    if len(me_terms) > 1:
        raise FormulaError("at most one me_pspline term per model is supported")
    block = None
    me_position = None
    predictors = []
    for k, formula in enumerate(spec.formulas()):
        terms = [InterceptTerm(n)]
        for t in formula:
            missing = [v for v in t.variables if t.kind != "me_pspline" and v not in data]
            if missing:
                raise FormulaError(f"variable(s) {missing} used in {t} not found in data")
            if t.kind == "linear":
                terms.append(LinearTerm.from_column(t.variables[0], data[t.variables[0]], t.option("prior")))
            elif t.kind == "pspline":
                x = np.asarray(data[t.variables[0]], float)
                basis = SplineBasis.from_data(x, t.option("knots"), t.option("degree"))
                terms.append(PSplineTerm(t.variables[0], x, basis, t.option("order")))
            elif t.kind == "tensor":
                xv, yv = t.variables
                sx, sy = np.asarray(data[xv], float), np.asarray(data[yv], float)
                bx = SplineBasis.from_data(sx, t.option("knots_x"), t.option("degree"))
                by = SplineBasis.from_data(sy, t.option("knots_y"), t.option("degree"))
                terms.append(TensorTerm(xv, yv, sx, sy, bx, by, t.option("order")))
            elif t.kind == "me_pspline":
                block = _me_block(t.variables[0], data, spec.me, t, site)
                if block.site.shape[0] != n:
                    raise FormulaError("site mapping does not match the number of observations")
                terms.append(MEPSplineTerm(t.variables[0], block, t.option("order")))
                me_position = (k, len(terms) - 1)
        predictors.append(PredictorSpec(k, terms))
    labels = np.unique(site) if site is not None and block is not None else None
    return Model(family, y, predictors, block, me_position, spec, labels)
